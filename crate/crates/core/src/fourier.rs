//! Modified characteristic function of the log spot-spread ratio and caplet
//! pricing by damped Fourier inversion, either by adaptive quadrature or on
//! the Carr-Madan FFT grid.
//!
//! For a tenor δ and expiry T the state variable is
//! `𝒳 = ln(S^δ(T,T)/B(T,T+δ))` and
//! `Φ(ζ) = B(t,T+δ) E^{T+δ}[e^{iζ𝒳} | x_t]`. Every factor enters through one
//! complex Riccati solve whose initial value depends on the tenor but not on
//! the expiry, so a single solve per frequency serves a whole strip of
//! expiries.

use crate::error::{Error, Result};
use crate::model::MultiCurveModel;
use crate::par;
use crate::quad::{self, QuadOptions};
use crate::riccati::{self, SolverOptions};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Characteristic functions for one tenor, one valuation date and state, and
/// a set of expiries.
#[derive(Clone, Debug)]
pub struct CharFunction<'a> {
    model: &'a MultiCurveModel,
    pub tenor_index: usize,
    pub delta: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub expiries: Vec<f64>,
    taus: Vec<f64>,
    /// `-(Λ(T)-Λ(t))`, `𝒜₀(T,T+δ)` and `c_i(T)` per expiry
    shift: Vec<f64>,
    a0_next: Vec<f64>,
    c: Vec<f64>,
    b0: Vec<f64>,
    gamma: Vec<f64>,
    active: Vec<bool>,
    strip_upper: f64,
    pub ode: SolverOptions,
}

impl<'a> CharFunction<'a> {
    pub fn new(model: &'a MultiCurveModel, tenor_index: usize, t: f64, x: &[f64], expiries: &[f64]) -> Result<Self> {
        let delta = model.tenor(tenor_index)?;
        if x.len() != model.factors() || x.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Input("state must have one non-negative entry per factor".into()));
        }
        if expiries.is_empty() {
            return Err(Error::Input("no expiries".into()));
        }
        if expiries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("expiries must be strictly increasing".into()));
        }
        if !(expiries[0] >= t) {
            return Err(Error::Domain(format!("expiry {} before valuation time {t}", expiries[0])));
        }
        let m = model.factors();
        let mut shift = Vec::new();
        let mut a0_next = Vec::new();
        let mut c = Vec::new();
        let lt = model.lambda_integral(t)?;
        for &big_t in expiries {
            shift.push(-(model.lambda_integral(big_t)? - lt));
            a0_next.push(model.a0(big_t, big_t + delta)?);
            c.push(model.c(tenor_index, big_t)?);
        }
        let b0 = (0..m).map(|j| model.b0(j, delta)).collect::<Result<Vec<_>>>()?;
        let gamma = (0..m).map(|j| if j <= tenor_index { 1.0 } else { 0.0 }).collect();
        let active = (0..m).map(|j| x[j] != 0.0 || model.dbeta[j] != 0.0).collect();
        let te = model.mech.theta_eff();
        let v1 = -b0[0];
        let strip_upper = if te.is_finite() { (te + v1) / (1.0 + v1) } else { f64::INFINITY };
        Ok(CharFunction {
            model,
            tenor_index,
            delta,
            t,
            x: x.to_vec(),
            expiries: expiries.to_vec(),
            taus: expiries.iter().map(|e| e - t).collect(),
            shift,
            a0_next,
            c,
            b0,
            gamma,
            active,
            strip_upper,
            ode: SolverOptions::default(),
        })
    }

    /// Single expiry from the initial state.
    pub fn at_origin(model: &'a MultiCurveModel, tenor_index: usize, expiry: f64) -> Result<Self> {
        Self::new(model, tenor_index, 0.0, &model.x0.clone(), &[expiry])
    }

    pub fn with_tolerance(mut self, rel_tol: f64) -> Self {
        self.ode = SolverOptions::with_rel_tol(rel_tol);
        self
    }

    pub fn model(&self) -> &MultiCurveModel {
        self.model
    }

    /// Supremum of the sufficient integrability interval: `E[e^{u𝒳}] < ∞`
    /// for every `u` below it.
    pub fn strip_upper(&self) -> f64 {
        self.strip_upper
    }

    /// Whether `1 + ε` lies strictly inside the sufficient strip.
    pub fn damping_admissible(&self, eps: f64) -> bool {
        1.0 + eps < self.strip_upper
    }

    /// All factors are frozen at zero, so `𝒳` is deterministic.
    pub fn is_deterministic(&self) -> bool {
        !self.active.iter().any(|&a| a)
    }

    /// `B(t, T+δ)` per expiry.
    pub fn settlement_bonds(&self) -> Result<Vec<f64>> {
        self.expiries
            .iter()
            .map(|&e| self.model.bond_price(self.t, e + self.delta, &self.x))
            .collect()
    }

    /// `Φ_T(ζ)` for every expiry.
    pub fn eval(&self, zeta: Complex64) -> Result<Vec<Complex64>> {
        if !zeta.re.is_finite() || !zeta.im.is_finite() {
            return Err(Error::Domain(format!("non-finite frequency {zeta}")));
        }
        let u = -zeta.im;
        if !(u < self.strip_upper) {
            return Err(Error::Strip { epsilon: u - 1.0, bound: self.strip_upper - 1.0 });
        }
        let iz = I * zeta;
        let mut out: Vec<Complex64> = (0..self.taus.len())
            .map(|k| Complex64::new(self.shift[k], 0.0) + (1.0 - iz) * self.a0_next[k] + iz * self.c[k])
            .collect();
        let lb = self.model.mech.domain().lower_bound;
        for j in 0..self.b0.len() {
            if !self.active[j] {
                continue;
            }
            let p = (iz - 1.0) * self.b0[j] - iz * self.gamma[j];
            if p.re < lb {
                return Err(Error::Strip { epsilon: u - 1.0, bound: self.strip_upper - 1.0 });
            }
            let vals = riccati::solve_at(&self.model.mech, p, self.model.lambda[j], &self.taus, &self.ode)?;
            for (k, (v, int)) in vals.into_iter().enumerate() {
                out[k] -= int * self.model.dbeta[j] + v * self.x[j];
            }
        }
        Ok(out.into_iter().map(|e| e.exp()).collect())
    }

    /// `Φ(ζ)` for a single-expiry context.
    pub fn eval_one(&self, zeta: Complex64) -> Result<Complex64> {
        Ok(self.eval(zeta)?[0])
    }

    /// Forward characteristic function `Ψ(u) = Φ(u)/B(t,T+δ)` per expiry.
    pub fn forward_cf(&self, u: Complex64) -> Result<Vec<Complex64>> {
        let b = self.settlement_bonds()?;
        Ok(self.eval(u)?.into_iter().zip(b).map(|(p, b)| p / b).collect())
    }
}

/// Residue term of the damped representation.
pub fn residue(eps: f64, k_bar: f64, phi_minus_i: f64, phi_zero: f64) -> f64 {
    if eps < -1.0 {
        phi_minus_i - k_bar * phi_zero
    } else if eps == -1.0 {
        phi_minus_i - 0.5 * k_bar * phi_zero
    } else if eps < 0.0 {
        phi_minus_i
    } else if eps == 0.0 {
        0.5 * phi_minus_i
    } else {
        0.0
    }
}

/// Default damping: 0.5 when admissible, otherwise -0.5.
pub fn default_damping(cf: &CharFunction) -> f64 {
    if cf.damping_admissible(0.5) {
        0.5
    } else {
        -0.5
    }
}

/// `e^{-iζk} Φ(ζ - i) / (-ζ(ζ - i))` at `ζ = u - iε`, given `Φ(ζ - i)`.
#[inline]
fn kernel(u: f64, eps: f64, log_k: f64, phi_shifted: Complex64) -> f64 {
    let zeta = Complex64::new(u, -eps);
    let den = -zeta * (zeta - I);
    ((-I * zeta * log_k).exp() * phi_shifted / den).re
}

/// Options for the quadrature pricer.
#[derive(Clone, Copy, Debug)]
pub struct QuadPricing {
    pub abs_tol: f64,
    /// integration stops once the integrand envelope drops below this
    pub tail_tol: f64,
    pub max_u: f64,
}

impl Default for QuadPricing {
    fn default() -> Self {
        QuadPricing { abs_tol: 1e-12, tail_tol: 1e-14, max_u: 1e6 }
    }
}

fn anchors(cf: &CharFunction) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = cf.eval(Complex64::new(0.0, -1.0))?.iter().map(|z| z.re).collect();
    let b = cf.eval(Complex64::new(0.0, 0.0))?.iter().map(|z| z.re).collect();
    Ok((a, b))
}

fn check_strike(delta: f64, strike: f64) -> Result<f64> {
    let k_bar = 1.0 + delta * strike;
    if !(k_bar > 0.0) || !k_bar.is_finite() {
        return Err(Error::Domain(format!("1 + δK must be positive, got {k_bar}")));
    }
    Ok(k_bar)
}

/// Caplet price (notional 1, payoff `δ(L-K)⁺` at `T+δ`) by adaptive
/// quadrature of the damped inversion integral. Single-expiry contexts only
/// use the first expiry.
pub fn caplet_price_fourier(cf: &CharFunction, strike: f64, eps: f64) -> Result<f64> {
    caplet_price_fourier_with(cf, strike, eps, QuadPricing::default())
}

pub fn caplet_price_fourier_with(cf: &CharFunction, strike: f64, eps: f64, opts: QuadPricing) -> Result<f64> {
    let k_bar = check_strike(cf.delta, strike)?;
    if !cf.damping_admissible(eps) {
        return Err(Error::Strip { epsilon: eps, bound: cf.strip_upper() - 1.0 });
    }
    let (phi_mi, phi_0) = anchors(cf)?;
    if cf.is_deterministic() {
        return Ok((phi_mi[0] - k_bar * phi_0[0]).max(0.0));
    }
    let log_k = k_bar.ln();
    let total = integrate_spectrum(
        |u| Ok(kernel(u, eps, log_k, cf.eval(Complex64::new(u, -eps - 1.0))?[0])),
        // the integrand is O(|Φ|/u²), so the remaining tail is below |Φ(b)|/b
        |b| Ok(cf.eval(Complex64::new(b, -eps - 1.0))?[0].norm() / b),
        opts,
    )?;
    Ok(residue(eps, k_bar, phi_mi[0], phi_0[0]) + total / PI)
}

/// `∫₀^∞ f(u) du` over panels `[0,1], [1,2], [2,4], ...`, each integrated
/// adaptively, stopping after two consecutive panels whose contribution and
/// tail bound `tail(b)` are both below `opts.tail_tol`.
pub(crate) fn integrate_spectrum<F, G>(f: F, mut tail: G, opts: QuadPricing) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
    G: FnMut(f64) -> Result<f64>,
{
    let err: RefCell<Option<Error>> = RefCell::new(None);
    let mut integrand = |u: f64| -> f64 {
        if err.borrow().is_some() {
            return 0.0;
        }
        match f(u) {
            Ok(v) => v,
            Err(e) => {
                *err.borrow_mut() = Some(e);
                0.0
            }
        }
    };
    let qopts = QuadOptions { abs_tol: opts.abs_tol, rel_tol: 1e-12, max_panels: 4000 };
    let mut total = 0.0;
    let mut a = 0.0;
    let mut b = 1.0;
    let mut quiet = 0;
    while a < opts.max_u {
        let part = quad::integrate(&mut integrand, a, b, qopts)?;
        if let Some(e) = err.borrow_mut().take() {
            return Err(e);
        }
        total += part;
        if part.abs() < opts.tail_tol && tail(b)? < opts.tail_tol {
            quiet += 1;
            if quiet >= 2 {
                break;
            }
        } else {
            quiet = 0;
        }
        a = b;
        b *= 2.0;
    }
    Ok(total)
}

/// Carr-Madan grid settings.
#[derive(Clone, Copy, Debug)]
pub struct FftConfig {
    pub n: usize,
    pub mesh: f64,
    /// frequencies beyond the first block where the damped integrand
    /// envelope `|Φ|/|ζ(ζ-i)|` stays below this are dropped
    pub cutoff: f64,
}

impl Default for FftConfig {
    fn default() -> Self {
        FftConfig { n: 32768, mesh: 0.05, cutoff: 1e-13 }
    }
}

/// Composite Gauss-Legendre frequency grid: panels double in width up to
/// `max_panel`, then stay at that width until the tail bound
/// `|Φ(u)|/u` falls below `cutoff`.
#[derive(Clone, Copy, Debug)]
pub struct GaussConfig {
    pub order: usize,
    pub max_panel: f64,
    pub cutoff: f64,
    pub max_u: f64,
}

impl Default for GaussConfig {
    fn default() -> Self {
        GaussConfig { order: 32, max_panel: 128.0, cutoff: 1e-13, max_u: 1e6 }
    }
}

/// Samples of the damped transform on a frequency grid with quadrature
/// weights, shared by every strike and expiry of one characteristic
/// function.
#[derive(Clone, Debug)]
pub struct SpectralStrip {
    pub eps: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `Φ(u_k - i(1+ε))` per node (rows) and expiry (columns)
    samples: Vec<Vec<Complex64>>,
    phi_minus_i: Vec<f64>,
    phi_zero: Vec<f64>,
    deterministic: bool,
    delta: f64,
    fft: Option<FftConfig>,
}

/// Simpson weights `(3 + (-1)^{k+1} - δ_{k0}) / 3`.
#[inline]
fn simpson(k: usize) -> f64 {
    let s = if k % 2 == 0 { 2.0 } else { 4.0 };
    (s - if k == 0 { 1.0 } else { 0.0 }) / 3.0
}

fn eval_block(cf: &CharFunction, eps: f64, us: &[f64]) -> Result<Vec<Vec<Complex64>>> {
    par::map_slice(us, |&u| cf.eval(Complex64::new(u, -eps - 1.0))).into_iter().collect()
}

fn envelope(u: f64, eps: f64, row: &[Complex64]) -> f64 {
    let zeta = Complex64::new(u, -eps);
    let den = (zeta * (zeta - I)).norm();
    row.iter().map(|p| p.norm()).fold(0.0, f64::max) / den
}

impl SpectralStrip {
    fn start(cf: &CharFunction, eps: f64) -> Result<(Vec<f64>, Vec<f64>, bool)> {
        if !cf.damping_admissible(eps) {
            return Err(Error::Strip { epsilon: eps, bound: cf.strip_upper() - 1.0 });
        }
        let (a, b) = anchors(cf)?;
        Ok((a, b, cf.is_deterministic()))
    }

    /// Carr-Madan grid `u_k = k·mesh` with Simpson weights.
    pub fn fft(cf: &CharFunction, eps: f64, config: FftConfig) -> Result<Self> {
        if config.n < 2 || !config.n.is_power_of_two() {
            return Err(Error::Input(format!("FFT size must be a power of two >= 2, got {}", config.n)));
        }
        if !(config.mesh > 0.0) {
            return Err(Error::Input("FFT mesh must be positive".into()));
        }
        let (phi_minus_i, phi_zero, deterministic) = Self::start(cf, eps)?;
        let mut nodes = Vec::new();
        let mut samples = Vec::new();
        if !deterministic {
            let block = 256.min(config.n);
            let mut start = 0;
            while start < config.n {
                let end = (start + block).min(config.n);
                let us: Vec<f64> = (start..end).map(|k| k as f64 * config.mesh).collect();
                let rows = eval_block(cf, eps, &us)?;
                let negligible = us.iter().zip(&rows).all(|(&u, r)| envelope(u, eps, r) <= config.cutoff);
                nodes.extend_from_slice(&us);
                samples.extend(rows);
                if negligible {
                    break;
                }
                start = end;
            }
        }
        let weights = (0..nodes.len()).map(|k| simpson(k) * config.mesh).collect();
        Ok(SpectralStrip {
            eps,
            nodes,
            weights,
            samples,
            phi_minus_i,
            phi_zero,
            deterministic,
            delta: cf.delta,
            fft: Some(config),
        })
    }

    /// Composite Gauss-Legendre grid.
    pub fn gauss(cf: &CharFunction, eps: f64, config: GaussConfig) -> Result<Self> {
        let (phi_minus_i, phi_zero, deterministic) = Self::start(cf, eps)?;
        let (gx, gw) = crate::special::gl_rule(config.order);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut samples = Vec::new();
        if !deterministic {
            let (mut a, mut w) = (0.0, 1.0);
            loop {
                let b = a + w;
                let us: Vec<f64> = gx.iter().map(|x| a + 0.5 * w * (x + 1.0)).collect();
                let rows = eval_block(cf, eps, &us)?;
                nodes.extend_from_slice(&us);
                weights.extend(gw.iter().map(|g| 0.5 * w * g));
                samples.extend(rows);
                let end = cf.eval(Complex64::new(b, -eps - 1.0))?;
                if envelope(b, eps, &end) * b <= config.cutoff || b >= config.max_u {
                    break;
                }
                a = b;
                w = (2.0 * w).min(config.max_panel);
            }
        }
        Ok(SpectralStrip {
            eps,
            nodes,
            weights,
            samples,
            phi_minus_i,
            phi_zero,
            deterministic,
            delta: cf.delta,
            fft: None,
        })
    }

    /// Frequencies actually evaluated.
    pub fn frequencies_used(&self) -> usize {
        self.nodes.len()
    }

    /// Log-strike spacing of the FFT output grid.
    pub fn log_strike_step(&self) -> Option<f64> {
        self.fft.map(|c| 2.0 * PI / (c.n as f64 * c.mesh))
    }

    /// Prices on the FFT log-strike grid `k_m = -b + m·Δk` (in `ln K̄`) for
    /// expiry `e`. Returns `(ln K̄ grid, prices)`.
    pub fn grid(&self, e: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let config = self.fft.ok_or_else(|| Error::Input("strike grid needs an FFT strip".into()))?;
        let n = config.n;
        let dk = 2.0 * PI / (n as f64 * config.mesh);
        let b = 0.5 * n as f64 * dk;
        let ks: Vec<f64> = (0..n).map(|m| -b + m as f64 * dk).collect();
        if self.deterministic {
            let p = ks.iter().map(|&k| (self.phi_minus_i[e] - k.exp() * self.phi_zero[e]).max(0.0)).collect();
            return Ok((ks, p));
        }
        let mut buf: Vec<Complex64> = (0..n)
            .map(|k| {
                let Some(row) = self.samples.get(k) else {
                    return Complex64::new(0.0, 0.0);
                };
                let u = self.nodes[k];
                let zeta = Complex64::new(u, -self.eps);
                // e^{iub} moves the grid origin to -b; the damping factor
                // e^{-εk} is applied after the transform
                (I * u * b).exp() * row[e] / (-zeta * (zeta - I)) * self.weights[k]
            })
            .collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut buf);
        let prices = ks
            .iter()
            .zip(buf)
            .map(|(&k, z)| {
                residue(self.eps, k.exp(), self.phi_minus_i[e], self.phi_zero[e]) + (-self.eps * k).exp() * z.re / PI
            })
            .collect();
        Ok((ks, prices))
    }

    /// Price at an arbitrary strike from the same discretized integral (for
    /// the FFT grid this is the exact value of the transform's trigonometric
    /// sum at that strike, with no interpolation).
    pub fn price(&self, e: usize, strike: f64) -> Result<f64> {
        let k_bar = check_strike(self.delta, strike)?;
        if e >= self.phi_zero.len() {
            return Err(Error::Input(format!("expiry index {e} out of range")));
        }
        if self.deterministic {
            return Ok((self.phi_minus_i[e] - k_bar * self.phi_zero[e]).max(0.0));
        }
        let log_k = k_bar.ln();
        let terms: Vec<f64> = self
            .samples
            .iter()
            .enumerate()
            .map(|(k, row)| self.weights[k] * kernel(self.nodes[k], self.eps, log_k, row[e]))
            .collect();
        Ok(residue(self.eps, k_bar, self.phi_minus_i[e], self.phi_zero[e]) + par::pairwise_sum(&terms) / PI)
    }

    /// Prices for every strike; `out[s]`.
    pub fn prices(&self, e: usize, strikes: &[f64]) -> Result<Vec<f64>> {
        par::map_slice(strikes, |&k| self.price(e, k)).into_iter().collect()
    }
}

/// Prices for many strikes and the expiries of `cf` from one FFT frequency
/// grid; `out[e][s]` is expiry `e`, strike `s`.
pub fn caplet_strip_fft(cf: &CharFunction, strikes: &[f64], eps: f64, config: FftConfig) -> Result<Vec<Vec<f64>>> {
    let strip = SpectralStrip::fft(cf, eps, config)?;
    (0..cf.expiries.len()).map(|e| strip.prices(e, strikes)).collect()
}
