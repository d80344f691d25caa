//! Stationary Voronoi quantization of `e^𝒳` under the settlement forward
//! measure, driven entirely by the forward characteristic function.
//!
//! The master-equation gradient of the `L^p` distortion splits every cell
//! into the part below and above its point. Interior halves are incomplete
//! Beta integrals against the spectral density; the two unbounded halves
//! (below `x₁` and above `x_N`) are evaluated on contours shifted off the
//! real axis, where the Mellin transform of the power payoff is a complete
//! Beta function.

use crate::error::{Error, Result};
use crate::fourier::{integrate_spectrum, CharFunction, QuadPricing};
use crate::par;
use crate::special::{beta_c, gl_rule};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Numerical settings for the quantizer.
#[derive(Clone, Copy, Debug)]
pub struct QuantConfig {
    pub p_norm: f64,
    /// Gauss-Legendre order per frequency panel
    pub order: usize,
    pub max_panel: f64,
    /// largest `|ln x - ln m|` the frequency grid must resolve; panels are
    /// narrowed so `e^{-iu ln x}` stays well sampled out to it
    pub span: f64,
    /// frequency grid ends once every cached transform is below this
    pub cutoff: f64,
    pub max_u: f64,
    /// Gauss-Legendre order per sub-panel of a Beta integral
    pub beta_order: usize,
    /// shift of the contour used for the lowest cell
    pub eps_lower: f64,
    pub max_iter: usize,
    /// residual bound relative to `p·m^{p-1}·sd(e^𝒳)`
    pub tol: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            p_norm: 2.0,
            order: 32,
            max_panel: 64.0,
            span: 0.5,
            cutoff: 1e-13,
            max_u: 1e6,
            beta_order: 64,
            eps_lower: 0.5,
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

/// A stationary quantizer with companion weights.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantGrid {
    pub points: Vec<f64>,
    /// Voronoi edges, `mid_minus[0] = 0` and `mid_plus[N-1] = ∞`
    pub mid_minus: Vec<f64>,
    pub mid_plus: Vec<f64>,
    pub weights: Vec<f64>,
    pub p_norm: f64,
    pub delta: f64,
    /// `B(t, T+δ)`
    pub bond: f64,
    pub iterations: usize,
    /// final max-norm of the master-equation residuals
    pub residual: f64,
}

impl QuantGrid {
    fn assemble(points: Vec<f64>, weights: Vec<f64>, law: &ForwardLaw, iterations: usize, residual: f64) -> Self {
        let (mid_minus, mid_plus) = edges(&points);
        QuantGrid { points, mid_minus, mid_plus, weights, p_norm: law.p, delta: law.delta, bond: law.bond, iterations, residual }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `Σ xⱼ wⱼ`, the quantized forward `1 + δL`.
    pub fn mean(&self) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    /// Checks ordering, positivity, interleaving edges and weight mass.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n == 0 || self.weights.len() != n || self.mid_minus.len() != n || self.mid_plus.len() != n {
            return Err(Error::Input("inconsistent quantization grid".into()));
        }
        if !(self.points[0] > 0.0) || self.points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("grid points must be positive and strictly increasing".into()));
        }
        for j in 0..n {
            if !(self.mid_minus[j] < self.points[j] && self.points[j] < self.mid_plus[j]) {
                return Err(Error::Input(format!("edges do not bracket point {j}")));
            }
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Input("negative weight".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Input(format!("weights sum to {total}")));
        }
        Ok(())
    }
}

fn edges(points: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = points.len();
    let mut lo = vec![0.0; n];
    let mut hi = vec![f64::INFINITY; n];
    for j in 1..n {
        let m = 0.5 * (points[j - 1] + points[j]);
        lo[j] = m;
        hi[j - 1] = m;
    }
    (lo, hi)
}

/// `β̄(x, a, b) = ∫ₓ¹ t^{a-1}(1-t)^{b-1} dt` for `x ∈ (0,1)`, complex `a`
/// and `b ≥ 1`, by composite 64-point Gauss-Legendre with panel doubling
/// until two successive values agree to 1e-10 relative.
pub fn beta_bar(x: f64, a: Complex64, b: f64) -> Result<Complex64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("incomplete Beta needs x in (0,1), got {x}")));
    }
    let f = |t: f64| ((a - 1.0) * t.ln()).exp() * (1.0 - t).powf(b - 1.0);
    let mut prev = composite_gl(&f, x, 1.0, 1);
    let mut panels = 2;
    while panels <= 4096 {
        let next = composite_gl(&f, x, 1.0, panels);
        if (next - prev).norm() <= 1e-10 * next.norm().max(1e-300) {
            return Ok(next);
        }
        prev = next;
        panels *= 2;
    }
    Err(Error::Quadrature(format!("incomplete Beta at x = {x}, a = {a} did not settle")))
}

fn integer_order(p: f64) -> Option<usize> {
    (p.fract() == 0.0 && p <= 16.0).then_some(p as usize)
}

/// `e^w - 1` without cancellation for small complex `w`.
fn expm1_c(w: Complex64) -> Complex64 {
    let (s, c) = w.im.sin_cos();
    let h = (0.5 * w.im).sin();
    let em = w.re.exp_m1();
    Complex64::new(em * c - 2.0 * h * h, (em + 1.0) * s)
}

/// `β̄(r, a, p)` for integer `p ≥ 1` from the binomial expansion of
/// `(1-t)^{p-1}`: `Σ_k C(p-1,k)(-1)^k (1 - r^{a+k})/(a+k)`.
fn beta_bar_binomial(r: f64, a: Complex64, p: usize) -> Complex64 {
    let lr = r.ln();
    let mut s = Complex64::new(0.0, 0.0);
    let mut binom = 1.0;
    for k in 0..p {
        let z = a + k as f64;
        let term = if z.norm() * lr.abs() < 1e-300 { Complex64::new(-lr, 0.0) } else { -expm1_c(z * lr) / z };
        s += term * binom;
        binom *= -((p - 1 - k) as f64) / (k + 1) as f64;
    }
    s
}

fn composite_gl(f: &impl Fn(f64) -> Complex64, a: f64, b: f64, panels: usize) -> Complex64 {
    let (gx, gw) = gl_rule(64);
    let h = (b - a) / panels as f64;
    let mut s = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in gx.iter().zip(gw) {
            s += f(lo + 0.5 * h * (x + 1.0)) * (0.5 * h * w);
        }
    }
    s
}

fn single_expiry(cf: &CharFunction) -> Result<()> {
    if cf.expiries.len() != 1 {
        return Err(Error::Input("quantization works on a single-expiry characteristic function".into()));
    }
    Ok(())
}

/// `Q^{T+δ}(e^𝒳 ≤ x)` by Gil-Pelaez inversion of the forward characteristic
/// function, with adaptive quadrature. Points deep in either tail, where an
/// exponential-moment bound already pins the answer to within 1e-13, are
/// returned as 0 or 1 without inversion.
pub fn forward_cdf(cf: &CharFunction, x: f64) -> Result<f64> {
    single_expiry(cf)?;
    if !(x > 0.0) {
        return Err(Error::Domain(format!("CDF argument must be positive, got {x}")));
    }
    let bond = cf.eval_one(Complex64::new(0.0, 0.0))?.re;
    let lx = x.ln();
    if cf.is_deterministic() {
        let atom = cf.eval_one(Complex64::new(0.0, -1.0))?.re / bond;
        return Ok(if x >= atom { 1.0 } else { 0.0 });
    }
    if !lx.is_finite() {
        return Ok(if lx > 0.0 { 1.0 } else { 0.0 });
    }
    // P(Y ≤ x) ≤ x^ε E[Y^{-ε}] and P(Y ≥ x) ≤ x^{-s} E[Y^s]
    let bound = |s: f64| -> Result<f64> {
        let m = cf.eval_one(Complex64::new(0.0, -s))?.re / bond;
        Ok(m.ln() - s * lx)
    };
    let floor = (1e-13f64).ln();
    if lx < 0.0 || x < 1.0 {
        for eps in [0.5, 1.0, 2.0, 4.0, 8.0] {
            if bound(-eps)? < floor {
                return Ok(0.0);
            }
        }
    }
    let top = cf.strip_upper();
    for frac in [0.5, 0.9, 0.99] {
        let s = if top.is_finite() { frac * top } else { 8.0 * frac };
        if bound(s)? < floor {
            return Ok(1.0);
        }
    }
    let psi = |u: f64| -> Result<Complex64> { Ok(cf.eval_one(Complex64::new(u, 0.0))? / bond) };
    let integral = integrate_spectrum(
        |u| {
            let z = psi(u)? * Complex64::from_polar(1.0, -u * lx);
            Ok(z.im / u)
        },
        |b| Ok(psi(b)?.norm() / b),
        QuadPricing { abs_tol: 1e-12, tail_tol: 1e-14, max_u: 1e6 },
    )?;
    Ok((0.5 - integral / PI).clamp(0.0, 1.0))
}

/// The forward law of `e^𝒳` sampled on a fixed composite Gauss-Legendre
/// frequency grid. Built once per (tenor, expiry) and shared by every
/// gradient and weight evaluation of the grid search.
#[derive(Clone, Debug)]
pub struct ForwardLaw {
    pub p: f64,
    pub delta: f64,
    pub bond: f64,
    /// `E^{T+δ}[e^𝒳] = 1 + δL(t,T,δ)`
    pub mean: f64,
    /// standard deviation of `𝒳` from the second cumulant
    pub log_sd: f64,
    /// the point mass when all factors are frozen
    pub atom: Option<f64>,
    eps_lower: f64,
    eps_upper: f64,
    resolved_span: f64,
    beta_order: usize,
    centre: f64,
    u: Vec<f64>,
    w: Vec<f64>,
    /// `Ψ(u)e^{-ium}`
    psi: Vec<Complex64>,
    /// `Ψ(u)e^{-ium}/(iu)`
    cdf_kernel: Vec<Complex64>,
    /// `Ψ(u+iε_L) B(ε_L-iu, p) e^{-ium}`
    lower: Vec<Complex64>,
    /// `Ψ(u-iε_U) B(1-p+ε_U+iu, p) e^{-ium}`
    upper: Vec<Complex64>,
}

impl ForwardLaw {
    pub fn new(cf: &CharFunction, config: QuantConfig) -> Result<Self> {
        single_expiry(cf)?;
        let p = config.p_norm;
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::Input(format!("p_norm must be >= 1, got {p}")));
        }
        if !(config.eps_lower > 0.0) {
            return Err(Error::Input("lower contour shift must be positive".into()));
        }
        let bond = cf.eval_one(Complex64::new(0.0, 0.0))?.re;
        let mean = cf.eval_one(Complex64::new(0.0, -1.0))?.re / bond;
        let mut law = ForwardLaw {
            p,
            delta: cf.delta,
            bond,
            mean,
            log_sd: 0.0,
            atom: None,
            eps_lower: config.eps_lower,
            eps_upper: 0.0,
            resolved_span: f64::INFINITY,
            beta_order: config.beta_order,
            centre: mean.ln(),
            u: Vec::new(),
            w: Vec::new(),
            psi: Vec::new(),
            cdf_kernel: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        if cf.is_deterministic() {
            law.atom = Some(mean);
            return Ok(law);
        }
        let top = cf.strip_upper();
        if !(top > p) {
            return Err(Error::Input(format!(
                "L^{p} distortion is infinite: e^X only has moments below order {top:.4}; choose p_norm < {top:.4}"
            )));
        }
        law.eps_upper = if top.is_finite() { 0.5 * (p - 1.0 + top) } else { p };
        law.log_sd = log_sd(cf, bond)?;

        let (gx, gw) = gl_rule(config.order);
        // about 1.25 radians of e^{-iu ln x} per Gauss node at the span
        let max_panel = config.max_panel.min(1.25 * config.order as f64 / config.span.max(1e-6));
        law.resolved_span = 1.25 * config.order as f64 / max_panel;
        let m = law.centre;
        let (el, eu) = (law.eps_lower, law.eps_upper);
        let sample = |u: f64| -> Result<[Complex64; 3]> {
            let rot = Complex64::from_polar(1.0, -u * m);
            let a = cf.eval_one(Complex64::new(u, 0.0))? / bond * rot;
            let lo = cf.eval_one(Complex64::new(u, el))? / bond * beta_c(Complex64::new(el, -u), Complex64::new(p, 0.0)) * rot;
            let hi = cf.eval_one(Complex64::new(u, -eu))? / bond
                * beta_c(Complex64::new(1.0 - p + eu, u), Complex64::new(p, 0.0))
                * rot;
            Ok([a, lo, hi])
        };
        // the upper Beta factor has a pole at distance ε_U-(p-1) from the
        // real axis, so the first panels resolve that scale
        let first = (0.5 * (eu - p + 1.0)).min(0.5 * el).min(1.0);
        let (mut a, mut width) = (0.0, first);
        loop {
            let b = a + width;
            let us: Vec<f64> = gx.iter().map(|x| a + 0.5 * width * (x + 1.0)).collect();
            let rows = par::map_slice(&us, |&u| sample(u)).into_iter().collect::<Result<Vec<_>>>()?;
            for (k, r) in rows.iter().enumerate() {
                law.u.push(us[k]);
                law.w.push(0.5 * width * gw[k]);
                law.psi.push(r[0]);
                law.cdf_kernel.push(r[0] / Complex64::new(0.0, us[k]));
                law.lower.push(r[1]);
                law.upper.push(r[2]);
            }
            let end = sample(b)?;
            if end.iter().all(|z| z.norm() <= config.cutoff) || b >= config.max_u {
                break;
            }
            a = b;
            width = (2.0 * width).min(max_panel);
        }
        Ok(law)
    }

    /// Largest `|ln x - ln m|` at which the cached grid is trusted.
    pub fn resolved_span(&self) -> f64 {
        self.resolved_span
    }

    fn covers(&self, points: &[f64]) -> bool {
        let (lo, _) = edges(points);
        let far = |x: f64| (x.ln() - self.centre).abs() <= self.resolved_span;
        points.iter().all(|&x| far(x)) && lo[1..].iter().all(|&x| far(x))
    }

    /// Number of cached frequencies.
    pub fn frequencies(&self) -> usize {
        self.u.len()
    }

    /// `Σ w_n Re[c_n e^{-iu_n(ℓ-m)}]`
    #[inline]
    fn spectral(&self, c: &[Complex64], l: f64) -> f64 {
        let d = l - self.centre;
        let mut s = 0.0;
        for n in 0..self.u.len() {
            let (sn, cs) = (self.u[n] * d).sin_cos();
            s += self.w[n] * (c[n].re * cs + c[n].im * sn);
        }
        s
    }

    /// `Σ w_n Re[ψ_n e^{-iu_n(ℓ-m)} k(u_n)]`
    fn spectral_with(&self, l: f64, k: impl Fn(f64) -> Complex64) -> f64 {
        let d = l - self.centre;
        let mut s = 0.0;
        for n in 0..self.u.len() {
            let z = self.psi[n] * Complex64::from_polar(1.0, -self.u[n] * d) * k(self.u[n]);
            s += self.w[n] * z.re;
        }
        s
    }

    /// π times the density of `𝒳` at `ℓ`.
    fn density_pi(&self, l: f64) -> f64 {
        self.spectral(&self.psi, l)
    }

    /// `Q(e^𝒳 ≤ x)` on the cached grid, clamped to `[0, 1]`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        if let Some(a) = self.atom {
            return if x >= a { 1.0 } else { 0.0 };
        }
        (0.5 - self.spectral(&self.cdf_kernel, x.ln()) / PI).clamp(0.0, 1.0)
    }

    /// CDF at non-decreasing points, made monotone by a running maximum.
    pub fn cdf_monotone(&self, xs: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = par::map_slice(xs, |&x| self.cdf(x));
        for k in 1..out.len() {
            if out[k] < out[k - 1] {
                out[k] = out[k - 1];
            }
        }
        out
    }

    /// Companion weights `F(xⱼ⁺) - F(xⱼ⁻)`.
    pub fn weights(&self, points: &[f64]) -> Vec<f64> {
        let n = points.len();
        if let Some(a) = self.atom {
            let (lo, hi) = edges(points);
            return (0..n).map(|j| if lo[j] <= a && a < hi[j] { 1.0 } else { 0.0 }).collect();
        }
        let (_, hi) = edges(points);
        let mut f = vec![0.0];
        f.extend(self.cdf_monotone(&hi[..n - 1]));
        f.push(1.0);
        (0..n).map(|j| (f[j + 1] - f[j]).max(0.0)).collect()
    }

    /// `E[(x - Y)^{p-1}; a < Y < x]`, with `a = 0` on the shifted contour.
    fn lower_half(&self, a: f64, x: f64) -> f64 {
        let p = self.p;
        if a <= 0.0 {
            return x.powf(p - 1.0 + self.eps_lower) * self.spectral(&self.lower, x.ln()) / PI;
        }
        let r = a / x;
        let lx = x.ln();
        if let Some(k) = integer_order(p) {
            let s = self.spectral_with(lx, |u| beta_bar_binomial(r, Complex64::new(0.0, -u), k));
            return x.powf(p - 1.0) * s / PI;
        }
        let s = self.beta_sum(r, |t| t.recip() * (1.0 - t).powf(p - 1.0), |lt| self.density_pi(lx + lt));
        x.powf(p - 1.0) * s / PI
    }

    /// `E[(Y - x)^{p-1}; x < Y < c]`, with `c = ∞` on the shifted contour.
    fn upper_half(&self, x: f64, c: f64) -> f64 {
        let p = self.p;
        if c == f64::INFINITY {
            return x.powf(p - 1.0 - self.eps_upper) * self.spectral(&self.upper, x.ln()) / PI;
        }
        let r = x / c;
        let lx = x.ln();
        if let Some(k) = integer_order(p) {
            let s = self.spectral_with(lx, |u| beta_bar_binomial(r, Complex64::new(1.0 - p, u), k));
            return x.powf(p - 1.0) * s / PI;
        }
        let s = self.beta_sum(r, |t| t.powf(-p) * (1.0 - t).powf(p - 1.0), |lt| self.density_pi(lx - lt));
        x.powf(p - 1.0) * s / PI
    }

    /// `∫_r^1 g(t) D(ln t) dt` by composite Gauss-Legendre, with sub-panels
    /// no wider than the log-scale of the law.
    fn beta_sum(&self, r: f64, g: impl Fn(f64) -> f64, d: impl Fn(f64) -> f64) -> f64 {
        let (gx, gw) = gl_rule(self.beta_order);
        let span = -r.ln();
        let panels = ((span / self.log_sd).ceil() as usize).clamp(1, 64);
        let h = (1.0 - r) / panels as f64;
        let mut s = 0.0;
        for q in 0..panels {
            let lo = r + q as f64 * h;
            for (x, w) in gx.iter().zip(gw) {
                let t = lo + 0.5 * h * (x + 1.0);
                s += 0.5 * h * w * g(t) * d(t.ln());
            }
        }
        s
    }

    /// Master-equation residuals `∂D_p/∂xⱼ`.
    pub fn gradient(&self, points: &[f64]) -> Vec<f64> {
        let (lo, hi) = edges(points);
        let p = self.p;
        if let Some(a) = self.atom {
            return (0..points.len())
                .map(|j| {
                    if lo[j] <= a && a < hi[j] {
                        p * (points[j] - a).abs().powf(p - 1.0) * (points[j] - a).signum()
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        par::map(points.len(), |j| p * (self.lower_half(lo[j], points[j]) - self.upper_half(points[j], hi[j])))
    }

    /// Residual scale `p·m^{p-1}·m·sd(𝒳)`.
    pub fn scale(&self) -> f64 {
        self.p * self.mean.powf(self.p - 1.0) * self.mean * self.log_sd.max(1e-12)
    }

    /// Starting grid at the mid-quantiles `F⁻¹((j+½)/N)` of the cached CDF.
    pub fn initial_grid(&self, n: usize) -> Vec<f64> {
        if let Some(a) = self.atom {
            return (0..n).map(|j| a * (1.0 + 1e-3 * j as f64)).collect();
        }
        if n == 1 {
            return vec![self.mean];
        }
        let mut out: Vec<f64> = (0..n).map(|j| self.quantile((j as f64 + 0.5) / n as f64)).collect();
        for j in 1..n {
            if !(out[j] > out[j - 1] * (1.0 + 1e-9)) {
                out[j] = out[j - 1] * (1.0 + 1e-6 * self.log_sd.max(1e-6));
            }
        }
        out
    }

    /// Bisection in `ln x` on the cached CDF.
    pub fn quantile(&self, q: f64) -> f64 {
        if let Some(a) = self.atom {
            return a;
        }
        let sd = self.log_sd.max(1e-8);
        let (mut lo, mut hi) = (self.centre - sd, self.centre + sd);
        while self.cdf(lo.exp()) > q && lo > self.centre - 200.0 * sd {
            lo -= 2.0 * (hi - lo);
        }
        while self.cdf(hi.exp()) < q && hi < self.centre + 200.0 * sd {
            hi += 2.0 * (hi - lo);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo < 1e-12 * sd {
                break;
            }
            if self.cdf(mid.exp()) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }
}

/// Standard deviation of `𝒳` from `ln|Ψ(h)| ≈ -κ₂h²/2`, with `h` tuned to
/// the scale it measures.
fn log_sd(cf: &CharFunction, bond: f64) -> Result<f64> {
    let mut sd: f64 = 0.01;
    for _ in 0..4 {
        let h = 0.3 / sd;
        let z = cf.eval_one(Complex64::new(h, 0.0))? / bond;
        let k2 = -2.0 * z.norm().ln() / (h * h);
        if !(k2 > 0.0) {
            break;
        }
        sd = k2.sqrt();
    }
    Ok(sd)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn ordered(x: &[f64]) -> bool {
    x[0] > 0.0 && x.iter().all(|v| v.is_finite()) && x.windows(2).all(|w| w[1] - w[0] > 1e-12 * w[1])
}

/// Tridiagonal finite-difference Hessian of the gradient. Points three
/// apart are bumped together since each residual only sees its
/// neighbours.
fn hessian(law: &ForwardLaw, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for r in 0..3.min(n) {
        let h: Vec<f64> = (0..n).map(|j| if j % 3 == r { 1e-6 * x[j] } else { 0.0 }).collect();
        let up: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
        let dn: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a - b).collect();
        let gu = law.gradient(&up);
        let gd = law.gradient(&dn);
        for j in (r..n).step_by(3) {
            let d = |i: usize| (gu[i] - gd[i]) / (2.0 * h[j]);
            diag[j] = d(j);
            if j > 0 {
                sup[j - 1] = d(j - 1);
            }
            if j + 1 < n {
                sub[j + 1] = d(j + 1);
            }
        }
    }
    (sub, diag, sup)
}

/// Thomas algorithm; `None` on a vanishing pivot.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv.abs() < 1e-300 {
        return None;
    }
    c[0] = sup[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - sub[i] * c[i - 1];
        if piv.abs() < 1e-300 || !piv.is_finite() {
            return None;
        }
        c[i] = sup[i] / piv;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Stationary `N`-point grid for `e^𝒳` with default settings.
pub fn build_grid(cf: &CharFunction, n: usize, p_norm: f64) -> Result<QuantGrid> {
    let mut config = QuantConfig { p_norm, ..QuantConfig::default() };
    let mut law = ForwardLaw::new(cf, config)?;
    let mut start = law.initial_grid(n);
    // the stationary grid can reach further into the tail than the starting
    // quantiles; widen the resolved span and restart from where it got to
    for _ in 0..6 {
        let grid = build_grid_from(&law, start, config)?;
        if law.atom.is_some() || law.covers(&grid.points) {
            return Ok(grid);
        }
        let reach = grid.points.iter().map(|x| (x.ln() - law.centre).abs()).fold(0.0, f64::max);
        config.span = 1.5 * reach;
        law = ForwardLaw::new(cf, config)?;
        start = grid.points;
    }
    Err(Error::Convergence("quantization grid kept outgrowing the frequency grid".into()))
}

/// Damped Newton on the master equation, falling back to a Lloyd sweep
/// whenever no Newton step along the line reduces the residual.
pub fn build_grid_with(law: &ForwardLaw, n: usize, config: QuantConfig) -> Result<QuantGrid> {
    if n == 0 {
        return Err(Error::Input("grid size must be at least 1".into()));
    }
    build_grid_from(law, law.initial_grid(n), config)
}

/// Newton from a given starting grid.
pub fn build_grid_from(law: &ForwardLaw, start: Vec<f64>, config: QuantConfig) -> Result<QuantGrid> {
    let n = start.len();
    if n == 0 {
        return Err(Error::Input("grid size must be at least 1".into()));
    }
    if !ordered(&start) {
        return Err(Error::Input("starting grid must be positive and strictly increasing".into()));
    }
    let mut x = start;
    if law.atom.is_some() {
        let w = law.weights(&x);
        return Ok(QuantGrid::assemble(x, w, law, 0, 0.0));
    }
    let threshold = config.tol * law.scale();
    let mut g = law.gradient(&x);
    let mut res = max_abs(&g);
    for it in 0..config.max_iter {
        if res < threshold {
            let w = law.weights(&x);
            return Ok(QuantGrid::assemble(x, w, law, it, res));
        }
        let (sub, diag, sup) = hessian(law, &x);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut accepted = false;
        if let Some(step) = solve_tridiagonal(&sub, &diag, &sup, &neg) {
            let mut lam = 1.0;
            for _ in 0..30 {
                let y: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a + lam * d).collect();
                if ordered(&y) {
                    let gy = law.gradient(&y);
                    let ry = max_abs(&gy);
                    if ry < res {
                        x = y;
                        g = gy;
                        res = ry;
                        accepted = true;
                        break;
                    }
                }
                lam *= 0.5;
            }
        }
        if !accepted {
            // Lloyd: for p = 2 this moves each point to its cell mean
            let w = law.weights(&x);
            let scale = law.p * law.mean.powf(law.p - 2.0);
            let y: Vec<f64> = (0..n).map(|j| if w[j] > 1e-300 { x[j] - g[j] / (scale * w[j]) } else { x[j] }).collect();
            if !ordered(&y) {
                return Err(Error::Convergence(format!("quantization grid collapsed at iteration {it}")));
            }
            x = y;
            g = law.gradient(&x);
            res = max_abs(&g);
        }
    }
    if res < threshold {
        let w = law.weights(&x);
        return Ok(QuantGrid::assemble(x, w, law, config.max_iter, res));
    }
    Err(Error::Convergence(format!(
        "quantization did not converge in {} iterations: residual {res:.3e}, target {threshold:.3e}",
        config.max_iter
    )))
}

/// Caplet price `B(t,T+δ) Σⱼ (xⱼ - K̄)⁺ wⱼ` with `K̄ = 1 + δK`.
pub fn caplet_price_quant(grid: &QuantGrid, strike: f64) -> Result<f64> {
    let k_bar = 1.0 + grid.delta * strike;
    if !(k_bar > 0.0) || !k_bar.is_finite() {
        return Err(Error::Domain(format!("1 + δK must be positive, got {k_bar}")));
    }
    let s: f64 = grid.points.iter().zip(&grid.weights).map(|(x, w)| (x - k_bar).max(0.0) * w).sum();
    Ok(grid.bond * s)
}
