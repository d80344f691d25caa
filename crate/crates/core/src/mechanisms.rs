//! Tempered α-stable branching mechanism of the CBI flow, immigration rates,
//! explosion lifetimes and the ergodic law.
//!
//! The flow scales jumps by `η`, so the mechanism is the tempered stable one
//! with effective tempering `θ_eff = θ/η`:
//!
//! `φ(z) = b z + σ²/2 z² + η^α [θ_eff^α + z α θ_eff^{α-1} - (z + θ_eff)^α] / cos(απ/2)`.
//!
//! Writing `w = z/θ_eff` the jump part is `θ^α f(w) / (-cos(απ/2))` with
//! `f(w) = (1+w)^α - 1 - αw`, which needs no special case for `η = 0` (then
//! `w = 0`) and is evaluated by its binomial series near `w = 0`.

use crate::error::{Error, Result};
use crate::quad::{self, QuadOptions};
use crate::special::upper_incomplete_gamma;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Mechanism parameters `(b, σ, η, θ, α, β)`; `beta` holds the cumulative
/// immigration drifts `β(1) ≤ … ≤ β(m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub b: f64,
    pub sigma: f64,
    pub eta: f64,
    pub theta: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
}

/// The set of admissible exponents `p` for `E[e^{-pX}]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainInfo {
    pub lower_bound: f64,
    pub boundary_included: bool,
}

/// Joint lifetime of `v(·, p, q)` and its integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lifetime {
    Infinite,
    Finite(f64),
}

impl Lifetime {
    pub fn exceeds(&self, horizon: f64) -> bool {
        match *self {
            Lifetime::Infinite => true,
            Lifetime::Finite(t) => t > horizon,
        }
    }
}

const SERIES_RADIUS: f64 = 0.25;

fn series_f(alpha: f64, w: f64) -> (f64, f64) {
    // f(w) = Σ_{k≥2} C(α,k) w^k and f'(w) = Σ_{k≥2} k C(α,k) w^{k-1}
    let mut c = alpha;
    let mut wk = w;
    let mut f = 0.0;
    let mut df = 0.0;
    for k in 2..80 {
        c *= (alpha - (k - 1) as f64) / k as f64;
        df += k as f64 * c * wk;
        wk *= w;
        let t = c * wk;
        f += t;
        if t.abs() <= 1e-18 * f.abs() && k > 3 {
            break;
        }
    }
    (f, df)
}

fn series_f_c(alpha: f64, w: Complex64) -> Complex64 {
    let mut c = alpha;
    let mut wk = w;
    let mut f = Complex64::new(0.0, 0.0);
    for k in 2..80 {
        c *= (alpha - (k - 1) as f64) / k as f64;
        wk *= w;
        let t = wk * c;
        f += t;
        if t.norm() <= 1e-18 * f.norm() && k > 3 {
            break;
        }
    }
    f
}

fn series_df_c(alpha: f64, w: Complex64) -> Complex64 {
    let mut c = alpha;
    let mut wk = Complex64::new(1.0, 0.0);
    let mut df = Complex64::new(0.0, 0.0);
    for k in 2..80 {
        c *= (alpha - (k - 1) as f64) / k as f64;
        wk *= w;
        let t = wk * (k as f64 * c);
        df += t;
        if t.norm() <= 1e-18 * df.norm() && k > 3 {
            break;
        }
    }
    df
}

/// Closed-form tempered stable mechanism for raw inputs, without any
/// parameter validation. `theta_eff = ∞` switches the jump part off.
pub fn tempered_stable_phi(b: f64, sigma: f64, eta: f64, theta_eff: f64, alpha: f64, z: f64) -> f64 {
    let diff = b * z + 0.5 * sigma * sigma * z * z;
    if eta == 0.0 || theta_eff.is_infinite() {
        return diff;
    }
    let cos = (alpha * PI / 2.0).cos();
    let te = theta_eff;
    let jump = eta.powf(alpha) * (te.powf(alpha) + z * alpha * te.powf(alpha - 1.0) - (z + te).powf(alpha)) / cos;
    diff + jump
}

impl MechanismParams {
    /// Validated constructor. Stability is checked separately by
    /// [`MechanismParams::is_stable`] so that the η = 0 square-root case stays
    /// usable.
    pub fn new(b: f64, sigma: f64, eta: f64, theta: f64, alpha: f64, beta: Vec<f64>) -> Result<Self> {
        let m = MechanismParams { b, sigma, eta, theta, alpha, beta };
        m.validate()?;
        Ok(m)
    }

    /// Square-root (CIR) mechanism `φ(z) = bz + σ²z²/2`.
    pub fn cir(b: f64, sigma: f64, beta: Vec<f64>) -> Result<Self> {
        Self::new(b, sigma, 0.0, 1.0, 1.5, beta)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        let finite = [self.b, self.sigma, self.eta, self.theta, self.alpha]
            .iter()
            .chain(self.beta.iter())
            .all(|x| x.is_finite());
        if !finite {
            return bad("non-finite parameter".into());
        }
        if self.sigma < 0.0 {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.eta < 0.0 {
            return bad(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(self.theta > 0.0) || !(self.theta > self.eta) {
            return bad(format!("need theta > eta and theta > 0, got theta={} eta={}", self.theta, self.eta));
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return bad(format!("alpha must lie in (1,2), got {}", self.alpha));
        }
        if self.beta.is_empty() {
            return bad("beta must have at least one entry".into());
        }
        if self.beta[0] < 0.0 {
            return bad(format!("beta(1) must be >= 0, got {}", self.beta[0]));
        }
        for w in self.beta.windows(2) {
            if w[1] < w[0] {
                return bad(format!("beta must be non-decreasing, got {} then {}", w[0], w[1]));
            }
        }
        Ok(())
    }

    pub fn factors(&self) -> usize {
        self.beta.len()
    }

    /// `θ/η`, infinite when `η = 0`.
    pub fn theta_eff(&self) -> f64 {
        if self.eta == 0.0 {
            f64::INFINITY
        } else {
            self.theta / self.eta
        }
    }

    pub fn domain(&self) -> DomainInfo {
        if self.eta == 0.0 {
            DomainInfo { lower_bound: f64::NEG_INFINITY, boundary_included: false }
        } else {
            DomainInfo { lower_bound: -self.theta_eff(), boundary_included: true }
        }
    }

    fn jump_scale(&self) -> f64 {
        // θ^α / (-cos(απ/2)) > 0
        self.theta.powf(self.alpha) / -(self.alpha * PI / 2.0).cos()
    }

    fn w_scale(&self) -> f64 {
        self.eta / self.theta
    }

    /// Branching mechanism for real arguments, unchecked (NaN below the
    /// domain).
    #[inline]
    pub fn phi_unchecked(&self, z: f64) -> f64 {
        let diff = z * (self.b + 0.5 * self.sigma * self.sigma * z);
        if self.eta == 0.0 {
            return diff;
        }
        let w = z * self.w_scale();
        let f = if w.abs() < SERIES_RADIUS {
            series_f(self.alpha, w).0
        } else {
            // -θ_eff·η/θ can land a rounding step below -1
            let base = if w < -1.0 && w > -1.0 - 1e-14 { 0.0 } else { 1.0 + w };
            base.powf(self.alpha) - 1.0 - self.alpha * w
        };
        diff + self.jump_scale() * f
    }

    pub fn phi(&self, z: f64) -> Result<f64> {
        if z < self.domain().lower_bound || z.is_nan() {
            return Err(Error::Domain(format!("phi needs z >= {}, got {z}", self.domain().lower_bound)));
        }
        Ok(self.phi_unchecked(z))
    }

    /// `φ'(z)`.
    pub fn dphi(&self, z: f64) -> f64 {
        let diff = self.b + self.sigma * self.sigma * z;
        if self.eta == 0.0 {
            return diff;
        }
        let ws = self.w_scale();
        let w = z * ws;
        let df = if w.abs() < SERIES_RADIUS {
            series_f(self.alpha, w).1
        } else {
            self.alpha * ((1.0 + w).powf(self.alpha - 1.0) - 1.0)
        };
        diff + self.jump_scale() * df * ws
    }

    /// Complex branching mechanism (principal power). Real inputs with zero
    /// imaginary part return exactly the real value.
    #[inline]
    pub fn phi_c_unchecked(&self, z: Complex64) -> Complex64 {
        if z.im == 0.0 {
            return Complex64::new(self.phi_unchecked(z.re), 0.0);
        }
        let diff = z * (z * (0.5 * self.sigma * self.sigma) + self.b);
        if self.eta == 0.0 {
            return diff;
        }
        let w = z * self.w_scale();
        let f = if w.norm_sqr() < SERIES_RADIUS * SERIES_RADIUS {
            series_f_c(self.alpha, w)
        } else {
            let one_w = w + 1.0;
            (one_w.ln() * self.alpha).exp() - 1.0 - w * self.alpha
        };
        diff + f * self.jump_scale()
    }

    pub fn phi_c(&self, z: Complex64) -> Result<Complex64> {
        if z.re < self.domain().lower_bound || z.re.is_nan() || z.im.is_nan() {
            return Err(Error::Domain(format!("phi needs Re z >= {}, got {z}", self.domain().lower_bound)));
        }
        Ok(self.phi_c_unchecked(z))
    }

    pub fn dphi_c(&self, z: Complex64) -> Complex64 {
        if z.im == 0.0 {
            return Complex64::new(self.dphi(z.re), 0.0);
        }
        let diff = z * (self.sigma * self.sigma) + self.b;
        if self.eta == 0.0 {
            return diff;
        }
        let ws = self.w_scale();
        let w = z * ws;
        let df = if w.norm_sqr() < SERIES_RADIUS * SERIES_RADIUS {
            series_df_c(self.alpha, w)
        } else {
            (((w + 1.0).ln() * (self.alpha - 1.0)).exp() - 1.0) * self.alpha
        };
        diff + df * (self.jump_scale() * ws)
    }

    /// `β(i) - β(i-1)` for the 1-based factor index `i`.
    pub fn delta_beta(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.beta.len() {
            return Err(Error::Input(format!("factor index {i} outside 1..={}", self.beta.len())));
        }
        let prev = if i == 1 { 0.0 } else { self.beta[i - 2] };
        Ok(self.beta[i - 1] - prev)
    }

    /// Immigration rate `ψ^i(z) = (β(i) - β(i-1)) z`.
    pub fn psi(&self, z: f64, i: usize) -> Result<f64> {
        Ok(self.delta_beta(i)? * z)
    }

    pub fn psi_c(&self, z: Complex64, i: usize) -> Result<Complex64> {
        Ok(z * self.delta_beta(i)?)
    }

    /// `φ(-θ_eff)`; `-∞` for the square-root case.
    pub fn phi_at_boundary(&self) -> f64 {
        let lb = self.domain().lower_bound;
        if lb.is_infinite() {
            f64::NEG_INFINITY
        } else {
            self.phi_unchecked(lb)
        }
    }

    /// The no-explosion condition `φ(-θ/η) ≤ 0`. Only meaningful for η > 0.
    pub fn is_stable(&self) -> bool {
        self.eta > 0.0 && self.phi_at_boundary() <= 0.0
    }

    /// Right-hand side of the stability condition:
    /// `σ²/2 θ/η + η(1-α)θ^{α-1}/cos(απ/2)`.
    pub fn stability_threshold(&self) -> f64 {
        let a = self.alpha;
        0.5 * self.sigma * self.sigma * self.theta_eff()
            + self.eta * (1.0 - a) * self.theta.powf(a - 1.0) / (a * PI / 2.0).cos()
    }

    /// `p_q = inf{y ≥ -θ_eff : q - φ(y) ≥ 0}`.
    pub fn p_q(&self, q: f64) -> f64 {
        let lb = self.domain().lower_bound;
        let g = |y: f64| q - self.phi_unchecked(y);
        let mut lo;
        if lb.is_finite() {
            if g(lb) >= 0.0 {
                return lb;
            }
            lo = lb;
        } else {
            lo = -1.0;
            while g(lo) >= 0.0 {
                lo *= 2.0;
                if lo < -1e300 {
                    return f64::NEG_INFINITY;
                }
            }
        }
        // g(0) = q ≥ 0; convexity gives a single sign change on [lo, 0]
        let mut hi = 0.0;
        for _ in 0..400 {
            if hi - lo <= 1e-14 * (1.0 + hi.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if g(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Explosion time of `v(·, p, q)`: `∫_{-θ_eff}^{p} dy / (φ(y) - q)` when
    /// `p < p_q`.
    pub fn lifetime(&self, p: f64, q: f64) -> Result<Lifetime> {
        let lb = self.domain().lower_bound;
        if p < lb || p.is_nan() {
            return Err(Error::Domain(format!("lifetime needs p >= {lb}, got {p}")));
        }
        if !(q >= 0.0) {
            return Err(Error::Domain(format!("lifetime needs q >= 0, got {q}")));
        }
        let pq = self.p_q(q);
        if p >= pq {
            return Ok(Lifetime::Infinite);
        }
        let opts = QuadOptions { abs_tol: 1e-15, rel_tol: 1e-11, max_panels: 4000 };
        let f = |y: f64| 1.0 / (self.phi_unchecked(y) - q);
        let t = if lb.is_finite() {
            // split off the stretch next to the boundary
            let cut = lb + 0.1 * (p - lb);
            quad::integrate(f, lb, cut, opts)? + quad::integrate(f, cut, p, opts)?
        } else {
            quad::integrate_from_neg_inf(f, p, opts)?
        };
        Ok(Lifetime::Finite(t))
    }

    /// Whether `E[e^{γ X_t}]` stays finite for all `t`: `-γ` must lie in the
    /// domain and `v(·, -γ, 0)` must not explode.
    pub fn exp_moment_finite(&self, gamma: f64) -> bool {
        if gamma <= 0.0 {
            return true;
        }
        let te = self.theta_eff();
        if gamma > te {
            return false;
        }
        matches!(self.lifetime(-gamma, 0.0), Ok(Lifetime::Infinite))
    }

    /// Laplace transform of the stationary law of a factor with immigration
    /// drift `beta`: `exp(-β ∫_0^p z/φ(z) dz)`.
    pub fn ergodic_laplace(&self, p: f64, beta: f64) -> Result<f64> {
        if !(self.b > 0.0) {
            return Err(Error::InvalidParams(format!("stationary law needs b > 0, got {}", self.b)));
        }
        let p0 = self.p_q(0.0);
        if !(p > p0) {
            return Err(Error::Domain(format!("ergodic Laplace needs p > {p0}, got {p}")));
        }
        if p == 0.0 || beta == 0.0 {
            return Ok(1.0);
        }
        let g = |z: f64| {
            let ph = self.phi_unchecked(z);
            if ph == 0.0 {
                1.0 / self.b
            } else {
                z / ph
            }
        };
        let opts = QuadOptions { abs_tol: 1e-16, rel_tol: 1e-13, max_panels: 4000 };
        let integral = if p > 0.0 {
            quad::integrate(g, 0.0, p, opts)?
        } else {
            -quad::integrate(g, p, 0.0, opts)?
        };
        Ok((-beta * integral).exp())
    }

    /// Stationary mean `β/b`.
    pub fn ergodic_mean(&self, beta: f64) -> Result<f64> {
        if !(self.b > 0.0) {
            return Err(Error::InvalidParams(format!("stationary law needs b > 0, got {}", self.b)));
        }
        Ok(beta / self.b)
    }

    /// Stationary means `β(i)/b` of the flow components `Y^i`.
    pub fn flow_ergodic_means(&self) -> Result<Vec<f64>> {
        self.beta.iter().map(|&bt| self.ergodic_mean(bt)).collect()
    }

    /// `C(α, η) = -η^α / (Γ(-α) cos(απ/2))`, the constant of the η-scaled
    /// jump measure `π_flow(dz) = C(α,η) e^{-θ_eff z} z^{-1-α} dz`.
    pub fn flow_jump_constant(&self) -> f64 {
        let a = self.alpha;
        let g = statrs::function::gamma::gamma(-a);
        -self.eta.powf(a) / (g * (a * PI / 2.0).cos())
    }

    /// `π_flow([ε, ∞))`.
    pub fn flow_jump_mass(&self, eps: f64) -> Result<f64> {
        if self.eta == 0.0 {
            return Ok(0.0);
        }
        let te = self.theta_eff();
        Ok(self.flow_jump_constant() * te.powf(self.alpha) * upper_incomplete_gamma(-self.alpha, eps * te)?)
    }

    /// `∫_ε^∞ z π_flow(dz)`.
    pub fn flow_jump_first_moment(&self, eps: f64) -> Result<f64> {
        if self.eta == 0.0 {
            return Ok(0.0);
        }
        let te = self.theta_eff();
        Ok(self.flow_jump_constant()
            * te.powf(self.alpha - 1.0)
            * upper_incomplete_gamma(1.0 - self.alpha, eps * te)?)
    }

    /// `∫_0^ε z² π_flow(dz)`, the variance rate carried by jumps below ε.
    pub fn flow_small_jump_variance(&self, eps: f64) -> f64 {
        if self.eta == 0.0 || !(eps > 0.0) {
            return 0.0;
        }
        let te = self.theta_eff();
        let s = 2.0 - self.alpha;
        self.flow_jump_constant() * te.powf(-s) * statrs::function::gamma::gamma_li(s, eps * te)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn reference() -> MechanismParams {
        MechanismParams::new(0.05353, 0.00582, 0.04070, 0.05070, 1.31753, vec![9.99999e-4, 0.00340]).unwrap()
    }

    #[test]
    fn phi_zero_at_zero() {
        assert_eq!(reference().phi(0.0).unwrap(), 0.0);
        assert_eq!(reference().psi(0.0, 2).unwrap(), 0.0);
    }

    #[test]
    fn psi_table_values() {
        let m = reference();
        assert!((m.psi(1.0, 2).unwrap() - 0.002400001).abs() < 1e-15);
        assert!((m.psi(2.0, 1).unwrap() - 2.0 * 9.99999e-4).abs() < 1e-18);
        assert!(m.psi(1.0, 3).is_err());
        assert!(m.psi(1.0, 0).is_err());
    }

    #[test]
    fn series_and_direct_agree_at_switch() {
        let m = reference();
        let te = m.theta_eff();
        for &w in &[0.2499, 0.2501, -0.2499, -0.2501] {
            let z = w * te;
            let direct = tempered_stable_phi(m.b, m.sigma, m.eta, te, m.alpha, z);
            let ours = m.phi(z).unwrap();
            assert!((ours - direct).abs() <= 1e-13 * direct.abs().max(1e-3), "{w}: {ours} {direct}");
        }
    }

    #[test]
    fn alpha_two_zero_tempering_limit() {
        // α = 2, θ_eff = 0: φ(z) = bz + (σ²/2 + η²) z²
        let (b, s, e) = (0.3, 0.2, 0.15);
        for &z in &[0.5, 1.0, 3.0] {
            let v = tempered_stable_phi(b, s, e, 0.0, 2.0, z);
            let want = b * z + (0.5 * s * s + e * e) * z * z;
            assert!((v - want).abs() < 1e-14, "{v} {want}");
        }
    }

    #[test]
    fn domain_and_errors() {
        let m = reference();
        let d = m.domain();
        assert!((d.lower_bound + m.theta / m.eta).abs() < 1e-15);
        assert!(d.boundary_included);
        assert!(m.phi(d.lower_bound).is_ok());
        assert!(m.phi(d.lower_bound - 1e-9).is_err());
    }

    #[test]
    fn reference_is_stable() {
        let m = reference();
        assert!(m.is_stable());
        assert!(m.b >= m.stability_threshold());
        // the two forms of the condition agree in sign
        let alt = m.phi_at_boundary();
        let te = m.theta_eff();
        assert!((alt - te * (m.stability_threshold() - m.b)).abs() < 1e-14);
    }

    #[test]
    fn complex_matches_real_exactly_on_axis() {
        let m = reference();
        for &z in &[-1.0, -0.1, 0.0, 0.3, 2.0] {
            assert_eq!(m.phi_c(Complex64::new(z, 0.0)).unwrap().re, m.phi(z).unwrap());
        }
    }

    #[test]
    fn complex_series_matches_direct_power() {
        let m = reference();
        let te = m.theta_eff();
        let cos = (m.alpha * PI / 2.0).cos();
        for &w in &[Complex64::new(0.0, 0.2499), Complex64::new(-0.1, 0.2), Complex64::new(0.17, -0.17)] {
            let z = w * te;
            let diff = z * m.b + z * z * (0.5 * m.sigma * m.sigma);
            let jump = (z * m.alpha * te.powf(m.alpha - 1.0) + te.powf(m.alpha) - (z + te).powf(m.alpha))
                * (m.eta.powf(m.alpha) / cos);
            let d = (m.phi_c(z).unwrap() - (diff + jump)).norm();
            assert!(d < 1e-14, "{w}: {d}");
        }
    }

    #[test]
    fn dphi_matches_difference_quotient() {
        let m = reference();
        for &z in &[-1.0, -0.2, 0.01, 0.5, 4.0] {
            let h = 1e-6;
            let fd = (m.phi(z + h).unwrap() - m.phi(z - h).unwrap()) / (2.0 * h);
            assert!((m.dphi(z) - fd).abs() < 1e-8, "{z}");
            let c = Complex64::new(z, 0.3);
            let fdc = (m.phi_c(c + h).unwrap() - m.phi_c(c - h).unwrap()) / (2.0 * h);
            assert!((m.dphi_c(c) - fdc).norm() < 1e-7, "{z}");
        }
        // finite slope at the boundary
        assert!(m.dphi(m.domain().lower_bound).is_finite());
    }

    #[test]
    fn lifetime_infinite_for_nonnegative_p() {
        let m = reference();
        for &(p, q) in &[(0.0, 0.0), (1.0, 0.5), (0.2, 3.0)] {
            assert_eq!(m.lifetime(p, q).unwrap(), Lifetime::Infinite);
        }
        let pq = m.p_q(2.0);
        assert_eq!(m.lifetime(pq, 2.0).unwrap(), Lifetime::Infinite);
    }

    #[test]
    fn lifetime_cir_ln2() {
        let m = MechanismParams::cir(1.0, 2f64.sqrt(), vec![0.0]).unwrap();
        match m.lifetime(-2.0, 0.0).unwrap() {
            Lifetime::Finite(t) => assert!((t - 2f64.ln()).abs() < 1e-10, "{t}"),
            other => panic!("{other:?}"),
        }
        assert!((m.p_q(0.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_moments() {
        let m = reference();
        assert!(m.exp_moment_finite(0.0));
        assert!(m.exp_moment_finite(m.theta_eff()));
        assert!(!m.exp_moment_finite(m.theta_eff() + 0.01));
    }

    #[test]
    fn ergodic_values() {
        let m = reference();
        assert!((m.ergodic_mean(0.00340).unwrap() - 0.063_515_785_540_818_23).abs() < 1e-15);
        assert_eq!(m.ergodic_laplace(0.0, 0.0034).unwrap(), 1.0);
        let l1 = m.ergodic_laplace(1.0, 0.0034).unwrap();
        let l2 = m.ergodic_laplace(2.0, 0.0034).unwrap();
        assert!(l1 < 1.0 && l2 < l1 && l2 > 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(MechanismParams::new(0.05, 0.01, 0.06, 0.05, 1.3, vec![0.001]).is_err());
        assert!(MechanismParams::new(0.05, 0.01, 0.04, 0.05, 2.0, vec![0.001]).is_err());
        assert!(MechanismParams::new(0.05, 0.01, 0.04, 0.05, 1.3, vec![0.002, 0.001]).is_err());
        assert!(MechanismParams::new(0.05, -0.01, 0.04, 0.05, 1.3, vec![0.001]).is_err());
    }
}
