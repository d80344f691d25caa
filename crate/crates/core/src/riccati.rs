//! Generalized Riccati equation `∂ₜv = q - φ(v)`, `v(0) = p`, solved together
//! with `I(t) = ∫₀ᵗ v(s) ds` by an adaptive Dormand-Prince 5(4) scheme.
//!
//! States whose real part leaves the domain `[-θ_eff, ∞)` are never accepted:
//! the step is halved instead, and once the step underflows the solution is
//! truncated and `blew_up` records the time reached.

use crate::error::{Error, Result};
use crate::mechanisms::MechanismParams;
use num_complex::Complex64;
use std::ops::{Add, Mul, Neg, Sub};

/// Real or complex state of the Riccati equation.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn from_f64(x: f64) -> Self;
    fn re(self) -> f64;
    fn abs(self) -> f64;
    fn is_finite(self) -> bool;
    fn phi(m: &MechanismParams, z: Self) -> Self;
    fn dphi(m: &MechanismParams, z: Self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn phi(m: &MechanismParams, z: Self) -> Self {
        m.phi_unchecked(z)
    }
    #[inline]
    fn dphi(m: &MechanismParams, z: Self) -> Self {
        m.dphi(z)
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    #[inline]
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn abs(self) -> f64 {
        // hypot(x, 0) == |x| exactly, so the real and complex solvers take
        // identical steps on the real axis
        self.norm()
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    #[inline]
    fn phi(m: &MechanismParams, z: Self) -> Self {
        m.phi_c_unchecked(z)
    }
    #[inline]
    fn dphi(m: &MechanismParams, z: Self) -> Self {
        m.dphi_c(z)
    }
}

/// Initial value, discount loading and horizon.
#[derive(Clone, Copy, Debug)]
pub struct RiccatiRequest<S> {
    pub p: S,
    pub q: f64,
    pub horizon: f64,
}

/// Tolerances of the embedded pair.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { rel_tol: 1e-10, abs_tol: 1e-14, max_steps: 200_000 }
    }
}

impl SolverOptions {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        SolverOptions { rel_tol, ..Default::default() }
    }
}

/// Accepted steps of a solve with the data needed for quintic Hermite dense
/// output of both `v` and `I`.
#[derive(Clone, Debug)]
pub struct RiccatiSolution<S> {
    pub grid: Vec<f64>,
    pub v_values: Vec<S>,
    pub integral_values: Vec<S>,
    dv: Vec<S>,
    ddv: Vec<S>,
    pub blew_up: Option<f64>,
    pub q: f64,
}

// Dormand-Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Raw integrator. Calls `on_step(t, v, I, v')` at t = 0 and after every
/// accepted step; steps are clipped to land exactly on each entry of `stops`
/// (sorted, within (0, horizon]). Returns the blow-up time if the domain was
/// left before the horizon.
fn integrate<S: Scalar, F: FnMut(f64, S, S, S)>(
    m: &MechanismParams,
    p: S,
    q: f64,
    horizon: f64,
    stops: &[f64],
    opts: &SolverOptions,
    mut on_step: F,
) -> Result<Option<f64>> {
    let lb = m.domain().lower_bound;
    let qs = S::from_f64(q);
    let rhs = |v: S| qs - S::phi(m, v);
    let valid = |v: S| v.is_finite() && v.re() >= lb && v.abs() < 1e150;

    let mut t = 0.0;
    let mut v = p;
    let mut iv = S::zero();
    let mut k1 = rhs(v);
    on_step(t, v, iv, k1);
    if horizon <= 0.0 {
        return Ok(None);
    }

    let (rt, at) = (opts.rel_tol, opts.abs_tol);
    // initial step from the local time scale |v| / |v'|
    let mut h = {
        let d = k1.abs();
        let s = at + rt * v.abs();
        if d == 0.0 {
            horizon
        } else {
            let h0 = 0.01 * (v.abs().max(1e-6)) / d;
            let h1 = (s / d).powf(0.2) * 0.1;
            h0.max(h1).min(horizon)
        }
    };
    let mut err_old: f64 = 1e-4;
    let mut stop_idx = 0;
    let mut steps = 0usize;
    let h_min_rel = 1e-14;
    let mut last_rejected = false;

    while t < horizon {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Convergence(format!("Riccati solver exceeded {} steps at t={t}", opts.max_steps)));
        }
        while stop_idx < stops.len() && stops[stop_idx] <= t {
            stop_idx += 1;
        }
        let target = if stop_idx < stops.len() { stops[stop_idx].min(horizon) } else { horizon };
        let mut hit = false;
        if t + h >= target * (1.0 - 1e-15) {
            h = target - t;
            hit = true;
        }
        if h <= h_min_rel * t.max(1.0) {
            return Ok(Some(t));
        }

        // stages; an invalid stage value means the step overshoots the domain
        let y2 = v + k1 * (h * A21);
        if !valid(y2) {
            h *= 0.5;
            last_rejected = true;
            continue;
        }
        let k2 = rhs(y2);
        let y3 = v + (k1 * A31 + k2 * A32) * h;
        if !valid(y3) {
            h *= 0.5;
            last_rejected = true;
            continue;
        }
        let k3 = rhs(y3);
        let y4 = v + (k1 * A41 + k2 * A42 + k3 * A43) * h;
        if !valid(y4) {
            h *= 0.5;
            last_rejected = true;
            continue;
        }
        let k4 = rhs(y4);
        let y5 = v + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h;
        if !valid(y5) {
            h *= 0.5;
            last_rejected = true;
            continue;
        }
        let k5 = rhs(y5);
        let y6 = v + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h;
        if !valid(y6) {
            h *= 0.5;
            last_rejected = true;
            continue;
        }
        let k6 = rhs(y6);
        let v_new = v + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
        if !valid(v_new) {
            h *= 0.5;
            last_rejected = true;
            continue;
        }
        let k7 = rhs(v_new);
        // the integral component: I' = v, so its stages are the stage states
        let i_new = iv + (v * A71 + y3 * A73 + y4 * A74 + y5 * A75 + y6 * A76) * h;

        let ev = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
        let ei = (v * E1 + y3 * E3 + y4 * E4 + y5 * E5 + y6 * E6 + v_new * E7) * h;
        let sv = at + rt * v.abs().max(v_new.abs());
        let si = at + rt * iv.abs().max(i_new.abs());
        let err = (0.5 * ((ev.abs() / sv).powi(2) + (ei.abs() / si).powi(2))).sqrt();

        if err <= 1.0 {
            t = if hit { target } else { t + h };
            v = v_new;
            iv = i_new;
            k1 = k7;
            on_step(t, v, iv, k1);
            // PI controller (Hairer's DOPRI5 constants)
            let e = err.max(1e-10);
            let mut fac = e.powf(0.17) / err_old.powf(0.04) / 0.9;
            fac = fac.clamp(0.1, 5.0);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            err_old = e.max(1e-4);
            last_rejected = false;
            h = h_new;
        } else {
            let fac = (err.powf(0.2) / 0.9).clamp(1.0, 10.0);
            h /= fac;
            last_rejected = true;
        }
    }
    Ok(None)
}

fn check_start<S: Scalar>(m: &MechanismParams, p: S, q: f64, horizon: f64) -> Result<()> {
    let lb = m.domain().lower_bound;
    if !p.is_finite() || p.re() < lb {
        return Err(Error::Domain(format!("Riccati initial value {p:?} outside the domain (lower bound {lb})")));
    }
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::Domain(format!("Riccati needs q >= 0, got {q}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("Riccati horizon must be finite and >= 0, got {horizon}")));
    }
    Ok(())
}

/// Full solve with dense output.
pub fn solve<S: Scalar>(m: &MechanismParams, req: RiccatiRequest<S>, opts: &SolverOptions) -> Result<RiccatiSolution<S>> {
    solve_with_stops(m, req, &[], opts)
}

/// Full solve whose grid contains each time in `stops`.
pub fn solve_with_stops<S: Scalar>(
    m: &MechanismParams,
    req: RiccatiRequest<S>,
    stops: &[f64],
    opts: &SolverOptions,
) -> Result<RiccatiSolution<S>> {
    check_start(m, req.p, req.q, req.horizon)?;
    let mut sol = RiccatiSolution {
        grid: Vec::new(),
        v_values: Vec::new(),
        integral_values: Vec::new(),
        dv: Vec::new(),
        ddv: Vec::new(),
        blew_up: None,
        q: req.q,
    };
    let blew = integrate(m, req.p, req.q, req.horizon, stops, opts, |t, v, i, dv| {
        sol.grid.push(t);
        sol.v_values.push(v);
        sol.integral_values.push(i);
        sol.dv.push(dv);
        sol.ddv.push(-(S::dphi(m, v) * dv));
    })?;
    sol.blew_up = blew;
    Ok(sol)
}

/// `(v(t), I(t))` at each requested time (sorted ascending, ≤ horizon)
/// without storing the trajectory. Fails if the solution explodes first.
pub fn solve_at<S: Scalar>(m: &MechanismParams, p: S, q: f64, times: &[f64], opts: &SolverOptions) -> Result<Vec<(S, S)>> {
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    check_start(m, p, q, horizon)?;
    let mut out = vec![(S::zero(), S::zero()); times.len()];
    let mut filled = vec![false; times.len()];
    let blew = integrate(m, p, q, horizon, times, opts, |t, v, i, _| {
        for (k, &tk) in times.iter().enumerate() {
            if !filled[k] && tk == t {
                out[k] = (v, i);
                filled[k] = true;
            }
        }
    })?;
    if let Some(at) = blew {
        return Err(Error::Explosion { at, horizon });
    }
    debug_assert!(filled.iter().all(|&f| f));
    Ok(out)
}

/// Quintic Hermite interpolation from values and first two derivatives.
#[inline]
fn hermite5<S: Scalar>(y0: S, d0: S, dd0: S, y1: S, d1: S, dd1: S, h: f64, s: f64) -> S {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h00 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h10 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h20 = 0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5;
    let h21 = 0.5 * s3 - s4 + 0.5 * s5;
    let h11 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h01 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    y0 * h00 + d0 * (h * h10) + dd0 * (h * h * h20) + dd1 * (h * h * h21) + d1 * (h * h11) + y1 * h01
}

impl<S: Scalar> RiccatiSolution<S> {
    pub fn horizon_reached(&self) -> f64 {
        *self.grid.last().unwrap_or(&0.0)
    }

    pub fn end(&self) -> (S, S) {
        (*self.v_values.last().unwrap(), *self.integral_values.last().unwrap())
    }

    /// `(v(t), I(t))` by dense output. Errors beyond the solved range.
    pub fn eval(&self, t: f64) -> Result<(S, S)> {
        let end = self.horizon_reached();
        if !(t >= 0.0) || t > end * (1.0 + 1e-14) + 1e-300 {
            return Err(match self.blew_up {
                Some(at) => Error::Explosion { at, horizon: t },
                None => Error::Domain(format!("time {t} outside solved range [0, {end}]")),
            });
        }
        let n = self.grid.len();
        if n == 1 {
            return Ok((self.v_values[0], self.integral_values[0]));
        }
        let k = match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(k) => return Ok((self.v_values[k], self.integral_values[k])),
            Err(k) => k.clamp(1, n - 1),
        };
        let (t0, t1) = (self.grid[k - 1], self.grid[k]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let v = hermite5(
            self.v_values[k - 1],
            self.dv[k - 1],
            self.ddv[k - 1],
            self.v_values[k],
            self.dv[k],
            self.ddv[k],
            h,
            s,
        );
        let i = hermite5(
            self.integral_values[k - 1],
            self.v_values[k - 1],
            self.dv[k - 1],
            self.integral_values[k],
            self.v_values[k],
            self.dv[k],
            h,
            s,
        );
        Ok((v, i))
    }

    pub fn v_at(&self, t: f64) -> Result<S> {
        Ok(self.eval(t)?.0)
    }

    pub fn integral_at(&self, t: f64) -> Result<S> {
        Ok(self.eval(t)?.1)
    }

    /// `v'(t) = q - φ(v(t))` at the stored grid points.
    pub fn derivative_values(&self) -> &[S] {
        &self.dv
    }
}

/// `E[exp(-Σ p_j X^j_t - q ∫ Σ X^j)] = exp(-Σ_j [x0_j v_j(t) + Δβ_j I_j(t)])`
/// for independent factors sharing the mechanism `m`.
pub fn affine_transform<S: Scalar>(m: &MechanismParams, x0: &[f64], p: &[S], q: f64, t: f64, opts: &SolverOptions) -> Result<S>
where
    S: ExpScalar,
{
    if x0.len() != p.len() || x0.len() != m.factors() {
        return Err(Error::Input(format!(
            "affine transform: {} states, {} exponents, {} factors",
            x0.len(),
            p.len(),
            m.factors()
        )));
    }
    let mut expo = S::zero();
    for j in 0..x0.len() {
        if x0[j] < 0.0 {
            return Err(Error::Domain(format!("negative factor state {}", x0[j])));
        }
        let (v, i) = solve_at(m, p[j], q, &[t], opts)?[0];
        expo = expo - v * x0[j] - i * m.delta_beta(j + 1)?;
    }
    Ok(expo.exp_s())
}

/// Exponential on the scalar types.
pub trait ExpScalar: Scalar {
    fn exp_s(self) -> Self;
}

impl ExpScalar for f64 {
    fn exp_s(self) -> Self {
        self.exp()
    }
}

impl ExpScalar for Complex64 {
    fn exp_s(self) -> Self {
        self.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cir() -> MechanismParams {
        MechanismParams::cir(1.0, 2f64.sqrt(), vec![0.5]).unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let m = MechanismParams::new(0.05353, 0.00582, 0.04070, 0.05070, 1.31753, vec![0.001]).unwrap();
        let s = solve(&m, RiccatiRequest { p: 0.0, q: 0.0, horizon: 3.0 }, &SolverOptions::default()).unwrap();
        assert!(s.v_values.iter().all(|&v| v == 0.0));
        assert!(s.integral_values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cir_closed_form_point() {
        let s = solve(&cir(), RiccatiRequest { p: 1.0, q: 0.0, horizon: 1.0 }, &SolverOptions::default()).unwrap();
        let e = (-1f64).exp();
        let want = e / (2.0 - e);
        assert!((s.end().0 - want).abs() < 1e-10 * want);
    }

    #[test]
    fn hermite_reproduces_quintics() {
        let f = |x: f64| 1.0 + 2.0 * x - x * x + 0.5 * x.powi(3) - 0.25 * x.powi(4) + 0.1 * x.powi(5);
        let d = |x: f64| 2.0 - 2.0 * x + 1.5 * x * x - x.powi(3) + 0.5 * x.powi(4);
        let dd = |x: f64| -2.0 + 3.0 * x - 3.0 * x * x + 2.0 * x.powi(3);
        let (a, b) = (0.3, 1.7);
        for &s in &[0.1, 0.5, 0.77] {
            let got = hermite5(f(a), d(a), dd(a), f(b), d(b), dd(b), b - a, s);
            assert!((got - f(a + s * (b - a))).abs() < 1e-13);
        }
    }

    #[test]
    fn dense_output_matches_closed_form() {
        let s = solve(&cir(), RiccatiRequest { p: 2.0, q: 0.0, horizon: 3.0 }, &SolverOptions::default()).unwrap();
        for &t in &[0.0137, 0.4, 1.2345, 2.9] {
            let e = (-t as f64).exp();
            let want = 2.0 * e / (1.0 + 2.0 * (1.0 - e));
            let got = s.v_at(t).unwrap();
            assert!((got - want).abs() < 1e-9 * want, "{t}: {got} {want}");
        }
    }

    #[test]
    fn complex_real_consistency() {
        let m = MechanismParams::new(0.05353, 0.00582, 0.04070, 0.05070, 1.31753, vec![0.001]).unwrap();
        let opts = SolverOptions::default();
        let r = solve(&m, RiccatiRequest { p: -0.7, q: 1.5, horizon: 2.0 }, &opts).unwrap();
        let c = solve(&m, RiccatiRequest { p: Complex64::new(-0.7, 0.0), q: 1.5, horizon: 2.0 }, &opts).unwrap();
        assert_eq!(r.grid, c.grid);
        for (a, b) in r.v_values.iter().zip(&c.v_values) {
            assert_eq!(*a, b.re);
            assert_eq!(b.im, 0.0);
        }
    }

    #[test]
    fn blow_up_recorded() {
        let s = solve(&cir(), RiccatiRequest { p: -2.0, q: 0.0, horizon: 2.0 }, &SolverOptions::default()).unwrap();
        let t = s.blew_up.expect("should explode");
        assert!((t - 2f64.ln()).abs() < 1e-3 * 2f64.ln(), "{t}");
        assert!(solve_at(&cir(), -2.0, 0.0, &[1.0], &SolverOptions::default()).is_err());
    }

    #[test]
    fn rejects_outside_domain() {
        let m = MechanismParams::new(0.05353, 0.00582, 0.04070, 0.05070, 1.31753, vec![0.001]).unwrap();
        let lb = m.domain().lower_bound;
        assert!(solve(&m, RiccatiRequest { p: lb - 0.1, q: 0.0, horizon: 1.0 }, &SolverOptions::default()).is_err());
    }

    #[test]
    fn affine_trivial() {
        let m = cir();
        let v = affine_transform(&m, &[0.3], &[0.0], 0.0, 1.0, &SolverOptions::default()).unwrap();
        assert_eq!(v, 1.0);
    }
}
