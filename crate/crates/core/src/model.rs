//! The flow-driven multi-curve model: exact fit of the deterministic shifts
//! to the input curves, and closed-form bonds, spreads, FRA rates and futures
//! convexity adjustments.
//!
//! Tenor indices are 0-based here (`i = 0` is the shortest tenor). Factor `j`
//! is the layer `X^j = Y^j - Y^{j-1}`, which loads the short rate with
//! `λ_j = Σ_{k≥j} μ_k` and every spread of tenor index ≥ j.

use crate::curves::{spot_mult_spread, MarketCurves};
use crate::error::{Error, Result};
use crate::mechanisms::{Lifetime, MechanismParams};
use crate::riccati::{self, RiccatiRequest, RiccatiSolution, SolverOptions};
use serde::{Deserialize, Serialize};

/// Parameter file layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub b: f64,
    pub sigma: f64,
    pub eta: f64,
    pub theta: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub y0: Vec<f64>,
    pub tenors: Vec<f64>,
}

impl ModelParams {
    /// Calibrated two-tenor (3M, 6M) parameter set used throughout the tests.
    pub fn reference() -> Self {
        ModelParams {
            b: 0.05353,
            sigma: 0.00582,
            eta: 0.04070,
            theta: 0.05070,
            alpha: 1.31753,
            beta: vec![9.99999e-4, 0.00340],
            mu: vec![1.49999, 1.00000],
            y0: vec![0.00495, 0.00507],
            tenors: vec![0.25, 0.5],
        }
    }

    pub fn mechanism(&self) -> Result<MechanismParams> {
        MechanismParams::new(self.b, self.sigma, self.eta, self.theta, self.alpha, self.beta.clone())
    }

    /// `λ_j = Σ_{k≥j} μ_k`.
    pub fn lambda(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.mu.len()];
        let mut acc = 0.0;
        for j in (0..self.mu.len()).rev() {
            acc += self.mu[j];
            out[j] = acc;
        }
        out
    }

    /// `x₀^j = y₀^j - y₀^{j-1}`.
    pub fn x0(&self) -> Vec<f64> {
        (0..self.y0.len()).map(|j| if j == 0 { self.y0[0] } else { self.y0[j] - self.y0[j - 1] }).collect()
    }

    pub fn validate(&self) -> Result<MechanismParams> {
        let mech = self.mechanism()?;
        let m = self.beta.len();
        if self.mu.len() != m || self.y0.len() != m || self.tenors.len() != m {
            return Err(Error::InvalidParams(format!(
                "beta, mu, y0 and tenors need equal lengths, got {}, {}, {}, {}",
                m,
                self.mu.len(),
                self.y0.len(),
                self.tenors.len()
            )));
        }
        if self.mu.iter().any(|&u| !(u >= 0.0) || !u.is_finite()) {
            return Err(Error::InvalidParams("mu must be finite and >= 0".into()));
        }
        if self.y0.iter().any(|y| !y.is_finite()) || self.y0[0] < 0.0 {
            return Err(Error::InvalidParams("y0 must be finite and >= 0".into()));
        }
        if self.y0.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParams("y0 must be non-decreasing".into()));
        }
        if self.tenors.windows(2).any(|w| !(w[1] > w[0])) || !(self.tenors[0] > 0.0) {
            return Err(Error::InvalidParams("tenors must be positive and strictly increasing".into()));
        }
        if mech.eta > 0.0 && !mech.is_stable() {
            return Err(Error::InvalidParams(format!(
                "no-explosion condition fails: b = {} < {}",
                mech.b,
                mech.stability_threshold()
            )));
        }
        // the spread exponent needs v(·,-1,λ_j) for all times
        if mech.domain().lower_bound > -1.0 {
            return Err(Error::InvalidParams(format!("need theta/eta >= 1, got {}", mech.theta_eff())));
        }
        for &l in &self.lambda() {
            if mech.lifetime(-1.0, l)? != Lifetime::Infinite {
                return Err(Error::InvalidParams(format!("v(·,-1,{l}) explodes in finite time")));
            }
        }
        Ok(mech)
    }
}

/// A fitted model: parameters, curves and the cached Riccati solutions
/// `v(·,0,λ_j)` and `v(·,-1,λ_j)`.
#[derive(Clone, Debug)]
pub struct MultiCurveModel {
    pub params: ModelParams,
    pub mech: MechanismParams,
    pub curves: MarketCurves,
    pub lambda: Vec<f64>,
    pub x0: Vec<f64>,
    pub dbeta: Vec<f64>,
    v_zero: Vec<RiccatiSolution<f64>>,
    v_minus: Vec<RiccatiSolution<f64>>,
    horizon: f64,
    pub ode: SolverOptions,
}

/// `(Λ(T), c_1(T), …, c_m(T))` sampled on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedShifts {
    pub times: Vec<f64>,
    pub lambda_integral: Vec<f64>,
    pub c: Vec<Vec<f64>>,
}

impl MultiCurveModel {
    pub fn new(params: ModelParams, curves: MarketCurves) -> Result<Self> {
        Self::with_options(params, curves, SolverOptions::default())
    }

    pub fn with_options(params: ModelParams, curves: MarketCurves, ode: SolverOptions) -> Result<Self> {
        let mech = params.validate()?;
        let tenors = curves.tenors();
        if tenors.len() != params.tenors.len() || tenors.iter().zip(&params.tenors).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::Input(format!(
                "forward curve tenors {:?} do not match model tenors {:?}",
                tenors, params.tenors
            )));
        }
        let horizon = (curves.max_extent() + 1.0).max(30.0);
        let lambda = params.lambda();
        let solve = |p: f64, q: f64| -> Result<RiccatiSolution<f64>> {
            let s = riccati::solve(&mech, RiccatiRequest { p, q, horizon }, &ode)?;
            if let Some(at) = s.blew_up {
                return Err(Error::Explosion { at, horizon });
            }
            Ok(s)
        };
        let v_zero = lambda.iter().map(|&l| solve(0.0, l)).collect::<Result<Vec<_>>>()?;
        let v_minus = lambda.iter().map(|&l| solve(-1.0, l)).collect::<Result<Vec<_>>>()?;
        let dbeta = (1..=mech.factors()).map(|j| mech.delta_beta(j)).collect::<Result<Vec<_>>>()?;
        Ok(MultiCurveModel {
            x0: params.x0(),
            params,
            mech,
            curves,
            lambda,
            dbeta,
            v_zero,
            v_minus,
            horizon,
            ode,
        })
    }

    pub fn factors(&self) -> usize {
        self.lambda.len()
    }

    pub fn tenor(&self, i: usize) -> Result<f64> {
        self.params
            .tenors
            .get(i)
            .copied()
            .ok_or_else(|| Error::Input(format!("tenor index {i} outside 0..{}", self.params.tenors.len())))
    }

    /// Longest time to maturity the cached solutions cover.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// No immigration and no initial mass: every factor stays at zero.
    pub fn is_deterministic(&self) -> bool {
        self.x0.iter().all(|&x| x == 0.0) && self.dbeta.iter().all(|&d| d == 0.0)
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        if !(tau >= 0.0) || tau > self.horizon {
            return Err(Error::Domain(format!("time to maturity {tau} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.factors() {
            return Err(Error::Input(format!("state has {} entries, model has {} factors", x.len(), self.factors())));
        }
        if x.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain("factor states must be >= 0".into()));
        }
        Ok(())
    }

    /// `(v(τ,0,λ_j), ∫₀^τ v(s,0,λ_j) ds)`.
    pub fn v0(&self, j: usize, tau: f64) -> Result<(f64, f64)> {
        self.check_tau(tau)?;
        self.v_zero[j].eval(tau)
    }

    /// `(v(τ,-1,λ_j), ∫₀^τ v(s,-1,λ_j) ds)`.
    pub fn vm1(&self, j: usize, tau: f64) -> Result<(f64, f64)> {
        self.check_tau(tau)?;
        self.v_minus[j].eval(tau)
    }

    /// `ℬ₀^j(τ) = -v(τ,0,λ_j)`.
    pub fn b0(&self, j: usize, tau: f64) -> Result<f64> {
        Ok(-self.v0(j, tau)?.0)
    }

    /// `ℬ_i^j(τ) = (v(τ,0,λ_j) - v(τ,-1,λ_j)) 1_{j≤i}`.
    pub fn bi(&self, i: usize, j: usize, tau: f64) -> Result<f64> {
        if j > i {
            return Ok(0.0);
        }
        Ok(self.v0(j, tau)?.0 - self.vm1(j, tau)?.0)
    }

    /// `Σ_j Δβ_j ∫₀^τ v(s,0,λ_j) ds` and `Σ_j v(τ,0,λ_j) x_j`.
    fn zero_terms(&self, tau: f64, x: &[f64]) -> Result<(f64, f64)> {
        let (mut int, mut lin) = (0.0, 0.0);
        for j in 0..self.factors() {
            let (v, i) = self.v0(j, tau)?;
            int += self.dbeta[j] * i;
            lin += v * x[j];
        }
        Ok((int, lin))
    }

    fn spread_terms(&self, i: usize, tau: f64, x: &[f64]) -> Result<(f64, f64)> {
        let (mut int, mut lin) = (0.0, 0.0);
        for j in 0..=i {
            let (v0, i0) = self.v0(j, tau)?;
            let (vm, im) = self.vm1(j, tau)?;
            int += self.dbeta[j] * (i0 - im);
            lin += (v0 - vm) * x[j];
        }
        Ok((int, lin))
    }

    /// `Λ(T) = ∫₀ᵀ ℓ(s) ds`, fitted so that `B(0,T) = B_mkt(0,T)`.
    pub fn lambda_integral(&self, t: f64) -> Result<f64> {
        let (int, lin) = self.zero_terms(t, &self.x0)?;
        Ok(-self.curves.discount.ln_discount(t)? - int - lin)
    }

    /// `ℓ(T) = Λ'(T)`.
    pub fn ell(&self, t: f64) -> Result<f64> {
        let mut out = self.curves.discount.inst_forward(t)?;
        for j in 0..self.factors() {
            let (v, _) = self.v0(j, t)?;
            let dv = self.lambda[j] - self.mech.phi_unchecked(v);
            out -= self.dbeta[j] * v + dv * self.x0[j];
        }
        Ok(out)
    }

    /// `c_i(T)`, fitted so that `S^{δ_i}(0,T) = S_mkt^{δ_i}(0,T)`.
    pub fn c(&self, i: usize, t: f64) -> Result<f64> {
        let fwd = self
            .curves
            .forwards
            .get(i)
            .ok_or_else(|| Error::Input(format!("tenor index {i} out of range")))?;
        let s = spot_mult_spread(fwd, &self.curves.discount, t)?;
        let (int, lin) = self.spread_terms(i, t, &self.x0)?;
        Ok(s.ln() - int - lin)
    }

    /// Shifts on a uniform grid of the given step out to `t_max`.
    pub fn fit_shifts(&self, step: f64, t_max: f64) -> Result<FittedShifts> {
        if !(step > 0.0) || !(t_max >= 0.0) {
            return Err(Error::Input("grid step must be positive".into()));
        }
        let n = (t_max / step).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| (k as f64 * step).min(t_max)).collect();
        let lambda_integral = times.iter().map(|&t| self.lambda_integral(t)).collect::<Result<Vec<_>>>()?;
        let c = (0..self.factors())
            .map(|i| times.iter().map(|&t| self.c(i, t)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(FittedShifts { times, lambda_integral, c })
    }

    /// `𝒜₀(t,T)`.
    pub fn a0(&self, t: f64, big_t: f64) -> Result<f64> {
        if !(t <= big_t) || t < 0.0 {
            return Err(Error::Domain(format!("need 0 <= t <= T, got t={t}, T={big_t}")));
        }
        let (int, _) = self.zero_terms(big_t - t, &self.x0)?;
        Ok(-(self.lambda_integral(big_t)? - self.lambda_integral(t)?) - int)
    }

    /// `𝒜_i(t,T)`.
    pub fn ai(&self, i: usize, t: f64, big_t: f64) -> Result<f64> {
        if !(t <= big_t) || t < 0.0 {
            return Err(Error::Domain(format!("need 0 <= t <= T, got t={t}, T={big_t}")));
        }
        let (int, _) = self.spread_terms(i, big_t - t, &self.x0)?;
        Ok(self.c(i, big_t)? + int)
    }

    /// OIS zero-coupon bond `B(t,T)` given the factor state at `t`.
    pub fn bond_price(&self, t: f64, big_t: f64, x: &[f64]) -> Result<f64> {
        self.check_state(x)?;
        if !(t <= big_t) || t < 0.0 {
            return Err(Error::Domain(format!("need 0 <= t <= T, got t={t}, T={big_t}")));
        }
        if t == big_t {
            return Ok(1.0);
        }
        let (int, lin) = self.zero_terms(big_t - t, x)?;
        Ok((-(self.lambda_integral(big_t)? - self.lambda_integral(t)?) - int - lin).exp())
    }

    /// Forward multiplicative spread `S^{δ_i}(t,T)`.
    pub fn fwd_mult_spread(&self, i: usize, t: f64, big_t: f64, x: &[f64]) -> Result<f64> {
        self.check_state(x)?;
        self.tenor(i)?;
        if !(t <= big_t) || t < 0.0 {
            return Err(Error::Domain(format!("need 0 <= t <= T, got t={t}, T={big_t}")));
        }
        let (int, lin) = self.spread_terms(i, big_t - t, x)?;
        Ok((self.c(i, big_t)? + int + lin).exp())
    }

    /// Forward Ibor rate `L(t,T,δ_i)`.
    pub fn forward_ibor(&self, i: usize, t: f64, big_t: f64, x: &[f64]) -> Result<f64> {
        let d = self.tenor(i)?;
        let s = self.fwd_mult_spread(i, t, big_t, x)?;
        let ratio = self.bond_price(t, big_t, x)? / self.bond_price(t, big_t + d, x)?;
        Ok((s * ratio - 1.0) / d)
    }

    /// `ln(S^{δ_i}(T,T)/B(T,T+δ_i)) = c_i(T) - 𝒜₀(T,T+δ_i) + Σ_j p_j x_j`
    /// with loadings `p_j = 1_{j≤i} + v(δ_i,0,λ_j)`; returns `(constant, loadings)`.
    pub fn log_spot_ratio(&self, i: usize, big_t: f64) -> Result<(f64, Vec<f64>)> {
        let d = self.tenor(i)?;
        let konst = self.c(i, big_t)? - self.a0(big_t, big_t + d)?;
        let load = (0..self.factors())
            .map(|j| Ok(self.v0(j, d)?.0 + if j <= i { 1.0 } else { 0.0 }))
            .collect::<Result<Vec<_>>>()?;
        Ok((konst, load))
    }

    /// Short rate `r_t = ℓ(t) + Σ_j λ_j x_j`.
    pub fn short_rate(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.ell(t)? + self.lambda.iter().zip(x).map(|(l, x)| l * x).sum::<f64>())
    }

    /// Futures convexity adjustment `E[L(T,T,δ_i)|x_t] - L(t,T,δ_i)`.
    pub fn futures_convexity(&self, i: usize, t: f64, big_t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.futures_rate(i, t, big_t, x)? - self.forward_ibor(i, t, big_t, x)?)
    }

    /// Futures rate `E[L(T,T,δ_i)|x_t]`.
    pub fn futures_rate(&self, i: usize, t: f64, big_t: f64, x: &[f64]) -> Result<f64> {
        self.check_state(x)?;
        let d = self.tenor(i)?;
        if !(t <= big_t) || t < 0.0 {
            return Err(Error::Domain(format!("need 0 <= t <= T, got t={t}, T={big_t}")));
        }
        let tau = big_t - t;
        let (konst, load) = self.log_spot_ratio(i, big_t)?;
        let lb = self.mech.domain().lower_bound;
        let mut expo = konst;
        for j in 0..self.factors() {
            if x[j] == 0.0 && self.dbeta[j] == 0.0 {
                // this factor stays at zero
                continue;
            }
            let p = -load[j];
            if p < lb {
                return Err(Error::NotFinite(format!(
                    "futures rate: exponential moment of order {} exceeds the tempering bound {}",
                    load[j], -lb
                )));
            }
            if let Lifetime::Finite(life) = self.mech.lifetime(p, 0.0)? {
                if life <= tau {
                    return Err(Error::NotFinite(format!(
                        "futures rate: moment explodes at {life} before horizon {tau}"
                    )));
                }
            }
            let (v, int) = riccati::solve_at(&self.mech, p, 0.0, &[tau], &self.ode)?[0];
            expo -= self.dbeta[j] * int + v * x[j];
        }
        Ok((expo.exp() - 1.0) / d)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn pillars() -> Vec<f64> {
        vec![0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0]
    }

    pub(crate) fn flat_model(params: ModelParams) -> MultiCurveModel {
        let curves = MarketCurves::synthetic_flat(0.01, &params.tenors, &[1.001, 1.003], &pillars()).unwrap();
        MultiCurveModel::new(params, curves).unwrap()
    }

    #[test]
    fn lambda_and_x0() {
        let p = ModelParams::reference();
        let l = p.lambda();
        assert!((l[0] - 2.49999).abs() < 1e-15 && (l[1] - 1.0).abs() < 1e-15);
        let x = p.x0();
        assert!((x[0] - 0.00495).abs() < 1e-18 && (x[1] - 0.00012).abs() < 1e-15);
    }

    #[test]
    fn zero_model_shifts_are_market_logs() {
        let mut p = ModelParams::reference();
        p.beta = vec![0.0, 0.0];
        p.y0 = vec![0.0, 0.0];
        let m = flat_model(p);
        assert!(m.is_deterministic());
        for &t in &[0.3, 1.0, 4.2] {
            assert!((m.lambda_integral(t).unwrap() - 0.01 * t).abs() < 1e-14);
            let s = spot_mult_spread(&m.curves.forwards[1], &m.curves.discount, t).unwrap();
            assert!((m.c(1, t).unwrap() - s.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn perfect_fit_at_pillars() {
        let m = flat_model(ModelParams::reference());
        for &t in &pillars() {
            let b = m.bond_price(0.0, t, &m.x0.clone()).unwrap();
            assert!((b / m.curves.discount.discount(t).unwrap() - 1.0).abs() < 1e-12);
            for i in 0..2 {
                let s = m.fwd_mult_spread(i, 0.0, t, &m.x0.clone()).unwrap();
                let want = spot_mult_spread(&m.curves.forwards[i], &m.curves.discount, t).unwrap();
                assert!((s / want - 1.0).abs() < 1e-12);
                let l = m.forward_ibor(i, 0.0, t, &m.x0.clone()).unwrap();
                assert!((l - m.curves.forwards[i].forward(t).unwrap()).abs() < 1e-12);
            }
        }
        assert_eq!(m.bond_price(2.0, 2.0, &[0.3, 0.1]).unwrap(), 1.0);
    }

    #[test]
    fn loadings_signs() {
        let m = flat_model(ModelParams::reference());
        for &tau in &[0.1, 1.0, 5.0, 29.0] {
            for j in 0..2 {
                assert!(m.b0(j, tau).unwrap() <= 0.0);
                assert!(m.bi(0, j, tau).unwrap() >= 0.0);
                assert!(m.bi(0, j, tau).unwrap() <= m.bi(1, j, tau).unwrap());
            }
        }
    }

    #[test]
    fn ell_is_derivative_of_shift() {
        let m = flat_model(ModelParams::reference());
        for &t in &[0.7, 2.5, 6.0] {
            let h = 1e-5;
            let fd = (m.lambda_integral(t + h).unwrap() - m.lambda_integral(t - h).unwrap()) / (2.0 * h);
            assert!((m.ell(t).unwrap() - fd).abs() < 1e-8, "{t}");
        }
    }

    #[test]
    fn convexity_zero_when_deterministic() {
        let mut p = ModelParams::reference();
        p.beta = vec![0.0, 0.0];
        p.y0 = vec![0.0, 0.0];
        let m = flat_model(p);
        let c = m.futures_convexity(1, 0.0, 1.0, &[0.0, 0.0]).unwrap();
        assert!(c.abs() < 1e-13, "{c}");
    }

    #[test]
    fn convexity_not_finite_for_reference() {
        // the order-(1 + v(δ,0,λ_1)) moment exceeds θ/η for these parameters
        let m = flat_model(ModelParams::reference());
        let x0 = m.x0.clone();
        assert!(matches!(m.futures_convexity(1, 0.0, 1.0, &x0), Err(Error::NotFinite(_))));
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = ModelParams::reference();
        p.y0 = vec![0.006, 0.005];
        assert!(p.validate().is_err());
        let mut p = ModelParams::reference();
        p.b = 0.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::reference();
        p.mu = vec![1.0];
        assert!(p.validate().is_err());
    }
}
