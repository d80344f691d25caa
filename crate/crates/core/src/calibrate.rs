//! Levenberg-Marquardt calibration to a normal-vol caplet surface.
//!
//! Free parameters live in an unconstrained space: logs for `b`, `σ`, `η`
//! and `μ`, `θ = η(1 + e^u)`, `α = 1 + logistic(u)`, and cumulative softplus
//! sums for the ordered vectors `β` and `y₀`. Anything the transforms cannot
//! express (stability, moment conditions) is handled by a penalty residual.

use crate::curves::{bachelier_price, implied_normal_vol, MarketCurves, VolSurface};
use crate::error::{Error, Result};
use crate::fourier::{CharFunction, GaussConfig, SpectralStrip};
use crate::model::{ModelParams, MultiCurveModel};
use crate::par;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Residual assigned to every quote when a trial point is infeasible.
pub const PENALTY: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    B,
    Sigma,
    Eta,
    Theta,
    Alpha,
    Beta,
    Mu,
    Y0,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::B,
        ParamGroup::Sigma,
        ParamGroup::Eta,
        ParamGroup::Theta,
        ParamGroup::Alpha,
        ParamGroup::Beta,
        ParamGroup::Mu,
        ParamGroup::Y0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::B => "b",
            ParamGroup::Sigma => "sigma",
            ParamGroup::Eta => "eta",
            ParamGroup::Theta => "theta",
            ParamGroup::Alpha => "alpha",
            ParamGroup::Beta => "beta",
            ParamGroup::Mu => "mu",
            ParamGroup::Y0 => "y0",
        }
    }

    fn is_vector(self) -> bool {
        matches!(self, ParamGroup::Beta | ParamGroup::Mu | ParamGroup::Y0)
    }
}

impl FromStr for ParamGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .iter()
            .copied()
            .find(|g| g.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Input(format!("unknown parameter '{s}' (expected one of b, sigma, eta, theta, alpha, beta, mu, y0)")))
    }
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn softplus_inv(v: f64) -> f64 {
    if v > 30.0 {
        v + (-(-v).exp()).ln_1p()
    } else {
        v.exp_m1().ln()
    }
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn encode_increasing(v: &[f64], name: &str) -> Result<Vec<f64>> {
    let mut prev = 0.0;
    v.iter()
        .map(|&x| {
            let d = x - prev;
            prev = x;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Input(format!("{name} must be positive and strictly increasing to be calibrated, got {v:?}")));
            }
            Ok(softplus_inv(d))
        })
        .collect()
}

fn decode_increasing(u: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    u.iter()
        .map(|&x| {
            acc += softplus(x);
            acc
        })
        .collect()
}

fn positive_log(x: f64, name: &str) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Input(format!("{name} must be positive to be calibrated, got {x}")));
    }
    Ok(x.ln())
}

/// Caplet pricing used inside the objective.
#[derive(Clone, Copy, Debug)]
pub struct PricingConfig {
    pub strip: GaussConfig,
    pub damping: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig { strip: GaussConfig::default(), damping: -0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationProblem {
    pub surface: VolSurface,
    pub curves: MarketCurves,
    /// Values of the frozen parameters, and the tenors.
    pub base: ModelParams,
    pub free: Vec<ParamGroup>,
    pub weights: Vec<f64>,
    pub pricing: PricingConfig,
    /// `(tenor index, expiries)` groups and each quote's `(group, expiry index)`.
    groups: Vec<(usize, Vec<f64>)>,
    slots: Vec<(usize, usize)>,
    market: Vec<QuoteMarket>,
}

#[derive(Clone, Copy, Debug)]
struct QuoteMarket {
    delta: f64,
    annuity: f64,
    forward: f64,
    price: f64,
}

impl CalibrationProblem {
    /// Validates the quotes against the curves and the frozen and initial
    /// parameters (`base` must be an admissible model).
    pub fn new(surface: VolSurface, curves: MarketCurves, base: ModelParams, free: &[ParamGroup]) -> Result<Self> {
        let mut free_sorted: Vec<ParamGroup> = Vec::new();
        for g in ParamGroup::ALL {
            if free.contains(&g) {
                free_sorted.push(g);
            }
        }
        MultiCurveModel::new(base.clone(), curves.clone())?;
        if surface.quotes.is_empty() {
            return Err(Error::Input("empty volatility surface".into()));
        }
        let tenors = curves.tenors();
        let mut groups: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut market = Vec::with_capacity(surface.quotes.len());
        let mut idx = Vec::with_capacity(surface.quotes.len());
        for (k, q) in surface.quotes.iter().enumerate() {
            let i = tenors
                .iter()
                .position(|&d| (d - q.tenor).abs() < 1e-9)
                .ok_or_else(|| Error::Input(format!("quote {}: tenor {} has no forward curve", k + 1, q.tenor)))?;
            let annuity = curves.discount.discount(q.expiry + q.tenor)?;
            let forward = curves.forwards[i].forward(q.expiry)?;
            if !(1.0 + q.tenor * q.strike > 0.0) {
                return Err(Error::Input(format!("quote {}: 1 + δK must be positive", k + 1)));
            }
            let price = bachelier_price(annuity, q.tenor, forward, q.strike, q.normal_vol, q.expiry)?;
            market.push(QuoteMarket { delta: q.tenor, annuity, forward, price });
            idx.push(i);
            match groups.iter_mut().find(|g| g.0 == i) {
                Some(g) => g.1.push(q.expiry),
                None => groups.push((i, vec![q.expiry])),
            }
        }
        groups.sort_by_key(|g| g.0);
        for g in groups.iter_mut() {
            g.1.sort_by(f64::total_cmp);
            g.1.dedup();
        }
        let slots = surface
            .quotes
            .iter()
            .zip(&idx)
            .map(|(q, &i)| {
                let gi = groups.iter().position(|g| g.0 == i).unwrap();
                let e = groups[gi].1.iter().position(|&t| t == q.expiry).unwrap();
                (gi, e)
            })
            .collect();
        let n = surface.quotes.len();
        let problem = CalibrationProblem {
            surface,
            curves,
            base,
            free: free_sorted,
            weights: vec![1.0; n],
            pricing: PricingConfig::default(),
            groups,
            slots,
            market,
        };
        problem.encode(&problem.base)?;
        Ok(problem)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.surface.quotes.len() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Input(format!("need {} finite non-negative weights", self.surface.quotes.len())));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn with_pricing(mut self, pricing: PricingConfig) -> Self {
        self.pricing = pricing;
        self
    }

    /// Length of the unconstrained vector.
    pub fn dimension(&self) -> usize {
        let m = self.base.beta.len();
        self.free.iter().map(|g| if g.is_vector() { m } else { 1 }).sum()
    }

    /// Names of the unconstrained coordinates, e.g. `beta[1]`.
    pub fn coordinate_names(&self) -> Vec<String> {
        let m = self.base.beta.len();
        let mut out = Vec::new();
        for g in &self.free {
            if g.is_vector() {
                out.extend((0..m).map(|j| format!("{}[{}]", g.name(), j + 1)));
            } else {
                out.push(g.name().to_string());
            }
        }
        out
    }

    /// Free parameters of `p` in unconstrained coordinates.
    pub fn encode(&self, p: &ModelParams) -> Result<Vec<f64>> {
        let mut u = Vec::with_capacity(self.dimension());
        for g in &self.free {
            match g {
                ParamGroup::B => u.push(positive_log(p.b, "b")?),
                ParamGroup::Sigma => u.push(positive_log(p.sigma, "sigma")?),
                ParamGroup::Eta => u.push(positive_log(p.eta, "eta")?),
                ParamGroup::Theta => {
                    let excess = p.theta / p.eta - 1.0;
                    u.push(positive_log(excess, "theta/eta - 1")?);
                }
                ParamGroup::Alpha => {
                    let s = p.alpha - 1.0;
                    if !(s > 0.0 && s < 1.0) {
                        return Err(Error::Input(format!("alpha must lie in (1, 2), got {}", p.alpha)));
                    }
                    u.push((s / (1.0 - s)).ln());
                }
                ParamGroup::Beta => u.extend(encode_increasing(&p.beta, "beta")?),
                ParamGroup::Mu => {
                    for &x in &p.mu {
                        u.push(positive_log(x, "mu")?);
                    }
                }
                ParamGroup::Y0 => u.extend(encode_increasing(&p.y0, "y0")?),
            }
        }
        Ok(u)
    }

    /// Model parameters for an unconstrained vector; frozen values come
    /// from `base`.
    pub fn decode(&self, u: &[f64]) -> Result<ModelParams> {
        if u.len() != self.dimension() {
            return Err(Error::Input(format!("parameter vector has length {}, expected {}", u.len(), self.dimension())));
        }
        let m = self.base.beta.len();
        let mut p = self.base.clone();
        let mut k = 0;
        // η first so θ decodes against the new value
        let mut theta_u = None;
        for g in &self.free {
            let take = if g.is_vector() { m } else { 1 };
            let s = &u[k..k + take];
            k += take;
            match g {
                ParamGroup::B => p.b = s[0].exp(),
                ParamGroup::Sigma => p.sigma = s[0].exp(),
                ParamGroup::Eta => p.eta = s[0].exp(),
                ParamGroup::Theta => theta_u = Some(s[0]),
                ParamGroup::Alpha => p.alpha = 1.0 + logistic(s[0]),
                ParamGroup::Beta => p.beta = decode_increasing(s),
                ParamGroup::Mu => p.mu = s.iter().map(|x| x.exp()).collect(),
                ParamGroup::Y0 => p.y0 = decode_increasing(s),
            }
        }
        if let Some(t) = theta_u {
            p.theta = p.eta * (1.0 + t.exp());
        }
        Ok(p)
    }

    /// Model normal vols and prices per quote; `None` where the model cannot
    /// be built or priced.
    pub fn model_quotes(&self, p: &ModelParams) -> Vec<Option<(f64, f64)>> {
        let n = self.surface.quotes.len();
        let model = match MultiCurveModel::new(p.clone(), self.curves.clone()) {
            Ok(m) => m,
            Err(_) => return vec![None; n],
        };
        let x0 = model.x0.clone();
        let strips = par::map(self.groups.len(), |g| {
            let (i, ex) = &self.groups[g];
            let cf = CharFunction::new(&model, *i, 0.0, &x0, ex)?;
            SpectralStrip::gauss(&cf, self.pricing.damping, self.pricing.strip)
        });
        self.surface
            .quotes
            .iter()
            .zip(&self.slots)
            .zip(&self.market)
            .map(|((q, &(g, e)), mk)| {
                let strip = strips[g].as_ref().ok()?;
                let price = strip.price(e, q.strike).ok()?;
                let vol = implied_normal_vol(price, mk.annuity, mk.delta, mk.forward, q.strike, q.expiry).ok()?;
                Some((vol, price))
            })
            .collect()
    }

    /// Weighted `σ_mkt - σ_model` per quote, with [`PENALTY`] on quotes the
    /// model cannot price.
    pub fn residuals_at(&self, p: &ModelParams) -> Vec<f64> {
        self.model_quotes(p)
            .iter()
            .zip(&self.surface.quotes)
            .zip(&self.weights)
            .map(|((mq, q), w)| match mq {
                Some((vol, _)) => w * (q.normal_vol - vol),
                None => w * PENALTY,
            })
            .collect()
    }

    /// Residuals for an unconstrained vector.
    pub fn objective(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.residuals_at(&self.decode(u)?))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LmConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Forward-difference step relative to `max(|u|, 1)`.
    pub fd_step: f64,
    /// Initial damping relative to the largest diagonal of `JᵀJ`.
    pub tau: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { max_iter: 500, grad_tol: 1e-8, step_tol: 1e-10, fd_step: 1e-5, tau: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `½‖r‖²` at the current point after this iteration.
    pub cost: f64,
    pub rms_vol: f64,
    pub lambda: f64,
    pub step_norm: f64,
    pub gain_ratio: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuoteFit {
    pub expiry: f64,
    pub tenor: f64,
    pub strike: f64,
    pub market_vol: f64,
    pub model_vol: Option<f64>,
    pub market_price: f64,
    pub model_price: Option<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub initial: ModelParams,
    pub params: ModelParams,
    pub free: Vec<ParamGroup>,
    pub unconstrained: Vec<f64>,
    pub initial_rms_vol: f64,
    pub rms_vol: f64,
    pub rms_price: f64,
    pub quotes: Vec<QuoteFit>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub reason: String,
    pub trace: Vec<TraceEntry>,
}

fn rms(r: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    let sq: Vec<f64> = r.iter().map(|x| x * x).collect();
    (par::pairwise_sum(&sq) / r.len() as f64).sqrt()
}

fn half_norm2(r: &[f64]) -> f64 {
    let sq: Vec<f64> = r.iter().map(|x| x * x).collect();
    0.5 * par::pairwise_sum(&sq)
}

/// Solve the symmetric positive definite system `a x = b` by Cholesky.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    Some(x)
}

fn jacobian(problem: &CalibrationProblem, u: &[f64], r: &[f64], h_rel: f64) -> Result<Vec<Vec<f64>>> {
    let cols = par::map(u.len(), |j| -> Result<Vec<f64>> {
        let h = h_rel * u[j].abs().max(1.0);
        let mut v = u.to_vec();
        v[j] += h;
        let rh = problem.objective(&v)?;
        Ok(rh.iter().zip(r).map(|(a, b)| (a - b) / h).collect())
    });
    cols.into_iter().collect()
}

/// Levenberg-Marquardt from `init` with a gain-ratio damping update.
pub fn calibrate(problem: &CalibrationProblem, init: &ModelParams, config: LmConfig) -> Result<CalibrationReport> {
    MultiCurveModel::new(init.clone(), problem.curves.clone())?;
    let mut u = problem.encode(init)?;
    let n = u.len();
    let mut r = problem.objective(&u)?;
    let mut evaluations = 1;
    let initial_rms = rms(&r);
    let mut cost = half_norm2(&r);
    let mut trace = Vec::new();
    let mut reason = String::from("iteration limit");
    let mut converged = false;
    let mut iterations = 0;
    if n == 0 {
        reason = "no free parameters".into();
        converged = true;
    }
    let mut lambda = -1.0;
    let mut nu = 2.0;
    let mut need_jac = true;
    let mut jtj = vec![vec![0.0; n]; n];
    let mut g = vec![0.0; n];
    while n > 0 && iterations < config.max_iter {
        if need_jac {
            let jac = jacobian(problem, &u, &r, config.fd_step)?;
            evaluations += n;
            for a in 0..n {
                g[a] = jac[a].iter().zip(&r).map(|(x, y)| x * y).sum();
                for b in 0..=a {
                    let v: f64 = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
                    jtj[a][b] = v;
                    jtj[b][a] = v;
                }
            }
            need_jac = false;
            if g.iter().fold(0.0f64, |m, x| m.max(x.abs())) < config.grad_tol {
                reason = "gradient below tolerance".into();
                converged = true;
                break;
            }
            if lambda < 0.0 {
                let dmax = (0..n).map(|a| jtj[a][a]).fold(0.0, f64::max);
                lambda = config.tau * dmax.max(1e-300);
            }
        }
        iterations += 1;
        // Marquardt scaling by the diagonal of JᵀJ
        let dmax = (0..n).map(|a| jtj[a][a]).fold(0.0, f64::max);
        let diag: Vec<f64> = (0..n).map(|a| jtj[a][a].max(1e-12 * dmax).max(1e-300)).collect();
        let mut a = jtj.clone();
        for k in 0..n {
            a[k][k] += lambda * diag[k];
        }
        let neg_g: Vec<f64> = g.iter().map(|x| -x).collect();
        let h = match cholesky_solve(&a, &neg_g) {
            Some(h) => h,
            None => {
                lambda *= nu;
                nu *= 2.0;
                trace.push(TraceEntry {
                    iteration: iterations,
                    cost,
                    rms_vol: (2.0 * cost / r.len() as f64).sqrt(),
                    lambda,
                    step_norm: 0.0,
                    gain_ratio: -1.0,
                    accepted: false,
                });
                continue;
            }
        };
        let step_norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u_norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if step_norm <= config.step_tol * (u_norm + config.step_tol) {
            reason = "step below tolerance".into();
            converged = true;
            break;
        }
        let trial: Vec<f64> = u.iter().zip(&h).map(|(a, b)| a + b).collect();
        let r_new = problem.objective(&trial)?;
        evaluations += 1;
        let cost_new = half_norm2(&r_new);
        let predicted: f64 = 0.5 * (0..n).map(|k| h[k] * (lambda * diag[k] * h[k] - g[k])).sum::<f64>();
        let rho = if predicted > 0.0 { (cost - cost_new) / predicted } else { -1.0 };
        let accepted = rho > 0.0 && cost_new < cost;
        if accepted {
            u = trial;
            r = r_new;
            cost = cost_new;
            lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            need_jac = true;
        } else {
            lambda *= nu;
            nu *= 2.0;
        }
        trace.push(TraceEntry {
            iteration: iterations,
            cost,
            rms_vol: (2.0 * cost / r.len() as f64).sqrt(),
            lambda,
            step_norm,
            gain_ratio: rho,
            accepted,
        });
        if cost == 0.0 {
            reason = "exact fit".into();
            converged = true;
            break;
        }
        if !lambda.is_finite() || lambda > 1e300 {
            reason = "damping overflow".into();
            break;
        }
    }
    let params = problem.decode(&u)?;
    let quotes_model = problem.model_quotes(&params);
    let quotes: Vec<QuoteFit> = problem
        .surface
        .quotes
        .iter()
        .zip(&quotes_model)
        .zip(&problem.market)
        .zip(&r)
        .map(|(((q, mq), mk), &res)| QuoteFit {
            expiry: q.expiry,
            tenor: q.tenor,
            strike: q.strike,
            market_vol: q.normal_vol,
            model_vol: mq.map(|x| x.0),
            market_price: mk.price,
            model_price: mq.map(|x| x.1),
            residual: res,
        })
        .collect();
    let price_err: Vec<f64> = quotes
        .iter()
        .map(|q| q.model_price.map(|p| p - q.market_price).unwrap_or(f64::INFINITY))
        .collect();
    Ok(CalibrationReport {
        initial: init.clone(),
        params,
        free: problem.free.clone(),
        unconstrained: u,
        initial_rms_vol: initial_rms,
        rms_vol: rms(&r),
        rms_price: rms(&price_err),
        quotes,
        residuals: r,
        iterations,
        evaluations,
        converged,
        reason,
        trace,
    })
}

/// Normal vols the model assigns to the given quotes, e.g. to build a
/// synthetic surface. The input vols are ignored.
pub fn model_surface(params: &ModelParams, curves: &MarketCurves, quotes: &VolSurface, pricing: PricingConfig) -> Result<VolSurface> {
    let mut probe = quotes.clone();
    probe.quotes.iter_mut().for_each(|q| q.normal_vol = 0.0);
    let problem = CalibrationProblem::new(probe, curves.clone(), params.clone(), &[])?.with_pricing(pricing);
    let vols = problem.model_quotes(params);
    let mut out = quotes.clone();
    for (k, (q, v)) in out.quotes.iter_mut().zip(vols).enumerate() {
        q.normal_vol = v
            .ok_or_else(|| Error::Convergence(format!("quote {}: model price has no normal implied vol", k + 1)))?
            .0;
    }
    Ok(out)
}
