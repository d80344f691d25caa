//! Discount and forward curves, multiplicative spreads, and the Bachelier
//! caplet formula with its implied-vol inverse.

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf};
use serde::{Deserialize, Serialize};

/// Shape-preserving piecewise cubic Hermite interpolant (Fritsch-Butland
/// slopes, scipy's PCHIP end conditions).
#[derive(Clone, Debug, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Input(format!("interpolant needs matching non-empty data ({} x, {} y)", x.len(), y.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("interpolation nodes must be strictly increasing".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite interpolation data".into()));
        }
        let n = x.len();
        let mut d = vec![0.0; n];
        if n == 2 {
            let s = (y[1] - y[0]) / (x[1] - x[0]);
            d = vec![s, s];
        } else if n > 2 {
            let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
            for k in 1..n - 1 {
                if del[k - 1] * del[k] <= 0.0 {
                    d[k] = 0.0;
                } else {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Ok(Pchip { x, y, d })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.clamp(1, n - 1) - 1,
        }
    }

    /// Value inside `[x_0, x_{n-1}]`; callers handle extrapolation.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return self.y[0];
        }
        let k = self.segment(t);
        if t == self.x[k] {
            return self.y[k];
        }
        if t == self.x[k + 1] {
            return self.y[k + 1];
        }
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        self.y[k] * (2.0 * s3 - 3.0 * s2 + 1.0)
            + self.d[k] * h * (s3 - 2.0 * s2 + s)
            + self.y[k + 1] * (-2.0 * s3 + 3.0 * s2)
            + self.d[k + 1] * h * (s3 - s2)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return 0.0;
        }
        let k = self.segment(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        (self.y[k] * (6.0 * s2 - 6.0 * s) + self.y[k + 1] * (6.0 * s - 6.0 * s2)) / h
            + self.d[k] * (3.0 * s2 - 4.0 * s + 1.0)
            + self.d[k + 1] * (3.0 * s2 - 2.0 * s)
    }

    pub fn first_slope(&self) -> f64 {
        self.d[0]
    }

    pub fn last_slope(&self) -> f64 {
        *self.d.last().unwrap()
    }
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// OIS discount curve `T ↦ B(0,T)`, monotone cubic in `ln B`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountCurve {
    pub pillars: Vec<f64>,
    pub discounts: Vec<f64>,
    log_interp: Pchip,
}

impl DiscountCurve {
    /// A pillar at 0 with value 1 is added when absent.
    pub fn new(pillars: Vec<f64>, discounts: Vec<f64>) -> Result<Self> {
        if pillars.is_empty() {
            return Err(Error::Input("empty discount curve".into()));
        }
        if pillars.len() != discounts.len() {
            return Err(Error::Input("discount curve: pillar/value count mismatch".into()));
        }
        if let Some(b) = discounts.iter().find(|&&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::Input(format!("discount factors must be positive, got {b}")));
        }
        if pillars[0] < 0.0 {
            return Err(Error::Input(format!("negative pillar {}", pillars[0])));
        }
        let (mut x, mut y) = (Vec::with_capacity(pillars.len() + 1), Vec::with_capacity(pillars.len() + 1));
        if pillars[0] > 0.0 {
            x.push(0.0);
            y.push(0.0);
        } else if (discounts[0] - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("B(0,0) must be 1, got {}", discounts[0])));
        }
        x.extend_from_slice(&pillars);
        y.extend(discounts.iter().map(|b| b.ln()));
        if pillars[0] == 0.0 {
            y[0] = 0.0;
        }
        let log_interp = Pchip::new(x, y)?;
        Ok(DiscountCurve { pillars, discounts, log_interp })
    }

    /// `B(0,T) = e^{-rT}`, sampled on the given pillars.
    pub fn flat(rate: f64, pillars: &[f64]) -> Result<Self> {
        Self::new(pillars.to_vec(), pillars.iter().map(|t| (-rate * t).exp()).collect())
    }

    pub fn last_pillar(&self) -> f64 {
        *self.pillars.last().unwrap()
    }

    pub fn ln_discount(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("discount needs finite T >= 0, got {t}")));
        }
        let last = *self.log_interp.nodes().last().unwrap();
        if t > last {
            let y_last = *self.log_interp.values().last().unwrap();
            return Ok(y_last + self.log_interp.last_slope() * (t - last));
        }
        Ok(self.log_interp.eval(t))
    }

    pub fn discount(&self, t: f64) -> Result<f64> {
        Ok(self.ln_discount(t)?.exp())
    }

    /// Instantaneous forward `-∂_T ln B(0,T)`.
    pub fn inst_forward(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("forward needs finite T >= 0, got {t}")));
        }
        let last = *self.log_interp.nodes().last().unwrap();
        if t >= last {
            return Ok(-self.log_interp.last_slope());
        }
        Ok(-self.log_interp.deriv(t))
    }

    /// Simply compounded OIS forward `(B(0,T)/B(0,T+δ) - 1)/δ`.
    pub fn ois_forward(&self, t: f64, delta: f64) -> Result<f64> {
        Ok((self.discount(t)? / self.discount(t + delta)? - 1.0) / delta)
    }
}

/// Forward Ibor curve `T ↦ L(0,T,δ)` for one tenor.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCurve {
    pub tenor: f64,
    pub pillars: Vec<f64>,
    pub forwards: Vec<f64>,
    interp: Pchip,
}

impl ForwardCurve {
    pub fn new(tenor: f64, pillars: Vec<f64>, forwards: Vec<f64>) -> Result<Self> {
        if !(tenor > 0.0) || !tenor.is_finite() {
            return Err(Error::Input(format!("tenor must be positive, got {tenor}")));
        }
        if pillars.is_empty() {
            return Err(Error::Input(format!("empty forward curve for tenor {tenor}")));
        }
        if pillars[0] < 0.0 {
            return Err(Error::Input(format!("negative pillar {}", pillars[0])));
        }
        let interp = Pchip::new(pillars.clone(), forwards.clone())?;
        Ok(ForwardCurve { tenor, pillars, forwards, interp })
    }

    /// Flat forward curve.
    pub fn flat(tenor: f64, rate: f64, pillars: &[f64]) -> Result<Self> {
        Self::new(tenor, pillars.to_vec(), vec![rate; pillars.len()])
    }

    /// Forward curve whose spreads over `ois` equal `spread` at every pillar.
    pub fn from_spread(tenor: f64, ois: &DiscountCurve, spread: f64, pillars: &[f64]) -> Result<Self> {
        let fwd: Result<Vec<f64>> = pillars
            .iter()
            .map(|&t| Ok((spread * (1.0 + tenor * ois.ois_forward(t, tenor)?) - 1.0) / tenor))
            .collect();
        Self::new(tenor, pillars.to_vec(), fwd?)
    }

    pub fn last_pillar(&self) -> f64 {
        *self.pillars.last().unwrap()
    }

    /// Monotone cubic between pillars, flat outside.
    pub fn forward(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("forward needs finite T >= 0, got {t}")));
        }
        let x = self.interp.nodes();
        let t = t.clamp(x[0], *x.last().unwrap());
        Ok(self.interp.eval(t))
    }
}

/// One discount curve and one forward curve per tenor, tenors ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketCurves {
    pub discount: DiscountCurve,
    pub forwards: Vec<ForwardCurve>,
}

impl MarketCurves {
    pub fn new(discount: DiscountCurve, forwards: Vec<ForwardCurve>) -> Result<Self> {
        if forwards.windows(2).any(|w| !(w[1].tenor > w[0].tenor)) {
            return Err(Error::Input("forward curves must have strictly increasing tenors".into()));
        }
        Ok(MarketCurves { discount, forwards })
    }

    pub fn tenors(&self) -> Vec<f64> {
        self.forwards.iter().map(|f| f.tenor).collect()
    }

    /// Longest time any curve is quoted on, including the tenor accrual.
    pub fn max_extent(&self) -> f64 {
        self.forwards
            .iter()
            .map(|f| f.last_pillar() + f.tenor)
            .fold(self.discount.last_pillar(), f64::max)
    }

    /// Flat OIS curve with constant spreads for each tenor.
    pub fn synthetic_flat(rate: f64, tenors: &[f64], spreads: &[f64], pillars: &[f64]) -> Result<Self> {
        if tenors.len() != spreads.len() {
            return Err(Error::Input("one spread per tenor".into()));
        }
        let discount = DiscountCurve::flat(rate, pillars)?;
        let fwd: Result<Vec<ForwardCurve>> = tenors
            .iter()
            .zip(spreads)
            .map(|(&d, &s)| ForwardCurve::from_spread(d, &discount, s, pillars))
            .collect();
        Self::new(discount, fwd?)
    }
}

/// `S^δ(0,T) = (1 + δL(0,T,δ)) / (1 + δL^OIS(0,T,δ))`.
pub fn spot_mult_spread(fwd: &ForwardCurve, ois: &DiscountCurve, t: f64) -> Result<f64> {
    let d = fwd.tenor;
    Ok((1.0 + d * fwd.forward(t)?) * ois.discount(t + d)? / ois.discount(t)?)
}

/// One caplet quote.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolQuote {
    pub expiry: f64,
    pub strike: f64,
    pub tenor: f64,
    pub normal_vol: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VolSurface {
    pub quotes: Vec<VolQuote>,
}

impl VolSurface {
    pub fn new(quotes: Vec<VolQuote>) -> Result<Self> {
        for (k, q) in quotes.iter().enumerate() {
            if !(q.expiry > 0.0) || !q.expiry.is_finite() {
                return Err(Error::Input(format!("quote {}: expiry must be positive, got {}", k + 1, q.expiry)));
            }
            if !(q.tenor > 0.0) || !q.tenor.is_finite() {
                return Err(Error::Input(format!("quote {}: tenor must be positive, got {}", k + 1, q.tenor)));
            }
            if !(q.normal_vol >= 0.0) || !q.normal_vol.is_finite() {
                return Err(Error::Input(format!("quote {}: vol must be >= 0, got {}", k + 1, q.normal_vol)));
            }
            if !q.strike.is_finite() {
                return Err(Error::Input(format!("quote {}: non-finite strike", k + 1)));
            }
        }
        Ok(VolSurface { quotes })
    }
}

/// Bachelier caplet `B δ σ√T (n(z) + z N(z))`, `z = (F - K)/(σ√T)`.
pub fn bachelier_price(b_settle: f64, delta: f64, fwd: f64, strike: f64, sigma: f64, t_expiry: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("normal vol must be >= 0, got {sigma}")));
    }
    let sd = sigma * t_expiry.max(0.0).sqrt();
    if sd == 0.0 {
        return Ok(b_settle * delta * (fwd - strike).max(0.0));
    }
    let z = (fwd - strike) / sd;
    Ok(b_settle * delta * sd * (norm_pdf(z) + z * norm_cdf(z)))
}

/// Normal implied vol of a caplet price by safeguarded Newton on a bracket.
pub fn implied_normal_vol(price: f64, b_settle: f64, delta: f64, fwd: f64, strike: f64, t_expiry: f64) -> Result<f64> {
    let scale = b_settle * delta;
    if !(scale > 0.0) || !(t_expiry > 0.0) {
        return Err(Error::Domain("implied vol needs positive annuity and expiry".into()));
    }
    let intrinsic = scale * (fwd - strike).max(0.0);
    if !price.is_finite() || price < intrinsic - 1e-15 * scale.max(intrinsic) {
        return Err(Error::Domain(format!("price {price} below intrinsic {intrinsic}")));
    }
    if price <= intrinsic {
        return Ok(0.0);
    }
    let f = |s: f64| bachelier_price(b_settle, delta, fwd, strike, s, t_expiry).unwrap() - price;
    let mut lo = 0.0;
    let mut hi = 0.01;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Domain(format!("price {price} not attainable by any normal vol")));
        }
    }
    let sqrt_t = t_expiry.sqrt();
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = f(s);
        if v == 0.0 {
            return Ok(s);
        }
        if v < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let vega = scale * sqrt_t * norm_pdf((fwd - strike) / (s * sqrt_t));
        let mut next = s - v / vega;
        if !(next > lo && next < hi) || vega <= 0.0 {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-15 * s.max(1e-10) || hi - lo <= 1e-16 {
            return Ok(next);
        }
        s = next;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discount_at_zero_and_pillars() {
        let c = DiscountCurve::new(vec![1.0, 2.0], vec![0.99, 0.97]).unwrap();
        assert_eq!(c.discount(0.0).unwrap(), 1.0);
        assert!((c.discount(1.0).unwrap() - 0.99).abs() < 1e-16);
        assert!((c.discount(2.0).unwrap() - 0.97).abs() < 1e-16);
    }

    #[test]
    fn discount_matches_scipy_pchip() {
        // scipy.interpolate.PchipInterpolator on (0, ln .99, ln .97)
        let c = DiscountCurve::new(vec![1.0, 2.0], vec![0.99, 0.97]).unwrap();
        assert!((c.discount(1.5).unwrap() - 0.981_434_713_357_838_7).abs() < 1e-15);
        assert!((c.discount(0.5).unwrap() - 0.996_057_272_079_485_5).abs() < 1e-15);
        let ext = c.discount(3.0).unwrap();
        assert!((ext - 0.97 * (-0.025_588_139_520_059_96f64).exp()).abs() < 1e-15);

        let c = DiscountCurve::new(vec![0.5, 1.0, 2.0, 5.0, 10.0], vec![0.997, 0.993, 0.985, 0.95, 0.9]).unwrap();
        let want = [
            (0.25, 0.998_616_476_065_521_2, 0.006_045_725_997_729_83),
            (0.7, 0.995_482_416_400_964_6, 0.008_172_784_600_427_007),
            (1.5, 0.989_154_292_348_081_6, 0.007_774_267_381_704_647),
            (3.3, 0.970_577_543_859_764_9, 0.012_699_842_796_642_666),
            (7.0, 0.928_898_471_323_165_6, 0.010_985_779_342_100_56),
        ];
        for (t, b, f) in want {
            assert!((c.discount(t).unwrap() - b).abs() < 1e-15, "{t}");
            assert!((c.inst_forward(t).unwrap() - f).abs() < 1e-14, "{t}");
        }
    }

    #[test]
    fn empty_curve_rejected() {
        assert!(DiscountCurve::new(vec![], vec![]).is_err());
        assert!(DiscountCurve::new(vec![1.0], vec![-0.5]).is_err());
    }

    #[test]
    fn spread_examples() {
        let ois = DiscountCurve::new(vec![1.0, 1.5], vec![0.99, 0.984]).unwrap();
        let fwd = ForwardCurve::flat(0.5, 0.01, &[1.0]).unwrap();
        let s = spot_mult_spread(&fwd, &ois, 1.0).unwrap();
        assert!((s - 1.005 * 0.984 / 0.99).abs() < 1e-15);

        // forward equal to the OIS forward gives spread one
        let ois = DiscountCurve::flat(0.02, &[1.0, 2.0, 5.0]).unwrap();
        let fwd = ForwardCurve::from_spread(0.5, &ois, 1.0, &[1.0, 2.0, 3.0]).unwrap();
        for &t in &[1.0, 2.0, 3.0] {
            assert!((spot_mult_spread(&fwd, &ois, t).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn bachelier_examples() {
        let atm = bachelier_price(0.99, 0.5, 0.01, 0.01, 0.006, 2.0).unwrap();
        let want = 0.99 * 0.5 * 0.006 * 2f64.sqrt() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((atm - want).abs() < 1e-17);
        assert!((bachelier_price(0.99, 0.5, 0.01, 0.005, 0.0, 1.0).unwrap() - 0.002475).abs() < 1e-17);
        // scipy quadrature of the Gaussian payoff
        let v = bachelier_price(0.98, 0.5, 0.01, 0.02, 0.006, 1.0).unwrap();
        assert!((v - 5.829_006_191_388_905e-5).abs() < 1e-10 * 5.8e-5, "{v:e}");
        assert!(bachelier_price(1.0, 0.5, 0.0, 0.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn implied_vol_special_cases() {
        let p = 0.99 * 0.5 * 0.004;
        assert_eq!(implied_normal_vol(p, 0.99, 0.5, 0.01, 0.006, 1.0).unwrap(), 0.0);
        let atm = bachelier_price(0.99, 0.5, 0.01, 0.01, 0.007, 1.0).unwrap();
        assert!((implied_normal_vol(atm, 0.99, 0.5, 0.01, 0.01, 1.0).unwrap() - 0.007).abs() < 1e-13);
        assert!(implied_normal_vol(p * 0.5, 0.99, 0.5, 0.01, 0.006, 1.0).is_err());
    }
}
