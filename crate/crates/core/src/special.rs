//! Special functions: incomplete gamma with negative order, complex log-gamma
//! and Beta, Gauss-Legendre rules, and the standard normal.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::sync::OnceLock;

/// Upper incomplete gamma `Γ(a, x) = ∫ₓ^∞ u^{a-1} e^{-u} du` for any real `a`
/// and `x > 0`.
pub fn upper_incomplete_gamma(a: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("incomplete gamma needs x > 0, got {x}")));
    }
    if !a.is_finite() {
        return Err(Error::Domain(format!("incomplete gamma order {a}")));
    }
    if a > 0.0 {
        return Ok(positive_order(a, x));
    }
    // lift a by whole steps into (0, 1], then walk back down with
    // Γ(s, x) = (Γ(s+1, x) - x^s e^{-x}) / s
    let k = (-a).floor() as i64 + 1;
    let top = a + k as f64;
    let mut s = top;
    let mut g = if top.abs() < 1e-300 {
        exp_integral_e1(x)
    } else {
        positive_order(top, x)
    };
    let ex = (-x).exp();
    for _ in 0..k {
        s -= 1.0;
        if s == 0.0 {
            g = exp_integral_e1(x);
            continue;
        }
        g = (g - x.powf(s) * ex) / s;
    }
    Ok(g)
}

fn positive_order(a: f64, x: f64) -> f64 {
    statrs::function::gamma::gamma_ur(a, x) * statrs::function::gamma::gamma(a)
}

/// Exponential integral `E₁(x)` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        -EULER - x.ln() + sum
    } else {
        // modified Lentz on the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Complex log-gamma (some branch; only `exp` of combinations is used).
pub fn ln_gamma_c(z: Complex64) -> Complex64 {
    let mut z = z;
    let mut shift = Complex64::new(0.0, 0.0);
    while z.re < 0.5 {
        shift += z.ln();
        z += 1.0;
    }
    let z1 = z - 1.0;
    let mut x = Complex64::new(LANCZOS[0], 0.0);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        x += c / (z1 + i as f64);
    }
    let t = z1 + LANCZOS_G + 0.5;
    let half_ln_2pi = 0.918_938_533_204_672_8;
    half_ln_2pi + (z1 + 0.5) * t.ln() - t + x.ln() - shift
}

/// Complete Beta function `B(a, b)` for complex arguments off the poles.
pub fn beta_c(a: Complex64, b: Complex64) -> Complex64 {
    (ln_gamma_c(a) + ln_gamma_c(b) - ln_gamma_c(a + b)).exp()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Cached rules for the orders used by the pricers.
pub fn gl_rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static G16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static G32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static G64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static G128: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        16 => G16.get_or_init(|| gauss_legendre(16)),
        32 => G32.get_or_init(|| gauss_legendre(32)),
        64 => G64.get_or_init(|| gauss_legendre(64)),
        128 => G128.get_or_init(|| gauss_legendre(128)),
        _ => panic!("no cached Gauss-Legendre rule of order {n}"),
    }
}

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}
