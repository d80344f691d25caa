use cbi_flow::calibrate::{CalibrationProblem, ParamGroup};
use cbi_flow::curves::{bachelier_price, implied_normal_vol, MarketCurves, Pchip, VolQuote, VolSurface};
use cbi_flow::fourier::{CharFunction, GaussConfig, SpectralStrip};
use cbi_flow::mechanisms::{Lifetime, MechanismParams};
use cbi_flow::model::{ModelParams, MultiCurveModel};
use cbi_flow::montecarlo::{self, SimConfig, Simulator};
use cbi_flow::riccati::{solve, RiccatiRequest, SolverOptions};
use num_complex::Complex64;
use proptest::prelude::*;

const PILLARS: [f64; 8] = [0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0];

fn curves() -> MarketCurves {
    MarketCurves::synthetic_flat(0.01, &[0.25, 0.5], &[1.001, 1.003], &PILLARS).unwrap()
}

fn mechanism() -> impl Strategy<Value = MechanismParams> {
    (0.01..1.0f64, 0.0..0.5f64, 0.01..1.0f64, 1.0..4.0f64, 1.05..1.95f64)
        .prop_map(|(b, s, eta, r, a)| MechanismParams::new(b, s, eta, eta * r, a, vec![0.1]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cir_riccati_matches_closed_form(b in 0.1..2.0f64, sigma in 0.1..1.5f64, p in 0.0..3.0f64, t in 0.01..10.0f64) {
        let m = MechanismParams::cir(b, sigma, vec![0.2]).unwrap();
        let got = solve(&m, RiccatiRequest { p, q: 0.0, horizon: t }, &SolverOptions::default()).unwrap().end().0;
        // q = 0: v = p e^{-bt} / (1 + p σ²(1 - e^{-bt}) / (2b))
        let e = (-b * t).exp();
        let want = p * e / (1.0 + p * sigma * sigma * (1.0 - e) / (2.0 * b));
        prop_assert!((got - want).abs() <= 1e-9 * want + 1e-12 * p, "{got} {want}");
    }

    #[test]
    fn mechanism_is_convex_and_starts_at_zero(m in mechanism(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        prop_assert_eq!(m.phi(0.0).unwrap(), 0.0);
        prop_assert!((m.dphi(0.0) - m.b).abs() < 1e-10 * (1.0 + m.b.abs()));
        let lb = m.domain().lower_bound;
        let (x, y) = (lb + (3.0 - lb) * u, lb + (3.0 - lb) * v);
        let mid = 0.5 * (x + y);
        let chord = 0.5 * (m.phi(x).unwrap() + m.phi(y).unwrap());
        prop_assert!(m.phi(mid).unwrap() <= chord + 1e-12 * chord.abs().max(1.0));
        let c = m.phi_c(Complex64::new(x, 0.0)).unwrap();
        prop_assert_eq!(c.re, m.phi(x).unwrap());
    }

    #[test]
    fn lifetime_is_infinite_from_p_q_upwards(m in mechanism(), q in 0.0..1.0f64, dp in 0.0..2.0f64) {
        let pq = m.p_q(q);
        prop_assert!(matches!(m.lifetime(pq + dp, q).unwrap(), Lifetime::Infinite));
        prop_assert!(m.phi_unchecked(pq) <= q + 1e-12);
    }

    #[test]
    fn lifetime_decreases_as_p_moves_down(m in mechanism(), q in 0.0..0.5f64, a in 0.05..0.45f64) {
        let pq = m.p_q(q);
        let lb = m.domain().lower_bound;
        prop_assume!(pq - lb > 1e-3);
        let hi = lb + (1.0 - a) * (pq - lb);
        let lo = lb + a * (pq - lb);
        match (m.lifetime(lo, q).unwrap(), m.lifetime(hi, q).unwrap()) {
            (Lifetime::Finite(t_lo), Lifetime::Finite(t_hi)) => prop_assert!(t_lo <= t_hi),
            other => prop_assert!(false, "expected finite lifetimes, got {:?}", other),
        }
    }

    #[test]
    fn bachelier_implied_vol_round_trips(fwd in -0.01..0.05f64, k in -0.01..0.05f64, sigma in 1e-4..0.03f64, t in 0.1..10.0f64) {
        let p = bachelier_price(0.97, 0.5, fwd, k, sigma, t).unwrap();
        prop_assume!(p - 0.97 * 0.5 * (fwd - k).max(0.0) > 1e-12);
        let iv = implied_normal_vol(p, 0.97, 0.5, fwd, k, t).unwrap();
        prop_assert!((iv - sigma).abs() < 1e-6 * sigma, "{iv} {sigma}");
    }

    #[test]
    fn pchip_is_monotone_between_monotone_nodes(steps in prop::collection::vec(0.0..1.0f64, 3..10), s in 0.0..1.0f64) {
        let x: Vec<f64> = (0..steps.len()).map(|i| i as f64).collect();
        let y: Vec<f64> = steps.iter().scan(0.0, |acc, d| { *acc += d; Some(*acc) }).collect();
        let f = Pchip::new(x.clone(), y.clone()).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            prop_assert!((f.eval(*xi) - yi).abs() < 1e-14);
        }
        let t = s * (x.len() - 1) as f64;
        prop_assert!(f.eval(t) <= f.eval((t + 0.1).min(x[x.len() - 1])) + 1e-14);
    }

    #[test]
    fn transforms_round_trip(db in -0.3..0.3f64, dt in 0.0..2.0f64, a in 1.01..1.99f64, y2 in 0.0..0.01f64) {
        let mut p = ModelParams::reference();
        p.b *= 1.0 + db;
        p.theta = p.eta * (1.0 + dt.max(0.01));
        p.alpha = a;
        p.y0 = vec![p.y0[0], p.y0[0] + y2];
        let q = vec![VolQuote { expiry: 1.0, tenor: 0.25, strike: 0.01, normal_vol: 0.006 }];
        let pr = match CalibrationProblem::new(VolSurface::new(q).unwrap(), curves(), p.clone(), &ParamGroup::ALL) {
            Ok(pr) => pr,
            // parameter draws outside the admissible model region
            Err(_) => return Ok(()),
        };
        let back = pr.decode(&pr.encode(&p).unwrap()).unwrap();
        for (x, y) in [(back.b, p.b), (back.theta, p.theta), (back.alpha, p.alpha), (back.y0[1], p.y0[1])] {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-6), "{x} {y}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn caplet_prices_fall_and_bend_up_in_strike(t in 0.25..5.0f64, i in 0usize..2, theta in 0.06..0.3f64) {
        let p = ModelParams { theta, ..ModelParams::reference() };
        let m = MultiCurveModel::new(p, curves()).unwrap();
        let cf = CharFunction::at_origin(&m, i, t).unwrap();
        let strip = SpectralStrip::gauss(&cf, -0.5, GaussConfig::default()).unwrap();
        let ks: Vec<f64> = (0..9).map(|k| -0.005 + 0.004 * k as f64).collect();
        let px = strip.prices(0, &ks).unwrap();
        for w in px.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
        for w in px.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12);
        }
        prop_assert!(px.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn stability_matches_the_boundary_value(m in mechanism()) {
        let at = m.phi_at_boundary();
        prop_assert!(at.is_finite());
        prop_assert_eq!(m.is_stable(), at <= 0.0);
        let thr = m.stability_threshold();
        prop_assume!((m.b - thr).abs() > 1e-9);
        prop_assert_eq!(m.is_stable(), m.b > thr);
    }

    #[test]
    fn simulated_flow_stays_ordered(m in mechanism(), y0 in prop::collection::vec(0.0..0.02f64, 3), seed in 0u64..1000) {
        let mech = MechanismParams::new(m.b, m.sigma, m.eta, m.theta, m.alpha, vec![0.001, 0.002, 0.004]).unwrap();
        let mut ys = y0.clone();
        ys.sort_by(f64::total_cmp);
        let x0: Vec<f64> = ys.iter().enumerate().map(|(j, y)| if j == 0 { *y } else { y - ys[j - 1] }).collect();
        let cfg = SimConfig { horizon: 2.0, steps: 200, paths: 50, seed, ..SimConfig::default() };
        let sim = Simulator::new(&mech, &x0, &cfg).unwrap();
        prop_assert_eq!(montecarlo::ordering_violations(&sim), 0);
    }
}
