use crate::io::{self, input_err, num, ModelArtifact, RunManifest};
use crate::{Cli, Command, ModelArgs, SimArgs};
use anyhow::{Context, Result};
use cbi_flow::calibrate::{self, CalibrationProblem, LmConfig, ParamGroup, PricingConfig};
use cbi_flow::curves::{MarketCurves, VolQuote, VolSurface};
use cbi_flow::fourier::{caplet_strip_fft, CharFunction, FftConfig};
use cbi_flow::mechanisms::Lifetime;
use cbi_flow::model::{ModelParams, MultiCurveModel};
use cbi_flow::montecarlo::{self, SimConfig, Simulator};
use cbi_flow::quantize::{build_grid, caplet_price_quant};
use cbi_flow::par;
use clap::{Parser, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Product {
    Bond,
    Fra,
    Caplet,
    Convexity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Fft,
    Quant,
    Mc,
    All,
}

/// Parse and run; returns the process exit code.
pub fn run_argv(argv: Vec<String>) -> Result<u8> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return Ok(e.exit_code() as u8);
        }
    };
    if let Command::Replay { manifest } = &cli.command {
        let text = std::fs::read_to_string(manifest).map_err(|e| input_err(format!("cannot read {}: {e}", manifest.display())))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", manifest.display())))?;
        let mut again = vec![argv[0].clone()];
        again.extend(m.args);
        if let Some(t) = cli.threads {
            again.push(format!("--threads={t}"));
        }
        if argv.iter().any(|a| a == "--out" || a.starts_with("--out=")) {
            again.push(format!("--out={}", cli.out.display()));
        }
        return run_argv(again);
    }
    let recorded = recorded_args(&argv);
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(input_err("--threads must be at least 1"));
    }
    par::with_threads(threads, move || execute(cli, recorded))
}

/// Arguments worth recording: everything but the program name and the
/// thread cap, which never changes outputs.
fn recorded_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--threads" {
            skip = true;
            continue;
        }
        if a.starts_with("--threads=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

struct Loaded {
    model: MultiCurveModel,
    inputs: Vec<PathBuf>,
}

fn load_curves(args: &ModelArgs, params: &ModelParams) -> Result<(MarketCurves, Vec<PathBuf>)> {
    let disc_path = args.discount.as_ref().ok_or_else(|| input_err("--discount is required without --model"))?;
    let discount = io::read_discount(disc_path)?;
    let mut inputs = vec![disc_path.clone()];
    for &(t, _) in &args.forward {
        if !params.tenors.iter().any(|&d| (d - t).abs() < 1e-9) {
            return Err(input_err(format!("forward curve given for tenor {t}, which the parameters do not have")));
        }
    }
    let mut forwards = Vec::new();
    for &tenor in &params.tenors {
        let (_, path) = args
            .forward
            .iter()
            .find(|(t, _)| (t - tenor).abs() < 1e-9)
            .ok_or_else(|| input_err(format!("missing forward curve for tenor {tenor} (pass --forward {tenor}=<csv>)")))?;
        forwards.push(io::read_forward(tenor, path)?);
        inputs.push(path.clone());
    }
    Ok((MarketCurves::new(discount, forwards)?, inputs))
}

fn load_model(args: &ModelArgs) -> Result<Loaded> {
    let mut inputs = Vec::new();
    let (params, curves) = match &args.model {
        Some(path) => {
            let art = ModelArtifact::read(path)?;
            inputs.push(path.clone());
            let params = match &args.params {
                Some(p) => {
                    inputs.push(p.clone());
                    io::read_params(p)?
                }
                None => art.params.clone(),
            };
            (params, art.curves()?)
        }
        None => {
            let p = args.params.as_ref().ok_or_else(|| input_err("either --model or --params with curves is required"))?;
            let params = io::read_params(p)?;
            inputs.push(p.clone());
            let (curves, more) = load_curves(args, &params)?;
            inputs.extend(more);
            (params, curves)
        }
    };
    let model = MultiCurveModel::new(params, curves)?;
    Ok(Loaded { model, inputs })
}

fn write_manifest(cli_out: &Path, command: &str, args: Vec<String>, inputs: &[PathBuf], seed: Option<u64>) -> Result<()> {
    let overrides = args.iter().filter(|a| a.starts_with("--")).cloned().collect();
    let m = RunManifest {
        command: command.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args,
        inputs: io::hash_inputs(inputs)?,
        seed,
        overrides,
        out_dir: cli_out.display().to_string(),
    };
    io::write_json(&cli_out.join("manifest.json"), &m)
}

fn execute(cli: Cli, recorded: Vec<String>) -> Result<u8> {
    io::ensure_dir(&cli.out)?;
    let out = cli.out.clone();
    match cli.command {
        Command::Fit { model, grid_step } => {
            let l = load_model(&model)?;
            fit(&out, &l.model, grid_step)?;
            write_manifest(&out, "fit", recorded, &l.inputs, None)?;
            Ok(0)
        }
        Command::Price { model, product, tenor, expiry, strike, method, sim, fft_n, fft_mesh, damping, quant_n, p_norm } => {
            let l = load_model(&model)?;
            let req = PriceRequest { product, tenor, expiries: expiry, strikes: strike, method, sim: sim.clone(), fft_n, fft_mesh, damping, quant_n, p_norm };
            let code = price(&out, &l.model, &req)?;
            write_manifest(&out, "price", recorded, &l.inputs, Some(sim.seed))?;
            Ok(code)
        }
        Command::Simulate { model, sim, horizon, window, bins } => {
            let l = load_model(&model)?;
            simulate(&out, &l.model, &sim, horizon, window, bins)?;
            write_manifest(&out, "simulate", recorded, &l.inputs, Some(sim.seed))?;
            Ok(0)
        }
        Command::Calibrate { model, surface, free, freeze, max_iter } => {
            let l = load_model(&model)?;
            let s = io::read_surface(&surface)?;
            calibrate_cmd(&out, &l.model, s, &free, &freeze, max_iter)?;
            let mut inputs = l.inputs.clone();
            inputs.push(surface);
            write_manifest(&out, "calibrate", recorded, &inputs, None)?;
            Ok(0)
        }
        Command::Surface { model, tenor, expiry, strike } => {
            let l = load_model(&model)?;
            let mut quotes = Vec::new();
            for &d in &tenor {
                for &t in &expiry {
                    for &k in &strike {
                        quotes.push(VolQuote { expiry: t, tenor: d, strike: k, normal_vol: 0.0 });
                    }
                }
            }
            let grid = VolSurface::new(quotes)?;
            let s = calibrate::model_surface(&l.model.params, &l.model.curves, &grid, PricingConfig::default())?;
            io::write_surface(&out.join("surface.csv"), &s)?;
            write_manifest(&out, "surface", recorded, &l.inputs, None)?;
            Ok(0)
        }
        Command::Moments { params, p, q } => {
            let prm = io::read_params(&params)?;
            moments(&out, &prm, &p, &q)?;
            write_manifest(&out, "moments", recorded, &[params], None)?;
            Ok(0)
        }
        Command::Replay { .. } => unreachable!("handled before dispatch"),
    }
}

fn fit(out: &Path, model: &MultiCurveModel, grid_step: f64) -> Result<()> {
    let t_max = model.curves.max_extent();
    let shifts = model.fit_shifts(grid_step, t_max)?;
    let art = ModelArtifact::from_parts(model.params.clone(), &model.curves, shifts);
    io::write_json(&out.join("model.json"), &art)?;
    let x0 = &model.x0;
    let mut w = csv::Writer::from_path(out.join("fit_quality.csv"))?;
    w.write_record(["kind", "tenor", "maturity", "market", "model", "rel_error"])?;
    let mut worst: f64 = 0.0;
    for &t in &model.curves.discount.pillars {
        let mkt = model.curves.discount.discount(t)?;
        let mdl = model.bond_price(0.0, t, x0)?;
        let rel = (mdl - mkt) / mkt;
        worst = worst.max(rel.abs());
        w.write_record(["bond".into(), String::new(), num(t), num(mkt), num(mdl), num(rel)])?;
    }
    for (i, f) in model.curves.forwards.iter().enumerate() {
        for &t in &f.pillars {
            let mkt = cbi_flow::curves::spot_mult_spread(f, &model.curves.discount, t)?;
            let mdl = model.fwd_mult_spread(i, 0.0, t, x0)?;
            let rel = (mdl - mkt) / mkt;
            worst = worst.max(rel.abs());
            w.write_record(["spread".into(), num(f.tenor), num(t), num(mkt), num(mdl), num(rel)])?;
        }
    }
    w.flush()?;
    println!("fit: worst relative repricing error {}", num(worst));
    Ok(())
}

struct PriceRequest {
    product: Product,
    tenor: Option<f64>,
    expiries: Vec<f64>,
    strikes: Vec<f64>,
    method: Method,
    sim: SimArgs,
    fft_n: usize,
    fft_mesh: f64,
    damping: f64,
    quant_n: usize,
    p_norm: Option<f64>,
}

struct Row {
    product: &'static str,
    tenor: Option<f64>,
    expiry: f64,
    strike: Option<f64>,
    method: &'static str,
    value: std::result::Result<(f64, Option<f64>), String>,
}

fn tenor_index(model: &MultiCurveModel, tenor: Option<f64>) -> Result<usize> {
    let d = tenor.ok_or_else(|| input_err("--tenor is required for this product"))?;
    model
        .params
        .tenors
        .iter()
        .position(|&t| (t - d).abs() < 1e-9)
        .ok_or_else(|| input_err(format!("tenor {d} is not one of the model tenors {:?}", model.params.tenors)))
}

fn sim_config(sim: &SimArgs, horizon: f64, default_paths: usize) -> SimConfig {
    SimConfig {
        horizon,
        steps: sim.steps,
        eps: sim.eps_trunc,
        paths: sim.paths.unwrap_or(default_paths),
        seed: sim.seed,
        antithetic: sim.antithetic,
        record_jumps: false,
        small_jump_diffusion: !sim.no_small_jump_diffusion,
    }
}

fn price(out: &Path, model: &MultiCurveModel, req: &PriceRequest) -> Result<u8> {
    let x0 = model.x0.clone();
    let mut rows: Vec<Row> = Vec::new();
    let msg = |e: cbi_flow::Error| e.to_string();
    match req.product {
        Product::Bond => {
            for &t in &req.expiries {
                rows.push(Row {
                    product: "bond",
                    tenor: None,
                    expiry: t,
                    strike: None,
                    method: "closed_form",
                    value: model.bond_price(0.0, t, &x0).map(|v| (v, None)).map_err(msg),
                });
            }
        }
        Product::Fra | Product::Convexity => {
            let i = tenor_index(model, req.tenor)?;
            for &t in &req.expiries {
                let v = if req.product == Product::Fra {
                    model.forward_ibor(i, 0.0, t, &x0)
                } else {
                    model.futures_convexity(i, 0.0, t, &x0)
                };
                rows.push(Row {
                    product: if req.product == Product::Fra { "fra" } else { "convexity" },
                    tenor: req.tenor,
                    expiry: t,
                    strike: None,
                    method: "closed_form",
                    value: v.map(|v| (v, None)).map_err(msg),
                });
            }
        }
        Product::Caplet => {
            let i = tenor_index(model, req.tenor)?;
            if req.strikes.is_empty() {
                return Err(input_err("--strike is required for caplets"));
            }
            let mut expiries = req.expiries.clone();
            expiries.sort_by(f64::total_cmp);
            expiries.dedup();
            if expiries.iter().any(|&t| !(t > 0.0)) {
                return Err(input_err("caplet expiries must be positive"));
            }
            caplet_rows(out, model, i, &expiries, req, &mut rows)?;
        }
    }
    let mut w = csv::Writer::from_path(out.join("prices.csv"))?;
    w.write_record(["product", "tenor", "expiry", "strike", "method", "price", "stderr", "error"])?;
    for r in &rows {
        let (p, se, err) = match &r.value {
            Ok((p, se)) => (num(*p), se.map(num).unwrap_or_default(), String::new()),
            Err(e) => (String::new(), String::new(), e.clone()),
        };
        w.write_record([
            r.product.to_string(),
            r.tenor.map(num).unwrap_or_default(),
            num(r.expiry),
            r.strike.map(num).unwrap_or_default(),
            r.method.to_string(),
            p,
            se,
            err,
        ])?;
    }
    w.flush()?;
    if req.product == Product::Caplet && req.method == Method::All {
        comparison(out, &rows)?;
    }
    let failed = rows.iter().filter(|r| r.value.is_err()).count();
    println!("price: {} rows, {} failed", rows.len(), failed);
    Ok(if !rows.is_empty() && failed == rows.len() { 3 } else { 0 })
}

fn caplet_rows(out: &Path, model: &MultiCurveModel, i: usize, expiries: &[f64], req: &PriceRequest, rows: &mut Vec<Row>) -> Result<()> {
    let want = |m: Method| req.method == m || req.method == Method::All;
    let push_grid = |rows: &mut Vec<Row>, method: &'static str, res: std::result::Result<Vec<Vec<(f64, Option<f64>)>>, String>| {
        for (e, &t) in expiries.iter().enumerate() {
            for (s, &k) in req.strikes.iter().enumerate() {
                rows.push(Row {
                    product: "caplet",
                    tenor: req.tenor,
                    expiry: t,
                    strike: Some(k),
                    method,
                    value: res.as_ref().map(|g| g[e][s]).map_err(|m| m.clone()),
                });
            }
        }
    };
    if want(Method::Fft) {
        let cfg = FftConfig { n: req.fft_n, mesh: req.fft_mesh, ..FftConfig::default() };
        let res = CharFunction::new(model, i, 0.0, &model.x0, expiries)
            .and_then(|cf| caplet_strip_fft(&cf, &req.strikes, req.damping, cfg))
            .map(|g| g.into_iter().map(|r| r.into_iter().map(|p| (p, None)).collect()).collect())
            .map_err(|e| e.to_string());
        if let Err(e) = &res {
            if matches!(req.method, Method::Fft) && e.contains("FFT size") {
                return Err(input_err(e.clone()));
            }
        }
        push_grid(rows, "fft", res);
    }
    if want(Method::Quant) {
        let mut dump = csv::Writer::from_path(out.join("quant_grids.csv"))?;
        dump.write_record(["expiry", "index", "point", "weight"])?;
        for &t in expiries {
            let res = CharFunction::at_origin(model, i, t).and_then(|cf| {
                let p = req.p_norm.unwrap_or(if 2.0 < cf.strip_upper() { 2.0 } else { 1.0 });
                build_grid(&cf, req.quant_n, p)
            });
            if let Ok(g) = &res {
                for (k, (x, wgt)) in g.points.iter().zip(&g.weights).enumerate() {
                    dump.write_record([num(t), k.to_string(), num(*x), num(*wgt)])?;
                }
            }
            for &k in &req.strikes {
                let v = res
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|g| caplet_price_quant(g, k).map_err(|e| e.to_string()));
                rows.push(Row { product: "caplet", tenor: req.tenor, expiry: t, strike: Some(k), method: "quant", value: v.map(|p| (p, None)) });
            }
        }
        dump.flush()?;
    }
    if want(Method::Mc) {
        let horizon = *expiries.last().unwrap();
        let cfg = sim_config(&req.sim, horizon, 10_000);
        let res = montecarlo::mc_caplets(model, &cfg, i, expiries, &req.strikes)
            .map(|(g, _)| g.into_iter().map(|r| r.into_iter().map(|e| (e.mean, Some(e.stderr))).collect()).collect())
            .map_err(|e| e.to_string());
        push_grid(rows, "mc", res);
    }
    Ok(())
}

fn comparison(out: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("comparison.csv"))?;
    w.write_record(["tenor", "expiry", "strike", "fft", "quant", "mc", "mc_stderr", "quant_vs_fft", "mc_vs_fft", "mc_z"])?;
    let find = |m: &str, t: f64, k: f64| {
        rows.iter()
            .find(|r| r.method == m && r.expiry == t && r.strike == Some(k))
            .and_then(|r| r.value.as_ref().ok().copied())
    };
    for r in rows.iter().filter(|r| r.method == "fft") {
        let k = r.strike.unwrap();
        let f = r.value.as_ref().ok().map(|v| v.0);
        let q = find("quant", r.expiry, k).map(|v| v.0);
        let mc = find("mc", r.expiry, k);
        let rel = |x: Option<f64>| match (x, f) {
            (Some(x), Some(f)) if f != 0.0 => num((x - f) / f),
            _ => String::new(),
        };
        let z = match (mc, f) {
            (Some((m, Some(se))), Some(f)) if se > 0.0 => num((m - f) / se),
            _ => String::new(),
        };
        w.write_record([
            r.tenor.map(num).unwrap_or_default(),
            num(r.expiry),
            num(k),
            f.map(num).unwrap_or_default(),
            q.map(num).unwrap_or_default(),
            mc.map(|v| num(v.0)).unwrap_or_default(),
            mc.and_then(|v| v.1).map(num).unwrap_or_default(),
            rel(q),
            rel(mc.map(|v| v.0)),
            z,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LongRun {
    factor: usize,
    window: [f64; 2],
    time_average: f64,
    ergodic_mean: f64,
    rel_diff: f64,
}

#[derive(Serialize)]
struct SimStats {
    config: SimConfig,
    ordering_violations: usize,
    floored_fraction: f64,
    jump_intensity: f64,
    compensator_rate: f64,
    acceptance_rate: f64,
    long_run: Vec<LongRun>,
    cluster: montecarlo::ClusterStats,
}

fn simulate(out: &Path, model: &MultiCurveModel, sim: &SimArgs, horizon: f64, window: f64, bins: usize) -> Result<()> {
    let mut cfg = sim_config(sim, horizon, 100);
    cfg.record_jumps = true;
    let simulator = Simulator::for_model(model, &cfg)?;
    let bundle = montecarlo::simulate_with(&simulator)?;
    let m = bundle.factors;
    let mut w = csv::Writer::from_path(out.join("paths.csv"))?;
    let mut header = vec!["path_id".to_string(), "time".into()];
    header.extend((1..=m).map(|i| format!("Y{i}")));
    header.push("r".into());
    header.extend((1..=m).map(|i| format!("spread{i}")));
    w.write_record(&header)?;
    for p in 0..bundle.paths {
        for (n, &t) in bundle.times.iter().enumerate() {
            let x = bundle.x(p, n);
            let mut rec = vec![p.to_string(), num(t)];
            rec.extend(bundle.y(p, n).iter().map(|&y| num(y)));
            rec.push(num(model.short_rate(t, &x)?));
            for i in 0..m {
                rec.push(num(model.fwd_mult_spread(i, t, t, &x)?));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    // time averages over the second half of the horizon
    let half = bundle.times.len() / 2;
    let dt = cfg.dt();
    let mut long_run = Vec::new();
    for i in 0..m {
        let mut acc = 0.0;
        for p in 0..bundle.paths {
            let mut s = 0.0;
            for n in half..bundle.times.len() - 1 {
                s += 0.5 * dt * (bundle.y(p, n)[i] + bundle.y(p, n + 1)[i]);
            }
            acc += s;
        }
        let span = bundle.times[bundle.times.len() - 1] - bundle.times[half];
        let avg = acc / (span * bundle.paths as f64);
        let erg = model.mech.ergodic_mean(model.params.beta[i])?;
        long_run.push(LongRun { factor: i + 1, window: [bundle.times[half], horizon], time_average: avg, ergodic_mean: erg, rel_diff: avg / erg - 1.0 });
    }
    let stats = SimStats {
        ordering_violations: bundle.ordering_violations(),
        floored_fraction: bundle.floored_fraction(),
        jump_intensity: simulator.jump_intensity(),
        compensator_rate: simulator.compensator_rate(),
        acceptance_rate: simulator.acceptance_rate(),
        long_run,
        cluster: montecarlo::cluster_stats(&bundle, window.min(horizon), bins)?,
        config: cfg,
    };
    io::write_json(&out.join("stats.json"), &stats)?;
    println!(
        "simulate: {} paths, {} ordering violations, floored fraction {}",
        bundle.paths,
        stats.ordering_violations,
        num(stats.floored_fraction)
    );
    Ok(())
}

fn parse_groups(names: &[String]) -> Result<Vec<ParamGroup>> {
    names
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<ParamGroup>().map_err(|e| input_err(e.to_string())))
        .collect()
}

fn calibrate_cmd(out: &Path, model: &MultiCurveModel, surface: VolSurface, free: &[String], freeze: &[String], max_iter: usize) -> Result<()> {
    let frozen = parse_groups(freeze)?;
    let free: Vec<ParamGroup> = parse_groups(free)?.into_iter().filter(|g| !frozen.contains(g)).collect();
    let init = model.params.clone();
    let problem = CalibrationProblem::new(surface, model.curves.clone(), init.clone(), &free)?;
    let start = std::time::Instant::now();
    let report = calibrate::calibrate(&problem, &init, LmConfig { max_iter, ..LmConfig::default() })?;
    io::write_json(&out.join("calibration.json"), &report)?;
    io::write_json(&out.join("params.json"), &report.params)?;
    let mut w = csv::Writer::from_path(out.join("calibration_quotes.csv"))?;
    w.write_record(["expiry", "tenor", "strike", "market_vol", "model_vol", "market_price", "model_price", "residual", "price_sq_error"])?;
    for q in &report.quotes {
        let sq = q.model_price.map(|p| (p - q.market_price).powi(2));
        w.write_record([
            num(q.expiry),
            num(q.tenor),
            num(q.strike),
            num(q.market_vol),
            q.model_vol.map(num).unwrap_or_default(),
            num(q.market_price),
            q.model_price.map(num).unwrap_or_default(),
            num(q.residual),
            sq.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    // wall time goes to stderr only, so output files stay reproducible
    eprintln!("calibrate: {} iterations in {:.1} s", report.iterations, start.elapsed().as_secs_f64());
    println!(
        "calibrate: RMS normal vol error {} bp ({}, {})",
        num(report.rms_vol * 1e4),
        if report.converged { "converged" } else { "not converged" },
        report.reason
    );
    Ok(())
}

#[derive(Serialize)]
struct LifetimeRow {
    p: f64,
    q: f64,
    lifetime: Option<f64>,
    infinite: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct MomentsReport {
    stable: bool,
    theta_eff: f64,
    domain_lower_bound: f64,
    phi_at_boundary: f64,
    ergodic_means: Vec<f64>,
    first_exponential_moment_finite: bool,
    lifetimes: Vec<LifetimeRow>,
}

fn moments(out: &Path, params: &ModelParams, ps: &[f64], qs: &[f64]) -> Result<()> {
    let mech = params.mechanism()?;
    let mut lifetimes = Vec::new();
    for &p in ps {
        for &q in qs {
            let (lifetime, infinite, error) = match mech.lifetime(p, q) {
                Ok(Lifetime::Infinite) => (None, true, None),
                Ok(Lifetime::Finite(t)) => (Some(t), false, None),
                Err(e) => (None, false, Some(e.to_string())),
            };
            lifetimes.push(LifetimeRow { p, q, lifetime, infinite, error });
        }
    }
    let report = MomentsReport {
        stable: mech.is_stable(),
        theta_eff: mech.theta_eff(),
        domain_lower_bound: mech.domain().lower_bound,
        phi_at_boundary: mech.phi_at_boundary(),
        ergodic_means: if mech.b > 0.0 { mech.flow_ergodic_means()? } else { Vec::new() },
        first_exponential_moment_finite: mech.exp_moment_finite(1.0),
        lifetimes,
    };
    io::write_json(&out.join("moments.json"), &report).context("writing moments")?;
    println!("moments: stable = {}, ergodic means {:?}", report.stable, report.ergodic_means);
    Ok(())
}
