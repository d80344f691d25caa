//! `cbi`: fit, price, simulate and calibrate the CBI multi-curve model from
//! the command line.
//!
//! Exit codes: 0 success, 2 input validation, 3 numerical failure.

mod commands;
mod io;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cbi", version, about = "CBI-driven multi-curve interest-rate model", args_override_self = true)]
pub struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Fitted model written by `fit`.
    #[arg(long, conflicts_with_all = ["discount", "forward"])]
    pub model: Option<PathBuf>,
    /// Model parameters (JSON). Overrides the parameters stored in `--model`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// OIS discount curve CSV `maturity,discount`.
    #[arg(long)]
    pub discount: Option<PathBuf>,
    /// Forward curve CSV `maturity,forward` for a tenor, as `<tenor>=<csv>`.
    #[arg(long, value_parser = io::parse_forward_arg)]
    pub forward: Vec<(f64, PathBuf)>,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Jump truncation level.
    #[arg(long, default_value_t = 1e-3)]
    pub eps_trunc: f64,
    #[arg(long)]
    pub antithetic: bool,
    /// Drop the jumps below the truncation level instead of replacing them
    /// with a Brownian term of the same variance.
    #[arg(long)]
    pub no_small_jump_diffusion: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the deterministic shifts to the curves and report repricing errors.
    Fit {
        #[command(flatten)]
        model: ModelArgs,
        /// Spacing of the reported shift grid.
        #[arg(long, default_value_t = 0.25)]
        grid_step: f64,
    },
    /// Price bonds, FRAs, caplets or futures convexity adjustments.
    Price {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "caplet")]
        product: commands::Product,
        /// Tenor of the underlying rate (caplet, fra, convexity).
        #[arg(long)]
        tenor: Option<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        expiry: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        strike: Vec<f64>,
        #[arg(long, value_enum, default_value = "fft")]
        method: commands::Method,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 32768)]
        fft_n: usize,
        #[arg(long, default_value_t = 0.05)]
        fft_mesh: f64,
        /// Damping of the Fourier inversion.
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        damping: f64,
        #[arg(long, default_value_t = 10)]
        quant_n: usize,
        /// Quantization norm; by default 2, or 1 when the law has no second moment.
        #[arg(long)]
        p_norm: Option<f64>,
    },
    /// Simulate flow paths; writes paths.csv and stats.json.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        /// Window length for the jump-count statistics.
        #[arg(long, default_value_t = 1.0)]
        window: f64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Calibrate to a normal-vol caplet surface.
    Calibrate {
        #[command(flatten)]
        model: ModelArgs,
        /// Surface CSV `expiry,tenor,strike,normal_vol`.
        #[arg(long)]
        surface: PathBuf,
        /// Parameters to calibrate.
        #[arg(long, value_delimiter = ',', default_value = "b,sigma,eta,theta,alpha")]
        free: Vec<String>,
        /// Parameters to hold at their initial values.
        #[arg(long, value_delimiter = ',')]
        freeze: Vec<String>,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
    },
    /// Write the model's normal-vol surface on a grid (synthetic data).
    Surface {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        tenor: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        expiry: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        strike: Vec<f64>,
    },
    /// Lifetime, moment and stationary-law diagnostics of the parameters.
    Moments {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1,-0.5,0,1")]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        q: Vec<f64>,
    },
    /// Rerun the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<io::InputError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<cbi_flow::Error>() {
            return if e.is_input() { 2 } else { 3 };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    match commands::run_argv(argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
