//! File formats: curve and surface CSVs, the fitted-model artifact, run
//! manifests and number formatting.

use anyhow::{anyhow, Context, Result};
use cbi_flow::curves::{DiscountCurve, ForwardCurve, MarketCurves, VolQuote, VolSurface};
use cbi_flow::model::{FittedShifts, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Rejected user input; maps to exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(InputError(msg.into()))
}

/// Round-trip decimal with 17 significant digits.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

/// Two numeric columns with a header row; returns the column pairs.
fn read_pairs(path: &Path, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| input_err(format!("{}: line {line}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(input_err(format!("{}: line {line}: expected 2 fields (maturity,{what}), got {}", path.display(), rec.len())));
        }
        let parse = |s: &str, field: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| input_err(format!("{}: line {line}: field '{field}' is not a number: '{s}'", path.display())))
        };
        a.push(parse(&rec[0], "maturity")?);
        b.push(parse(&rec[1], what)?);
    }
    if a.is_empty() {
        return Err(input_err(format!("{}: no data rows", path.display())));
    }
    Ok((a, b))
}

pub fn read_discount(path: &Path) -> Result<DiscountCurve> {
    let (t, b) = read_pairs(path, "discount")?;
    DiscountCurve::new(t, b).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

pub fn read_forward(tenor: f64, path: &Path) -> Result<ForwardCurve> {
    let (t, f) = read_pairs(path, "forward")?;
    ForwardCurve::new(tenor, t, f).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

/// `<tenor>=<path>` as given to `--forward`.
pub fn parse_forward_arg(s: &str) -> std::result::Result<(f64, PathBuf), String> {
    let (t, p) = s.split_once('=').ok_or_else(|| format!("expected <tenor>=<csv>, got '{s}'"))?;
    let tenor: f64 = t.trim().parse().map_err(|_| format!("bad tenor '{t}'"))?;
    Ok((tenor, PathBuf::from(p.trim())))
}

/// Surface CSV with header `expiry,tenor,strike,normal_vol`.
pub fn read_surface(path: &Path) -> Result<VolSurface> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| input_err(format!("{}: {e}", path.display())))?.clone();
    let want = ["expiry", "tenor", "strike", "normal_vol"];
    if headers.len() != 4 || headers.iter().zip(want).any(|(h, w)| h != w) {
        return Err(input_err(format!("{}: header must be {}", path.display(), want.join(","))));
    }
    let mut quotes = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| input_err(format!("{}: row {row}: {e}", path.display())))?;
        if rec.len() != 4 {
            return Err(input_err(format!("{}: row {row}: expected 4 fields, got {}", path.display(), rec.len())));
        }
        let mut v = [0.0; 4];
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = rec[j]
                .parse::<f64>()
                .map_err(|_| input_err(format!("{}: row {row}: field '{}' is not a number: '{}'", path.display(), want[j], &rec[j])))?;
        }
        quotes.push(VolQuote { expiry: v[0], tenor: v[1], strike: v[2], normal_vol: v[3] });
    }
    VolSurface::new(quotes).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

pub fn write_surface(path: &Path, s: &VolSurface) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["expiry", "tenor", "strike", "normal_vol"])?;
    for q in &s.quotes {
        w.write_record([num(q.expiry), num(q.tenor), num(q.strike), num(q.normal_vol)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveData {
    pub tenor: Option<f64>,
    pub pillars: Vec<f64>,
    pub values: Vec<f64>,
}

/// Fitted model written by `fit` and read back by the other commands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub params: ModelParams,
    pub discount: CurveData,
    pub forwards: Vec<CurveData>,
    pub shifts: FittedShifts,
}

impl ModelArtifact {
    pub fn curves(&self) -> Result<MarketCurves> {
        let d = DiscountCurve::new(self.discount.pillars.clone(), self.discount.values.clone())?;
        let f = self
            .forwards
            .iter()
            .map(|c| {
                let tenor = c.tenor.ok_or_else(|| input_err("forward curve without tenor in model artifact"))?;
                Ok(ForwardCurve::new(tenor, c.pillars.clone(), c.values.clone())?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MarketCurves::new(d, f)?)
    }

    pub fn from_parts(params: ModelParams, curves: &MarketCurves, shifts: FittedShifts) -> Self {
        ModelArtifact {
            params,
            discount: CurveData { tenor: None, pillars: curves.discount.pillars.clone(), values: curves.discount.discounts.clone() },
            forwards: curves
                .forwards
                .iter()
                .map(|f| CurveData { tenor: Some(f.tenor), pillars: f.pillars.clone(), values: f.forwards.clone() })
                .collect(),
            shifts,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    pub inputs: Vec<InputHash>,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    pub out_dir: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn hash_inputs(paths: &[PathBuf]) -> Result<Vec<InputHash>> {
    paths
        .iter()
        .map(|p| Ok(InputHash { path: p.display().to_string(), sha256: sha256_file(p)? }))
        .collect()
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| anyhow!("cannot create {}: {e}", dir.display()))
}
