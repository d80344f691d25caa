//! CBI-driven multi-curve interest-rate model: branching mechanisms, the
//! generalized Riccati flow, curve bootstrapping, Fourier caplet pricing,
//! quantization and Monte Carlo, plus calibration to caplet surfaces.

pub mod calibrate;
pub mod curves;
pub mod error;
pub mod fourier;
pub mod mechanisms;
pub mod model;
pub mod montecarlo;
pub mod par;
pub mod quad;
pub mod quantize;
pub mod riccati;
pub mod special;

pub use error::{Error, Result};
