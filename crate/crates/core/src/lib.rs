//! Secure hybrid beamforming (SHE) for a dual-function radar-communication
//! base station.
//!
//! The crate jointly designs an analog phase-shifter network, a digital
//! precoder carrying the user streams plus one integrated sensing-and-security
//! (I2S) stream, and a radar receive filter. The design maximizes the minimum
//! legitimate-user rate subject to worst-case eavesdropping-rate caps, a radar
//! SINR floor over an angle-uncertainty grid, a total power budget and the
//! constant-modulus constraint on the analog stage.
//!
//! Module map:
//! - [`array_model`]: steering vectors, radar channels, channel generation, angle grids.
//! - [`metrics`]: SINRs, rates, secrecy rates, radar SINR, MSE, detection probability.
//! - [`qcqp`]: interior-point solver for convex complex QCQPs.
//! - [`receive_filter`]: max-min radar SINR receive filter.
//! - [`hbf`]: hybrid beamformer inner loop (WMMSE + augmented Lagrangian).
//! - [`driver`]: outer loop, baselines and experiment sweeps.

pub mod array_model;
pub mod config;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod hbf;
pub mod io;
pub mod metrics;
pub mod qcqp;
pub mod receive_filter;

pub use error::{Result, SheError};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
