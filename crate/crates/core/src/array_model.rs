//! Array geometry, steering vectors, radar channels and channel generation.
//!
//! Angles are in degrees at every public interface.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SheError};
use crate::{CMatrix, CVector};

/// Default number of propagation paths per legitimate-user channel.
pub const DEFAULT_LUE_PATHS: usize = 4;

/// Uniform linear arrays at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_tx: usize,
    pub num_rx: usize,
    /// Element spacing over wavelength.
    pub spacing_ratio: f64,
}

impl ArrayGeometry {
    pub fn new(num_tx: usize, num_rx: usize) -> Self {
        Self { num_tx, num_rx, spacing_ratio: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tx == 0 || self.num_rx == 0 {
            return Err(SheError::InvalidConfig("array sizes must be positive".into()));
        }
        if !(self.spacing_ratio > 0.0) || !self.spacing_ratio.is_finite() {
            return Err(SheError::InvalidConfig("spacing_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// All scenario constants. Powers, noise levels and SINRs are linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub geometry: ArrayGeometry,
    pub num_rf: usize,
    pub num_users: usize,
    pub power_budget: f64,
    /// Per-user noise power.
    pub noise_user: Vec<f64>,
    pub noise_eue: f64,
    pub noise_radar: f64,
    pub target_angle: f64,
    pub angle_uncertainty: f64,
    pub grid_step: f64,
    pub clutter_angles: Vec<f64>,
    pub target_amplitude: Complex64,
    pub clutter_amplitudes: Vec<Complex64>,
    /// Eavesdropper channel estimate. `None` draws it per seed from the
    /// same multipath model as the legitimate users.
    pub eue_estimate: Option<Vec<Complex64>>,
    pub csi_error_var: f64,
    pub num_samples: usize,
    /// Worst-case eavesdropping-rate caps in bits/s/Hz, one per user.
    pub eue_rate_caps: Vec<f64>,
    pub radar_sinr_target: f64,
    pub false_alarm: f64,
    pub lue_paths: usize,
}

impl SystemConfig {
    /// Small scenario used for tests and quick runs.
    pub fn desk() -> Self {
        let clutter_angles = vec![-45.0, 30.0, 60.0];
        Self {
            geometry: ArrayGeometry::new(16, 4),
            num_rf: 4,
            num_users: 2,
            power_budget: 1.0,
            noise_user: vec![crate::db_to_linear(-10.0); 2],
            noise_eue: crate::db_to_linear(-20.0),
            noise_radar: crate::db_to_linear(-20.0),
            target_angle: 0.0,
            angle_uncertainty: 1.0,
            grid_step: 0.5,
            clutter_amplitudes: vec![amplitude_from_db(15.0); clutter_angles.len()],
            clutter_angles,
            target_amplitude: amplitude_from_db(10.0),
            eue_estimate: None,
            csi_error_var: 0.01,
            num_samples: 10,
            eue_rate_caps: vec![0.5; 2],
            radar_sinr_target: crate::db_to_linear(10.0),
            false_alarm: 1e-4,
            lue_paths: DEFAULT_LUE_PATHS,
        }
    }

    /// Full-size scenario: 32 transmit / 8 receive antennas, 8 RF chains, 4 users.
    pub fn paper_scale() -> Self {
        let mut c = Self::desk();
        c.geometry = ArrayGeometry::new(32, 8);
        c.num_rf = 8;
        c.num_users = 4;
        c.noise_user = vec![crate::db_to_linear(-10.0); 4];
        c.eue_rate_caps = vec![0.5; 4];
        c.angle_uncertainty = 5.0;
        c.num_samples = 20;
        c
    }

    pub fn num_clutter(&self) -> usize {
        self.clutter_angles.len()
    }

    /// Sets every user's eavesdropping-rate cap to `cap`.
    pub fn set_uniform_rate_cap(&mut self, cap: f64) {
        self.eue_rate_caps = vec![cap; self.num_users];
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let bad = |m: &str| Err(SheError::InvalidConfig(m.to_string()));
        if self.num_users == 0 {
            return bad("num_users must be positive");
        }
        if self.num_rf < self.num_users + 1 {
            return bad("num_rf must be at least num_users + 1");
        }
        if self.num_rf > self.geometry.num_tx {
            return bad("num_rf must not exceed num_tx");
        }
        if !(self.power_budget > 0.0) {
            return bad("power_budget must be positive");
        }
        if self.noise_user.len() != self.num_users {
            return bad("noise_user must have one entry per user");
        }
        if self.noise_user.iter().any(|&n| !(n > 0.0))
            || !(self.noise_eue > 0.0)
            || !(self.noise_radar > 0.0)
        {
            return bad("noise powers must be positive");
        }
        if self.eue_rate_caps.len() != self.num_users {
            return bad("eue_rate_caps must have one entry per user");
        }
        if self.eue_rate_caps.iter().any(|&x| !(x >= 0.0)) {
            return bad("eue_rate_caps must be nonnegative");
        }
        if self.clutter_angles.len() != self.clutter_amplitudes.len() {
            return bad("clutter_angles and clutter_amplitudes differ in length");
        }
        let angles = self.clutter_angles.iter().chain(std::iter::once(&self.target_angle));
        for &a in angles {
            if !(a.abs() <= 90.0) {
                return bad("angles must lie in [-90, 90] degrees");
            }
        }
        if !(self.angle_uncertainty >= 0.0) || !(self.grid_step > 0.0) {
            return bad("angle_uncertainty must be >= 0 and grid_step > 0");
        }
        if (self.target_angle - self.angle_uncertainty) < -90.0
            || (self.target_angle + self.angle_uncertainty) > 90.0
        {
            return bad("target uncertainty interval leaves [-90, 90] degrees");
        }
        if let Some(est) = &self.eue_estimate {
            if est.len() != self.geometry.num_tx {
                return bad("eue_estimate length must equal num_tx");
            }
        }
        if !(self.csi_error_var >= 0.0) {
            return bad("csi_error_var must be nonnegative");
        }
        if self.num_samples == 0 {
            return bad("num_samples must be positive");
        }
        if !(self.radar_sinr_target >= 0.0) {
            return bad("radar_sinr_target must be nonnegative");
        }
        if !(self.false_alarm > 0.0 && self.false_alarm <= 1.0) {
            return bad("false_alarm must lie in (0, 1]");
        }
        if self.lue_paths == 0 {
            return bad("lue_paths must be positive");
        }
        Ok(())
    }

    pub fn angle_grid(&self) -> Vec<f64> {
        angle_grid(self.target_angle, self.angle_uncertainty, self.grid_step)
    }
}

/// Complex amplitude with the given power in dB and zero phase.
pub fn amplitude_from_db(db: f64) -> Complex64 {
    Complex64::new(crate::db_to_linear(db).sqrt(), 0.0)
}

/// Legitimate-user channels (one column per user) and the sampled
/// eavesdropper channel set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub lue: CMatrix,
    pub eue_samples: Vec<CVector>,
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.lue.ncols()
    }

    pub fn user(&self, u: usize) -> CVector {
        self.lue.column(u).into_owned()
    }
}

fn steering(theta_deg: f64, len: usize, spacing_ratio: f64) -> CVector {
    let phase_step = 2.0 * PI * spacing_ratio * theta_deg.to_radians().sin();
    DVector::from_fn(len, |m, _| Complex64::from_polar(1.0, phase_step * m as f64))
}

pub fn transmit_steering(theta_deg: f64, geometry: &ArrayGeometry) -> CVector {
    steering(theta_deg, geometry.num_tx, geometry.spacing_ratio)
}

pub fn receive_steering(theta_deg: f64, geometry: &ArrayGeometry) -> CVector {
    steering(theta_deg, geometry.num_rx, geometry.spacing_ratio)
}

/// Radar channel `a_r(θ) a_t(θ)^H`, an `M_r × M_t` rank-one matrix.
pub fn radar_channel(theta_deg: f64, geometry: &ArrayGeometry) -> CMatrix {
    let ar = receive_steering(theta_deg, geometry);
    let at = transmit_steering(theta_deg, geometry);
    &ar * at.adjoint()
}

/// Standard circularly-symmetric complex Gaussian draw, `CN(0, 1)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One geometric multipath channel with `E{‖h‖²} = M_t`.
pub fn multipath_channel<R: Rng + ?Sized>(
    geometry: &ArrayGeometry,
    path_count: usize,
    rng: &mut R,
) -> CVector {
    let angle = Uniform::new_inclusive(-90.0, 90.0).expect("valid range");
    let mut h = CVector::zeros(geometry.num_tx);
    for _ in 0..path_count {
        let gain = complex_gaussian(rng);
        let phi: f64 = angle.sample(rng);
        h += transmit_steering(phi, geometry) * gain;
    }
    h * Complex64::from((1.0 / path_count as f64).sqrt())
}

pub fn generate_lue_channels<R: Rng + ?Sized>(
    config: &SystemConfig,
    path_count: usize,
    rng: &mut R,
) -> CMatrix {
    let cols: Vec<CVector> = (0..config.num_users)
        .map(|_| multipath_channel(&config.geometry, path_count, rng))
        .collect();
    DMatrix::from_columns(&cols)
}

/// Sampled eavesdropper channels `ĥ_e + Δh_n`; sample 0 is the estimate itself.
pub fn sample_eue_channels<R: Rng + ?Sized>(
    eue_estimate: &CVector,
    csi_error_var: f64,
    n: usize,
    rng: &mut R,
) -> Vec<CVector> {
    let mut samples = Vec::with_capacity(n);
    samples.push(eue_estimate.clone());
    for _ in 1..n {
        if csi_error_var == 0.0 {
            samples.push(eue_estimate.clone());
        } else {
            let sd = Complex64::from(csi_error_var.sqrt());
            let err = CVector::from_fn(eue_estimate.len(), |_, _| complex_gaussian(rng) * sd);
            samples.push(eue_estimate + err);
        }
    }
    samples
}

/// `K` uniformly spaced angles on `[θ₀ − Δθ, θ₀ + Δθ]`, both endpoints included,
/// with `K = round(2Δθ / step) + 1`.
pub fn angle_grid(target_angle: f64, angle_uncertainty: f64, grid_step: f64) -> Vec<f64> {
    assert!(grid_step > 0.0, "grid_step must be positive");
    let count = (2.0 * angle_uncertainty / grid_step).round() as usize + 1;
    if count == 1 {
        return vec![target_angle];
    }
    let spacing = 2.0 * angle_uncertainty / (count - 1) as f64;
    (0..count)
        .map(|k| target_angle - angle_uncertainty + spacing * k as f64)
        .collect()
}

/// Deterministic per-seed RNG stream.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws the legitimate-user channels, the eavesdropper estimate (unless fixed
/// in the configuration) and the eavesdropper sample set, in that order.
pub fn realize_channels(config: &SystemConfig, seed: u64) -> ChannelSet {
    let mut rng = seeded_rng(seed);
    let lue = generate_lue_channels(config, config.lue_paths, &mut rng);
    let estimate = match &config.eue_estimate {
        Some(v) => CVector::from_vec(v.clone()),
        None => multipath_channel(&config.geometry, config.lue_paths, &mut rng),
    };
    let eue_samples =
        sample_eue_channels(&estimate, config.csi_error_var, config.num_samples, &mut rng);
    ChannelSet { lue, eue_samples }
}
