//! Communication, secrecy and radar performance measures.
//!
//! Most functions take the effective beamformer `Y = A·D_CI` whose column 0
//! is the I2S stream `y_0 = A d_I` and whose columns `1..=U` are the user
//! streams `y_u = A d_{C,u}`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::array_model::{complex_gaussian, receive_steering, transmit_steering, ChannelSet, SystemConfig};
use crate::error::{Result, SheError};
use crate::{CMatrix, CVector};

/// `exp(j·phase)` with modulus exactly 1 in floating point.
///
/// `cos` and `sin` are each correctly rounded, but their hypotenuse can land
/// one ulp off 1. Moving the larger component by one ulp always restores it.
pub fn unit_phasor(phase: f64) -> Complex64 {
    let z = Complex64::from_polar(1.0, phase);
    if z.norm() == 1.0 {
        return z;
    }
    let step = |x: f64, up: bool| -> f64 {
        let bits = x.to_bits();
        f64::from_bits(if up == (x > 0.0) { bits + 1 } else { bits - 1 })
    };
    for up in [true, false] {
        let candidate = if z.re.abs() >= z.im.abs() {
            Complex64::new(step(z.re, up), z.im)
        } else {
            Complex64::new(z.re, step(z.im, up))
        };
        if candidate.norm() == 1.0 {
            return candidate;
        }
    }
    z
}

/// Analog stage of the transmitter.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalogStage {
    /// Phase-shifter network; entries are `exp(j·phase)`.
    PhaseShifters { phases: nalgebra::DMatrix<f64> },
    /// Analog stage bypassed (`A = I_{M_t}`), used by the fully-digital benchmark.
    FullyDigital { dim: usize },
}

impl AnalogStage {
    pub fn from_phases(phases: nalgebra::DMatrix<f64>) -> Self {
        AnalogStage::PhaseShifters { phases }
    }

    pub fn matrix(&self) -> CMatrix {
        match self {
            AnalogStage::PhaseShifters { phases } => phases.map(unit_phasor),
            AnalogStage::FullyDigital { dim } => CMatrix::identity(*dim, *dim),
        }
    }

    pub fn num_rf(&self) -> usize {
        match self {
            AnalogStage::PhaseShifters { phases } => phases.ncols(),
            AnalogStage::FullyDigital { dim } => *dim,
        }
    }

    pub fn is_fully_digital(&self) -> bool {
        matches!(self, AnalogStage::FullyDigital { .. })
    }
}

/// Hybrid transmit beamformer.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub analog: AnalogStage,
    /// `N_RF × U` communication digital beamformer.
    pub digital_comm: CMatrix,
    /// I2S digital beamformer, length `N_RF`.
    pub digital_i2s: CVector,
}

impl BeamformerSet {
    /// Splits a stacked digital matrix `D_CI = [d_I, D_C]`.
    pub fn from_stacked(analog: AnalogStage, stacked: &CMatrix) -> Self {
        let digital_i2s = stacked.column(0).into_owned();
        let digital_comm = stacked.columns(1, stacked.ncols() - 1).into_owned();
        Self { analog, digital_comm, digital_i2s }
    }

    /// `D_CI = [d_I, D_C]`.
    pub fn stacked_digital(&self) -> CMatrix {
        let n_rf = self.digital_i2s.len();
        let users = self.digital_comm.ncols();
        let mut d = CMatrix::zeros(n_rf, users + 1);
        d.set_column(0, &self.digital_i2s);
        d.columns_mut(1, users).copy_from(&self.digital_comm);
        d
    }

    /// `Y = A·D_CI`.
    pub fn effective(&self) -> CMatrix {
        self.analog.matrix() * self.stacked_digital()
    }

    pub fn num_users(&self) -> usize {
        self.digital_comm.ncols()
    }

    /// `‖A D_C‖_F² + ‖A d_I‖²`.
    pub fn transmit_power(&self) -> f64 {
        self.effective().norm_squared()
    }
}

/// Summary of one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lue_sinr: Vec<f64>,
    pub lue_rate: Vec<f64>,
    pub eue_rate_worst: Vec<f64>,
    pub secrecy_rate_worst: f64,
    pub min_lue_rate: f64,
    pub radar_sinr_grid: Vec<f64>,
    pub min_radar_sinr: f64,
    pub detection_probability: f64,
    pub transmit_power: f64,
}

/// `|h_uᴴ y_v|²` for every column `v` of `Y`.
fn user_gains(h: &CVector, effective: &CMatrix) -> Vec<f64> {
    (0..effective.ncols())
        .map(|v| h.dotc(&effective.column(v)).norm_sqr())
        .collect()
}

pub fn lue_sinr_effective(u: usize, lue: &CMatrix, effective: &CMatrix, noise_user: f64) -> f64 {
    let h = lue.column(u).into_owned();
    let gains = user_gains(&h, effective);
    let signal = gains[u + 1];
    let interference: f64 = gains.iter().sum::<f64>() - signal;
    signal / (interference + noise_user)
}

/// SINR of user `u` (0-based).
pub fn lue_sinr(u: usize, channels: &ChannelSet, bf: &BeamformerSet, noise_user: f64) -> f64 {
    lue_sinr_effective(u, &channels.lue, &bf.effective(), noise_user)
}

/// Eavesdropper SINR on user `u`'s stream; multi-user interference is assumed cancelled.
pub fn eue_sinr_effective(u: usize, eue_channel: &CVector, effective: &CMatrix, noise_eue: f64) -> f64 {
    let signal = eue_channel.dotc(&effective.column(u + 1)).norm_sqr();
    let jam = eue_channel.dotc(&effective.column(0)).norm_sqr();
    signal / (jam + noise_eue)
}

pub fn eue_sinr(u: usize, eue_channel: &CVector, bf: &BeamformerSet, noise_eue: f64) -> f64 {
    eue_sinr_effective(u, eue_channel, &bf.effective(), noise_eue)
}

/// `log₂(1 + SINR)`.
pub fn rate(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// `Σ_u [Rate_u − max_n Rate_{e,u,n}]⁺`. `eue_rates_per_sample[u]` holds the
/// per-sample eavesdropping rates of user `u`.
pub fn worst_case_sr(lue_rates: &[f64], eue_rates_per_sample: &[Vec<f64>]) -> f64 {
    assert_eq!(lue_rates.len(), eue_rates_per_sample.len(), "one eavesdropper row per user");
    lue_rates
        .iter()
        .zip(eue_rates_per_sample)
        .map(|(&r, samples)| {
            let worst = samples.iter().copied().fold(0.0f64, f64::max);
            (r - worst).max(0.0)
        })
        .sum()
}

/// Per-user, per-sample eavesdropping rates.
pub fn eue_rates(channels: &ChannelSet, effective: &CMatrix, noise_eue: f64) -> Vec<Vec<f64>> {
    (0..effective.ncols() - 1)
        .map(|u| {
            channels
                .eue_samples
                .iter()
                .map(|h| rate(eue_sinr_effective(u, h, effective, noise_eue)))
                .collect()
        })
        .collect()
}

/// Numerator and denominator of the radar SINR at angle `theta`.
///
/// `Ã(θ) = a_r a_tᴴ` is rank one, so `‖w^H Ã(θ) Y‖² = |w^H a_r|² ‖a_tᴴ Y‖²`.
pub fn radar_sinr_parts(w: &CVector, effective: &CMatrix, theta: f64, config: &SystemConfig) -> (f64, f64) {
    let g = &config.geometry;
    let beam = |angle: f64| -> f64 {
        let ar = receive_steering(angle, g);
        let at = transmit_steering(angle, g);
        w.dotc(&ar).norm_sqr() * (at.adjoint() * effective).norm_squared()
    };
    let numerator = config.target_amplitude.norm_sqr() * beam(theta);
    let clutter: f64 = config
        .clutter_angles
        .iter()
        .zip(&config.clutter_amplitudes)
        .map(|(&angle, amp)| amp.norm_sqr() * beam(angle))
        .sum();
    (numerator, clutter + config.noise_radar * w.norm_squared())
}

pub fn radar_sinr_effective(w: &CVector, effective: &CMatrix, theta: f64, config: &SystemConfig) -> Result<f64> {
    if w.norm_squared() == 0.0 {
        return Err(SheError::ZeroFilter);
    }
    let (num, den) = radar_sinr_parts(w, effective, theta, config);
    Ok(num / den)
}

/// Radar output SINR at angle `theta` with the noise term replaced by its mean `σ_r²‖w‖²`.
pub fn radar_sinr(w: &CVector, bf: &BeamformerSet, theta: f64, config: &SystemConfig) -> Result<f64> {
    radar_sinr_effective(w, &bf.effective(), theta, config)
}

pub fn radar_sinr_grid(w: &CVector, effective: &CMatrix, grid: &[f64], config: &SystemConfig) -> Result<Vec<f64>> {
    grid.iter().map(|&t| radar_sinr_effective(w, effective, t, config)).collect()
}

/// MSE of user `u` with scalar equalizer `kappa`.
pub fn mse(u: usize, kappa: Complex64, channels: &ChannelSet, effective: &CMatrix, noise_user: f64) -> f64 {
    let h = channels.lue.column(u).into_owned();
    let total: f64 = user_gains(&h, effective).iter().sum();
    let cross = kappa * h.dotc(&effective.column(u + 1));
    kappa.norm_sqr() * (total + noise_user) - 2.0 * cross.re + 1.0
}

/// Lower bound `log₂ω − ω·ε + 1` used with the weight `ω = 1 + SINR`.
pub fn wmmse_rate_bound(omega: f64, mse: f64) -> f64 {
    omega.log2() - omega * mse + 1.0
}

/// First-order Marcum Q function `Q₁(a, b)`.
///
/// Uses the Poisson-mixture form
/// `Q₁(a, b) = Σ_k Pois(k; a²/2) · P[Pois(b²/2) ≤ k]`, summed over the
/// numerically relevant window around the mode.
pub fn marcum_q1(a: f64, b: f64) -> f64 {
    assert!(a >= 0.0 && b >= 0.0, "marcum_q1 arguments must be nonnegative");
    let lambda = 0.5 * a * a;
    let x = 0.5 * b * b;
    if x == 0.0 {
        return 1.0;
    }
    if lambda == 0.0 {
        return (-x).exp();
    }
    let spread = 12.0 * lambda.sqrt() + 40.0;
    let lo = (lambda - spread).floor().max(0.0) as u64;
    let hi = (lambda + spread).ceil() as u64;
    let mut total = 0.0;
    for k in lo..=hi {
        let kf = k as f64;
        let log_pmf = kf * lambda.ln() - lambda - ln_gamma(kf + 1.0);
        let weight = log_pmf.exp();
        if weight == 0.0 {
            continue;
        }
        // P[Pois(x) <= k] = Q(k + 1, x), the regularized upper incomplete gamma.
        total += weight * gamma_ur(kf + 1.0, x);
    }
    total.clamp(0.0, 1.0)
}

/// Target detection probability of a GLRT detector at the given radar SINR.
pub fn detection_probability(radar_sinr: f64, false_alarm: f64) -> f64 {
    assert!(radar_sinr >= 0.0 && false_alarm > 0.0 && false_alarm <= 1.0);
    let a = (2.0 * radar_sinr).sqrt();
    let b = (-2.0 * false_alarm.ln()).max(0.0).sqrt();
    marcum_q1(a, b).max(false_alarm)
}

/// Draws `num_symbols` transmit snapshots `A(D_C s_C + d_I s_I)` with unit-power symbols.
pub fn synthesize_transmit_block<R: Rng + ?Sized>(bf: &BeamformerSet, num_symbols: usize, rng: &mut R) -> CMatrix {
    let y = bf.effective();
    let streams = y.ncols();
    let symbols = CMatrix::from_fn(streams, num_symbols, |_, _| complex_gaussian(rng));
    y * symbols
}

/// Transmit beampattern `‖a_t(θ)ᴴ Y‖²` on the given angles.
pub fn transmit_beampattern(bf: &BeamformerSet, grid: &[f64], config: &SystemConfig) -> Vec<f64> {
    beampattern_effective(&bf.effective(), grid, config)
}

pub fn beampattern_effective(effective: &CMatrix, grid: &[f64], config: &SystemConfig) -> Vec<f64> {
    grid.iter()
        .map(|&t| (transmit_steering(t, &config.geometry).adjoint() * effective).norm_squared())
        .collect()
}

/// `361` angles on `[−90°, 90°]`.
pub fn full_angle_grid() -> Vec<f64> {
    (0..361).map(|i| -90.0 + 0.5 * i as f64).collect()
}

/// Evaluates every measure for an effective beamformer and receive filter.
pub fn evaluate_effective(
    config: &SystemConfig,
    channels: &ChannelSet,
    effective: &CMatrix,
    w: &CVector,
    grid: &[f64],
) -> Result<MetricsReport> {
    let users = config.num_users;
    let lue_sinr: Vec<f64> = (0..users)
        .map(|u| lue_sinr_effective(u, &channels.lue, effective, config.noise_user[u]))
        .collect();
    let lue_rate: Vec<f64> = lue_sinr.iter().map(|&s| rate(s)).collect();
    let eue = eue_rates(channels, effective, config.noise_eue);
    let eue_rate_worst: Vec<f64> = eue.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
    let secrecy_rate_worst = worst_case_sr(&lue_rate, &eue);
    let radar = radar_sinr_grid(w, effective, grid, config)?;
    let min_radar_sinr = radar.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MetricsReport {
        min_lue_rate: lue_rate.iter().copied().fold(f64::INFINITY, f64::min),
        detection_probability: detection_probability(min_radar_sinr.max(0.0), config.false_alarm),
        transmit_power: effective.norm_squared(),
        lue_sinr,
        lue_rate,
        eue_rate_worst,
        secrecy_rate_worst,
        radar_sinr_grid: radar,
        min_radar_sinr,
    })
}

pub fn evaluate(
    config: &SystemConfig,
    channels: &ChannelSet,
    bf: &BeamformerSet,
    w: &CVector,
    grid: &[f64],
) -> Result<MetricsReport> {
    evaluate_effective(config, channels, &bf.effective(), w, grid)
}

/// Unit-norm matched receive filter toward `theta`.
pub fn matched_receive_filter(theta: f64, config: &SystemConfig) -> CVector {
    let a = receive_steering(theta, &config.geometry);
    let n = (a.len() as f64).sqrt();
    a / Complex64::from(n)
}
