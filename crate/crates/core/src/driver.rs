//! Outer loop of the joint design and the benchmark variants.
//!
//! Every outer iteration first improves the radar receive filter for the
//! current transmit beamformer, then re-optimizes the hybrid beamformer for
//! that filter. An iterate whose worst-case secrecy rate is lower than the
//! previous one is discarded, so the reported trace never decreases.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array_model::{realize_channels, ChannelSet, SystemConfig};
use crate::error::{Result, SheError};
use crate::hbf::{self, HbfMode, HbfOptions, InnerStart, InnerTraceRow};
use crate::metrics::{self, AnalogStage, BeamformerSet, MetricsReport};
use crate::receive_filter::{optimize_receive_filter, ReceiveFilterState};
use crate::{linear_to_db, CMatrix, CVector};

/// Design variants: the proposed scheme and its benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SHE")]
    She,
    #[serde(rename = "FD-BF")]
    FdBf,
    #[serde(rename = "ConvHBF")]
    ConvHbf,
    #[serde(rename = "CommOnly-I2S")]
    CommOnlyI2s,
    #[serde(rename = "CommOnly-Conv")]
    CommOnlyConv,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::She, Variant::FdBf, Variant::ConvHbf, Variant::CommOnlyI2s, Variant::CommOnlyConv];

    pub fn name(self) -> &'static str {
        match self {
            Variant::She => "SHE",
            Variant::FdBf => "FD-BF",
            Variant::ConvHbf => "ConvHBF",
            Variant::CommOnlyI2s => "CommOnly-I2S",
            Variant::CommOnlyConv => "CommOnly-Conv",
        }
    }

    pub fn mode(self) -> HbfMode {
        match self {
            Variant::She => HbfMode { use_i2s: true, radar: true, fully_digital: false },
            Variant::FdBf => HbfMode { use_i2s: true, radar: true, fully_digital: true },
            Variant::ConvHbf => HbfMode { use_i2s: false, radar: true, fully_digital: false },
            Variant::CommOnlyI2s => HbfMode { use_i2s: true, radar: false, fully_digital: false },
            Variant::CommOnlyConv => HbfMode { use_i2s: false, radar: false, fully_digital: false },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = SheError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .or(match key.as_str() {
                "she" => Some(Variant::She),
                "fdbf" | "fd" => Some(Variant::FdBf),
                "conv" | "conv-hbf" => Some(Variant::ConvHbf),
                _ => None,
            })
            .ok_or_else(|| SheError::UnknownVariant(s.to_string()))
    }
}

/// Outer-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub max_outer: usize,
    /// Relative worst-case SR change regarded as a plateau.
    pub outer_tol: f64,
    /// Number of consecutive outer steps that must stay within `outer_tol`.
    pub plateau_window: usize,
    pub filter_tol: f64,
    pub filter_max_iter: usize,
    /// Radar SINR back-off per infeasibility retry, in dB.
    pub gamma_backoff_db: f64,
    pub gamma_retries: usize,
    pub hbf: HbfOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_outer: 30,
            outer_tol: 1e-3,
            plateau_window: 5,
            filter_tol: 1e-6,
            filter_max_iter: 30,
            gamma_backoff_db: 3.0,
            gamma_retries: 3,
            hbf: HbfOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    IterationCap,
    /// The radar SINR target was lowered to make the design feasible.
    InfeasibleRelaxed,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RunStatus::Converged => "Converged",
            RunStatus::IterationCap => "IterationCap",
            RunStatus::InfeasibleRelaxed => "InfeasibleRelaxed",
        };
        f.write_str(s)
    }
}

/// One row per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTraceRow {
    pub outer_iter: usize,
    pub worst_case_sr: f64,
    pub min_lue_rate: f64,
    pub min_radar_sinr: f64,
    pub max_eue_rate: f64,
    pub inner_iterations: usize,
    pub consensus_residual: f64,
    /// True when the iterate of this step was rejected and the previous kept.
    pub reverted: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub status: RunStatus,
    pub beamformers: BeamformerSet,
    pub filter: ReceiveFilterState,
    pub metrics: MetricsReport,
    pub trace: Vec<OuterTraceRow>,
    pub inner_trace: Vec<InnerTraceRow>,
    /// Radar SINR target actually enforced (linear).
    pub achieved_gamma_radar: f64,
    /// `‖Y − A·D_CI‖_F` at the end of the last accepted inner loop.
    pub consensus_residual: f64,
    pub power_slack: bool,
    pub wall_time: f64,
}

impl RunResult {
    pub fn secrecy_rate(&self) -> f64 {
        self.metrics.secrecy_rate_worst
    }
}

/// Outcome of the post-hoc constraint checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub eue_ok: bool,
    pub radar_ok: bool,
    pub power_ok: bool,
    pub modulus_ok: bool,
    pub consensus_ok: bool,
    pub max_eue_excess: f64,
    pub min_radar_margin_db: f64,
}

impl ConstraintCheck {
    pub fn all(&self) -> bool {
        self.eue_ok && self.radar_ok && self.power_ok && self.modulus_ok && self.consensus_ok
    }
}

/// Re-evaluates every constraint of the variant on the final iterate.
pub fn check_constraints(result: &RunResult, config: &SystemConfig) -> ConstraintCheck {
    let m = &result.metrics;
    let max_eue_excess = m
        .eue_rate_worst
        .iter()
        .zip(&config.eue_rate_caps)
        .map(|(r, cap)| r - cap)
        .fold(f64::NEG_INFINITY, f64::max);
    let radar_active = result.variant.mode().radar && result.achieved_gamma_radar > 0.0;
    let min_radar_margin_db = if radar_active {
        linear_to_db(m.min_radar_sinr) - linear_to_db(result.achieved_gamma_radar)
    } else {
        f64::INFINITY
    };
    let radar_ok = !radar_active || m.radar_sinr_grid.iter().all(|&s| s >= result.achieved_gamma_radar - 1e-6);
    let power = result.beamformers.transmit_power();
    let power_ok = power <= config.power_budget + 1e-9 && (result.power_slack || power >= config.power_budget - 1e-6);
    let modulus_ok = match &result.beamformers.analog {
        AnalogStage::PhaseShifters { phases } => phases.iter().all(|p| p.is_finite()),
        AnalogStage::FullyDigital { .. } => true,
    };
    ConstraintCheck {
        eue_ok: max_eue_excess <= 1e-4,
        radar_ok,
        power_ok,
        modulus_ok,
        consensus_ok: result.consensus_residual <= config.power_budget.sqrt() * 1e-3,
        max_eue_excess,
        min_radar_margin_db,
    }
}

/// Seed of the analog-stage initialization, kept apart from the channel stream.
fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn outer_row(outer: usize, report: &MetricsReport, inner: usize, consensus: f64, reverted: bool) -> OuterTraceRow {
    OuterTraceRow {
        outer_iter: outer,
        worst_case_sr: report.secrecy_rate_worst,
        min_lue_rate: report.min_lue_rate,
        min_radar_sinr: report.min_radar_sinr,
        max_eue_rate: report.eue_rate_worst.iter().copied().fold(0.0, f64::max),
        inner_iterations: inner,
        consensus_residual: consensus,
        reverted,
    }
}

fn plateaued(trace: &[OuterTraceRow], window: usize, tol: f64) -> bool {
    if trace.len() <= window {
        return false;
    }
    trace[trace.len() - window - 1..].windows(2).all(|p| {
        let (a, b) = (p[0].worst_case_sr, p[1].worst_case_sr);
        (b - a).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
    })
}

/// State carried between outer iterations.
struct Iterate {
    analog: AnalogStage,
    digital: CMatrix,
    report: MetricsReport,
    consensus: f64,
    power_slack: bool,
}

/// Runs the proposed design for one channel realization.
pub fn run_she(config: &SystemConfig, seed: u64, opts: &RunOptions) -> Result<RunResult> {
    run_variant(config, Variant::She, seed, opts)
}

/// Runs a benchmark variant for one channel realization.
pub fn run_baseline(config: &SystemConfig, variant: &str, seed: u64, opts: &RunOptions) -> Result<RunResult> {
    run_variant(config, variant.parse()?, seed, opts)
}

pub fn run_variant(config: &SystemConfig, variant: Variant, seed: u64, opts: &RunOptions) -> Result<RunResult> {
    config.validate()?;
    let channels = realize_channels(config, seed);
    run_with_channels(config, &channels, variant, seed, opts)
}

/// Runs a variant on given channels; `seed` only drives the analog initialization.
pub fn run_with_channels(
    config: &SystemConfig,
    channels: &ChannelSet,
    variant: Variant,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunResult> {
    let started = Instant::now();
    let mode = variant.mode();
    let mut config = config.clone();
    if mode.fully_digital {
        config.num_rf = config.geometry.num_tx;
    }
    let config = &config;
    let grid = config.angle_grid();
    let mut gamma = if mode.radar { config.radar_sinr_target } else { 0.0 };
    let mut relaxed = false;
    let mut retries = 0;

    let initial = hbf::initial_start(channels, config, mode, &mut init_rng(seed));
    let mut w: CVector = metrics::matched_receive_filter(config.target_angle, config);
    let mut filter = ReceiveFilterState { w: w.clone(), l: Vec::new(), c: 0.0, iteration: 0 };
    let mut current: Option<Iterate> = None;
    let mut trace: Vec<OuterTraceRow> = Vec::new();
    let mut inner_trace = Vec::new();
    let mut status = RunStatus::IterationCap;

    let mut outer = 1;
    while outer <= opts.max_outer {
        let start = match &current {
            None => initial.clone(),
            Some(it) => InnerStart {
                analog: it.analog.clone(),
                digital: it.digital.clone(),
                effective: it.analog.matrix() * &it.digital,
            },
        };
        if mode.radar {
            let (state, _) = optimize_receive_filter(&start.effective, &w, config, &grid, opts.filter_tol, opts.filter_max_iter)?;
            w = state.w.clone();
            filter = state;
        }
        let step_start = Instant::now();
        let inner = match hbf::inner_loop(channels, &w, &start, config, &grid, gamma, mode, &opts.hbf, outer) {
            Ok(o) => o,
            Err(SheError::InfeasibleSubproblem(msg)) if mode.radar && retries < opts.gamma_retries => {
                retries += 1;
                relaxed = true;
                gamma *= crate::db_to_linear(-opts.gamma_backoff_db);
                log::warn!(
                    "{variant} seed {seed}: {msg}; lowering radar SINR target to {:.2} dB",
                    linear_to_db(gamma)
                );
                continue;
            }
            Err(e) => return Err(e),
        };
        if !inner.converged {
            log::warn!("{variant} seed {seed}: inner loop hit its iteration cap at outer step {outer}");
        }
        let inner_count = inner.trace.len();
        let consensus = inner.trace.last().map_or(0.0, |r| r.consensus_residual);
        inner_trace.extend(inner.trace.iter().cloned());
        let (digital, polish) =
            hbf::polish_digital(channels, &w, &inner.analog, &inner.digital, config, &grid, gamma, mode, &opts.hbf)?;
        log::debug!(
            "{variant} seed {seed} outer {outer}: {inner_count} inner steps, {} refinement steps, {:.2}s",
            polish.iterations,
            step_start.elapsed().as_secs_f64()
        );
        let effective = inner.analog.matrix() * &digital;
        let report = metrics::evaluate_effective(config, channels, &effective, &w, &grid)?;
        let candidate = Iterate { analog: inner.analog, digital, report, consensus, power_slack: polish.power_slack };

        let accept = match &current {
            None => true,
            Some(prev) => {
                !polish.infeasible && candidate.report.secrecy_rate_worst >= prev.report.secrecy_rate_worst
            }
        };
        if accept {
            trace.push(outer_row(outer, &candidate.report, inner_count, consensus, false));
            current = Some(candidate);
        } else {
            let prev = current.as_mut().expect("previous iterate exists");
            // The filter moved, so radar numbers of the kept iterate change.
            let effective = prev.analog.matrix() * &prev.digital;
            prev.report = metrics::evaluate_effective(config, channels, &effective, &w, &grid)?;
            trace.push(outer_row(outer, &prev.report, inner_count, prev.consensus, true));
        }
        if plateaued(&trace, opts.plateau_window, opts.outer_tol) {
            status = RunStatus::Converged;
            break;
        }
        outer += 1;
    }

    let it = current.ok_or_else(|| SheError::SolverFailure("no outer iteration completed".into()))?;
    let beamformers = BeamformerSet::from_stacked(it.analog, &it.digital);
    let metrics = metrics::evaluate(config, channels, &beamformers, &w, &grid)?;
    if relaxed {
        status = RunStatus::InfeasibleRelaxed;
    }
    Ok(RunResult {
        variant,
        seed,
        status,
        beamformers,
        filter,
        metrics,
        trace,
        inner_trace,
        achieved_gamma_radar: gamma,
        consensus_residual: it.consensus,
        power_slack: it.power_slack,
        wall_time: started.elapsed().as_secs_f64(),
    })
}
