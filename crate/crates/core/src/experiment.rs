//! Monte Carlo sweeps over one scenario parameter.
//!
//! Every (variant, sweep value) cell runs the same list of trial seeds, so
//! variants are compared on identical channel realizations. Trials run on a
//! rayon pool whose size is taken from `SHE_THREADS` when set; files are
//! written afterwards from the calling thread.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::SystemConfig;
use crate::config::ConfigFile;
use crate::driver::{check_constraints, run_variant, OuterTraceRow, RunOptions, RunResult, Variant};
use crate::error::{Result, SheError};
use crate::{db_to_linear, io, linear_to_db};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SHE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Radar SINR target in dB.
    RadarSinrDb,
    /// Eavesdropping-rate cap applied to every user.
    EueRateCap,
    /// Eavesdropper CSI error variance.
    CsiErrorVar,
    /// Half-width of the target angle interval in degrees.
    AngleUncertainty,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::RadarSinrDb => "radar_sinr_db",
            SweepParameter::EueRateCap => "eue_rate_cap",
            SweepParameter::CsiErrorVar => "csi_error_var",
            SweepParameter::AngleUncertainty => "angle_uncertainty",
        }
    }

    pub fn apply(self, config: &mut SystemConfig, value: f64) {
        match self {
            SweepParameter::RadarSinrDb => config.radar_sinr_target = db_to_linear(value),
            SweepParameter::EueRateCap => config.set_uniform_rate_cap(value),
            SweepParameter::CsiErrorVar => config.csi_error_var = value,
            SweepParameter::AngleUncertainty => config.angle_uncertainty = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: SystemConfig,
    pub options: RunOptions,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Write the outer-loop trace of the first trial of every cell.
    pub write_traces: bool,
}

/// Default number of trials when a spec does not set one.
pub const DEFAULT_TRIALS: usize = 50;

/// Trial seed `index` derived from `base` on its own ChaCha stream.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

pub fn trial_seeds(base: u64, trials: usize) -> Vec<u64> {
    (0..trials).map(|i| trial_seed(base, i)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub variants: Vec<String>,
    pub trials: Option<usize>,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub write_traces: bool,
}

fn default_base_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_true() -> bool {
    true
}

/// TOML layout of a sweep: an `[experiment]` table plus a `[base]` scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub base: ConfigFile,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let (base, options) = self.base.resolve()?;
        let e = &self.experiment;
        let variants = e.variants.iter().map(|v| v.parse()).collect::<Result<Vec<Variant>>>()?;
        let seeds = match (&e.seeds, e.trials) {
            (Some(s), Some(t)) if s.len() != t => {
                return Err(SheError::InvalidConfig(format!("{} seeds listed for {t} trials", s.len())));
            }
            (Some(s), _) => s.clone(),
            (None, t) => trial_seeds(e.base_seed, t.unwrap_or(DEFAULT_TRIALS)),
        };
        let spec = ExperimentSpec {
            base,
            options,
            parameter: e.parameter,
            values: e.values.clone(),
            variants,
            seeds,
            output_dir: e.output_dir.clone(),
            write_traces: e.write_traces,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ExperimentSpec {
    pub fn trials(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SheError::InvalidConfig(m.to_string()));
        if self.seeds.is_empty() {
            return bad("an experiment needs at least one trial");
        }
        if self.variants.is_empty() {
            return bad("an experiment needs at least one variant");
        }
        if self.values.is_empty() {
            return bad("sweep values are empty");
        }
        if self.values.windows(2).any(|p| !(p[0] < p[1])) {
            return bad("sweep values must be strictly increasing");
        }
        for &v in &self.values {
            let mut c = self.base.clone();
            self.parameter.apply(&mut c, v);
            c.validate()?;
        }
        Ok(())
    }

    pub fn config_for(&self, value: f64) -> SystemConfig {
        let mut c = self.base.clone();
        self.parameter.apply(&mut c, value);
        c
    }
}

/// One trial of one (variant, value) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub variant: Variant,
    pub parameter: SweepParameter,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    /// Run status, or `Failed` when the run returned an error.
    pub status: String,
    pub secrecy_rate: f64,
    pub min_lue_rate: f64,
    pub max_eue_rate: f64,
    pub min_radar_sinr_db: f64,
    pub detection_probability: f64,
    pub achieved_gamma_db: f64,
    pub outer_iterations: usize,
    pub constraints_ok: bool,
    pub wall_time: f64,
    pub error: String,
}

impl TrialRow {
    pub fn failed(&self) -> bool {
        self.status == "Failed"
    }

    fn from_result(key: &CellKey, trial: usize, seed: u64, outcome: &Result<RunResult>, config: &SystemConfig) -> Self {
        let mut row = TrialRow {
            variant: key.variant,
            parameter: key.parameter,
            value: key.value,
            trial,
            seed,
            status: "Failed".into(),
            secrecy_rate: f64::NAN,
            min_lue_rate: f64::NAN,
            max_eue_rate: f64::NAN,
            min_radar_sinr_db: f64::NAN,
            detection_probability: f64::NAN,
            achieved_gamma_db: f64::NAN,
            outer_iterations: 0,
            constraints_ok: false,
            wall_time: 0.0,
            error: String::new(),
        };
        match outcome {
            Ok(r) => {
                let m = &r.metrics;
                row.status = r.status.to_string();
                row.secrecy_rate = m.secrecy_rate_worst;
                row.min_lue_rate = m.min_lue_rate;
                row.max_eue_rate = m.eue_rate_worst.iter().copied().fold(0.0, f64::max);
                row.min_radar_sinr_db = linear_to_db(m.min_radar_sinr);
                row.detection_probability = m.detection_probability;
                row.achieved_gamma_db = linear_to_db(r.achieved_gamma_radar);
                row.outer_iterations = r.trace.len();
                row.constraints_ok = check_constraints(r, config).all();
                row.wall_time = r.wall_time;
            }
            Err(e) => row.error = e.to_string(),
        }
        row
    }
}

/// Mean and spread of the worst-case secrecy rate in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub parameter: SweepParameter,
    pub value: f64,
    pub mean: f64,
    /// Sample standard deviation (zero for a single trial).
    pub std: f64,
    pub trials: usize,
    pub failures: usize,
    pub relaxed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CellKey {
    variant: Variant,
    parameter: SweepParameter,
    value: f64,
}

/// Groups trial rows by (variant, value) in first-seen order and averages
/// the secrecy rate over the successful trials.
pub fn aggregate(rows: &[TrialRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(Variant, u64)> = Vec::new();
    let mut cells: BTreeMap<(Variant, u64), Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.variant, r.value.to_bits());
        if !cells.contains_key(&key) {
            order.push(key);
        }
        cells.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let cell = &cells[&key];
            let ok: Vec<f64> = cell.iter().filter(|r| !r.failed()).map(|r| r.secrecy_rate).collect();
            let n = ok.len();
            let mean = if n > 0 { ok.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else if n == 1 {
                0.0
            } else {
                f64::NAN
            };
            AggregateRow {
                variant: key.0,
                parameter: cell[0].parameter,
                value: cell[0].value,
                mean,
                std,
                trials: n,
                failures: cell.len() - n,
                relaxed: cell.iter().filter(|r| r.status == "InfeasibleRelaxed").count(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub trials: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Outer-loop traces of the first trial per cell, keyed by file name.
    pub traces: Vec<(String, Vec<OuterTraceRow>)>,
}

pub fn cell_file_name(variant: Variant, parameter: SweepParameter, value: f64) -> String {
    format!("{}__{}__{}.csv", variant.name(), parameter.name(), value)
}

pub fn trace_file_name(variant: Variant, parameter: SweepParameter, value: f64, seed: u64) -> String {
    format!("{}__{}__{}__{}.csv", variant.name(), parameter.name(), value, seed)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| SheError::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| SheError::InvalidConfig(e.to_string()))
}

/// Runs every trial of every cell without touching the file system.
pub fn run_trials(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &variant in &spec.variants {
        for &value in &spec.values {
            for (trial, &seed) in spec.seeds.iter().enumerate() {
                jobs.push((CellKey { variant, parameter: spec.parameter, value }, trial, seed));
            }
        }
    }
    let pool = thread_pool()?;
    let outputs: Vec<(TrialRow, Option<(String, Vec<OuterTraceRow>)>)> = pool.install(|| {
        jobs.par_iter()
            .map(|(key, trial, seed)| {
                let config = spec.config_for(key.value);
                let outcome = run_variant(&config, key.variant, *seed, &spec.options);
                if let Err(e) = &outcome {
                    log::warn!("{} {}={} seed {seed}: {e}", key.variant, key.parameter.name(), key.value);
                }
                let row = TrialRow::from_result(key, *trial, *seed, &outcome, &config);
                let trace = match (&outcome, *trial == 0 && spec.write_traces) {
                    (Ok(r), true) => Some((trace_file_name(key.variant, key.parameter, key.value, *seed), r.trace.clone())),
                    _ => None,
                };
                (row, trace)
            })
            .collect()
    });
    let mut trials = Vec::with_capacity(outputs.len());
    let mut traces = Vec::new();
    for (row, trace) in outputs {
        trials.push(row);
        traces.extend(trace);
    }
    let aggregates = aggregate(&trials);
    Ok(ExperimentReport { trials, aggregates, traces })
}

/// Writes the per-cell trial CSVs, `aggregate.json`, `spec.json` and the
/// representative traces into the spec's output directory.
pub fn write_report(spec: &ExperimentSpec, report: &ExperimentReport) -> Result<()> {
    let dir = &spec.output_dir;
    std::fs::create_dir_all(dir)?;
    io::write_json(&dir.join("spec.json"), spec)?;
    io::write_json(&dir.join("aggregate.json"), &report.aggregates)?;
    for agg in &report.aggregates {
        let rows: Vec<&TrialRow> = report
            .trials
            .iter()
            .filter(|r| r.variant == agg.variant && r.value.to_bits() == agg.value.to_bits())
            .collect();
        io::write_csv(&dir.join(cell_file_name(agg.variant, agg.parameter, agg.value)), &rows)?;
    }
    for (name, trace) in &report.traces {
        io::write_csv(&dir.join(name), trace)?;
    }
    Ok(())
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let report = run_trials(spec)?;
    write_report(spec, &report)?;
    Ok(report)
}

/// Re-reads every per-cell CSV of a finished experiment.
pub fn read_trials(spec: &ExperimentSpec) -> Result<Vec<TrialRow>> {
    let mut rows = Vec::new();
    for &variant in &spec.variants {
        for &value in &spec.values {
            let path = spec.output_dir.join(cell_file_name(variant, spec.parameter, value));
            rows.extend(io::read_csv::<TrialRow>(&path)?);
        }
    }
    Ok(rows)
}
