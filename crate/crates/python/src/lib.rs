//! Python bindings.
//!
//! Scenario settings travel as a `Config` object; results come back as a
//! `RunResult` whose tables are plain Python lists and dicts.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;
use she_core::array_model::{transmit_steering, ArrayGeometry, SystemConfig};
use she_core::config::ConfigFile;
use she_core::driver::{check_constraints, run_variant, RunOptions, Variant};
use she_core::experiment::{run_experiment, trial_seeds as core_trial_seeds, ExperimentFile};
use she_core::metrics::{self, AnalogStage};
use she_core::{db_to_linear, io, linear_to_db, CMatrix, SheError};

pyo3::create_exception!(she_py, SolverError, PyException);

fn to_py_err(e: SheError) -> PyErr {
    match e {
        SheError::InvalidConfig(_) | SheError::UnknownVariant(_) | SheError::Parse(_) => PyValueError::new_err(e.to_string()),
        other => SolverError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn matrix_rows(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Scenario and solver settings.
#[pyclass(name = "Config", module = "she_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    system: SystemConfig,
    options: RunOptions,
}

#[pymethods]
impl PyConfig {
    /// Desk-scale scenario (16 transmit antennas, 2 users).
    #[staticmethod]
    fn desk() -> Self {
        Self { system: SystemConfig::desk(), options: RunOptions::default() }
    }

    /// Full-size scenario (32 transmit antennas, 4 users).
    #[staticmethod]
    fn paper_scale() -> Self {
        Self { system: SystemConfig::paper_scale(), options: RunOptions::default() }
    }

    /// Loads a TOML scenario file.
    #[staticmethod]
    fn from_toml(path: PathBuf) -> PyResult<Self> {
        let (system, options) = ConfigFile::load(&path).and_then(|f| f.resolve()).map_err(to_py_err)?;
        Ok(Self { system, options })
    }

    /// Parses TOML text.
    #[staticmethod]
    fn from_toml_str(text: &str) -> PyResult<Self> {
        let (system, options) = ConfigFile::parse(text).and_then(|f| f.resolve()).map_err(to_py_err)?;
        Ok(Self { system, options })
    }

    fn validate(&self) -> PyResult<()> {
        self.system.validate().map_err(to_py_err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let v = serde_json::json!({ "system": self.system, "solver": self.options });
        json_to_py(py, &v)
    }

    #[getter]
    fn num_tx(&self) -> usize {
        self.system.geometry.num_tx
    }

    #[getter]
    fn num_rx(&self) -> usize {
        self.system.geometry.num_rx
    }

    /// Sets both array sizes at once; the RF chain count is clipped to `num_tx`.
    fn set_array(&mut self, num_tx: usize, num_rx: usize, num_rf: usize) {
        let spacing = self.system.geometry.spacing_ratio;
        self.system.geometry = ArrayGeometry { spacing_ratio: spacing, ..ArrayGeometry::new(num_tx, num_rx) };
        self.system.num_rf = num_rf.min(num_tx);
    }

    #[getter]
    fn num_rf(&self) -> usize {
        self.system.num_rf
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.system.num_users
    }

    #[getter]
    fn power_budget(&self) -> f64 {
        self.system.power_budget
    }

    #[setter]
    fn set_power_budget(&mut self, v: f64) {
        self.system.power_budget = v;
    }

    #[getter]
    fn radar_sinr_db(&self) -> f64 {
        linear_to_db(self.system.radar_sinr_target)
    }

    #[setter]
    fn set_radar_sinr_db(&mut self, v: f64) {
        self.system.radar_sinr_target = db_to_linear(v);
    }

    #[getter]
    fn eue_rate_caps(&self) -> Vec<f64> {
        self.system.eue_rate_caps.clone()
    }

    /// Applies one eavesdropping-rate cap to every user.
    fn set_eue_rate_cap(&mut self, cap: f64) {
        self.system.set_uniform_rate_cap(cap);
    }

    #[getter]
    fn csi_error_var(&self) -> f64 {
        self.system.csi_error_var
    }

    #[setter]
    fn set_csi_error_var(&mut self, v: f64) {
        self.system.csi_error_var = v;
    }

    #[getter]
    fn angle_uncertainty(&self) -> f64 {
        self.system.angle_uncertainty
    }

    #[setter]
    fn set_angle_uncertainty(&mut self, v: f64) {
        self.system.angle_uncertainty = v;
    }

    #[getter]
    fn target_angle(&self) -> f64 {
        self.system.target_angle
    }

    #[setter]
    fn set_target_angle(&mut self, v: f64) {
        self.system.target_angle = v;
    }

    #[getter]
    fn max_outer(&self) -> usize {
        self.options.max_outer
    }

    #[setter]
    fn set_max_outer(&mut self, v: usize) {
        self.options.max_outer = v;
    }

    /// Angles of the radar SINR grid in degrees.
    fn angle_grid(&self) -> Vec<f64> {
        self.system.angle_grid()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(num_tx={}, num_rx={}, num_rf={}, num_users={}, radar_sinr_db={:.2})",
            self.system.geometry.num_tx,
            self.system.geometry.num_rx,
            self.system.num_rf,
            self.system.num_users,
            linear_to_db(self.system.radar_sinr_target)
        )
    }
}

/// Outcome of one design run.
#[pyclass(name = "RunResult", module = "she_py")]
pub struct PyRunResult {
    inner: she_core::driver::RunResult,
    config: SystemConfig,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn status(&self) -> String {
        self.inner.status.to_string()
    }

    /// Worst-case secrecy rate in bit/s/Hz.
    #[getter]
    fn secrecy_rate(&self) -> f64 {
        self.inner.metrics.secrecy_rate_worst
    }

    #[getter]
    fn achieved_radar_sinr_db(&self) -> f64 {
        linear_to_db(self.inner.achieved_gamma_radar)
    }

    #[getter]
    fn wall_time(&self) -> f64 {
        self.inner.wall_time
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &self.inner.metrics)
    }

    /// Post-hoc constraint checks of the final design.
    fn checks<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &check_constraints(&self.inner, &self.config))
    }

    /// Outer-loop trace as a list of dicts.
    fn trace<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &self.inner.trace)
    }

    fn inner_trace<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &self.inner.inner_trace)
    }

    /// Effective beamformer `A·D_CI` as rows of complex numbers; column 0 is the I2S stream.
    fn effective(&self) -> Vec<Vec<Complex64>> {
        matrix_rows(&self.inner.beamformers.effective())
    }

    /// Stacked digital matrix `[d_I, D_C]` as rows.
    fn digital(&self) -> Vec<Vec<Complex64>> {
        matrix_rows(&self.inner.beamformers.stacked_digital())
    }

    /// Phase-shifter phases in radians, or `None` for the fully-digital variant.
    fn analog_phases(&self) -> Option<Vec<Vec<f64>>> {
        match &self.inner.beamformers.analog {
            AnalogStage::PhaseShifters { phases } => {
                Some((0..phases.nrows()).map(|i| phases.row(i).iter().copied().collect()).collect())
            }
            AnalogStage::FullyDigital { .. } => None,
        }
    }

    fn receive_filter(&self) -> Vec<Complex64> {
        self.inner.filter.w.iter().copied().collect()
    }

    /// Transmit beampattern `‖a_t(θ)ᴴ Y‖²` at the given angles in degrees.
    fn beampattern(&self, angles: Vec<f64>) -> Vec<f64> {
        metrics::beampattern_effective(&self.inner.beamformers.effective(), &angles, &self.config)
    }

    /// Writes the same files as the `run` command into `directory`.
    fn save(&self, directory: PathBuf) -> PyResult<()> {
        io::write_run(&directory, &self.inner, &self.config).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(variant={}, status={}, secrecy_rate={:.4})",
            self.inner.variant.name(),
            self.inner.status,
            self.inner.metrics.secrecy_rate_worst
        )
    }
}

fn run(py: Python<'_>, config: &PyConfig, variant: Variant, seed: u64) -> PyResult<PyRunResult> {
    let system = config.system.clone();
    let options = config.options.clone();
    let result = py.detach(|| run_variant(&system, variant, seed, &options)).map_err(to_py_err)?;
    let mut effective_config = system;
    if variant.mode().fully_digital {
        effective_config.num_rf = effective_config.geometry.num_tx;
    }
    Ok(PyRunResult { inner: result, config: effective_config })
}

/// Runs the proposed design for one channel realization.
#[pyfunction]
#[pyo3(signature = (config, seed = 1))]
fn run_she(py: Python<'_>, config: &PyConfig, seed: u64) -> PyResult<PyRunResult> {
    run(py, config, Variant::She, seed)
}

/// Runs a benchmark: "FD-BF", "ConvHBF", "CommOnly-I2S", "CommOnly-Conv" (or "SHE").
#[pyfunction]
#[pyo3(signature = (config, variant, seed = 1))]
fn run_baseline(py: Python<'_>, config: &PyConfig, variant: &str, seed: u64) -> PyResult<PyRunResult> {
    let v: Variant = variant.parse().map_err(to_py_err)?;
    run(py, config, v, seed)
}

/// Runs a sweep spec file and returns the aggregate rows.
#[pyfunction]
#[pyo3(signature = (spec_path, output_dir = None))]
fn run_sweep<'py>(py: Python<'py>, spec_path: PathBuf, output_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let mut spec = ExperimentFile::load(&spec_path).and_then(|f| f.resolve()).map_err(to_py_err)?;
    if let Some(dir) = output_dir {
        spec.output_dir = dir;
    }
    let report = py.detach(|| run_experiment(&spec)).map_err(to_py_err)?;
    serialize_to_py(py, &report.aggregates)
}

#[pyfunction]
fn variants() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.name()).collect()
}

#[pyfunction]
fn trial_seeds(base_seed: u64, trials: usize) -> Vec<u64> {
    core_trial_seeds(base_seed, trials)
}

/// Detection probability for a radar SINR (linear) and false-alarm probability.
#[pyfunction]
fn detection_probability(sinr: f64, false_alarm: f64) -> f64 {
    metrics::detection_probability(sinr, false_alarm)
}

#[pyfunction]
fn marcum_q1(a: f64, b: f64) -> f64 {
    metrics::marcum_q1(a, b)
}

/// Half-wavelength ULA transmit steering vector.
#[pyfunction]
fn steering_vector(theta_deg: f64, num_antennas: usize) -> Vec<Complex64> {
    transmit_steering(theta_deg, &ArrayGeometry::new(num_antennas, 1)).iter().copied().collect()
}

/// Worst-case secrecy rate from user rates and per-sample eavesdropper rates.
#[pyfunction]
fn worst_case_secrecy_rate(lue_rates: Vec<f64>, eue_rates: Vec<Vec<f64>>) -> PyResult<f64> {
    if lue_rates.len() != eue_rates.len() {
        return Err(PyValueError::new_err("one list of eavesdropper rates per user is required"));
    }
    Ok(metrics::worst_case_sr(&lue_rates, &eue_rates))
}

#[pymodule]
fn she_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run_she, m)?)?;
    m.add_function(wrap_pyfunction!(run_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(trial_seeds, m)?)?;
    m.add_function(wrap_pyfunction!(detection_probability, m)?)?;
    m.add_function(wrap_pyfunction!(marcum_q1, m)?)?;
    m.add_function(wrap_pyfunction!(steering_vector, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_secrecy_rate, m)?)?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
