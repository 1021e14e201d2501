//! File formats: beamformer JSON, CSV tables and run directories.
//!
//! Complex matrices are stored as row-major arrays of `[re, im]` pairs with
//! their shape alongside. Phase-shifter networks additionally keep the raw
//! phases so a reloaded analog stage is exactly unit-modulus.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::array_model::SystemConfig;
use crate::driver::{check_constraints, ConstraintCheck, RunResult, RunStatus};
use crate::error::{Result, SheError};
use crate::metrics::{AnalogStage, BeamformerSet, MetricsReport};
use crate::{linear_to_db, CMatrix, CVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `[re, im]` pairs.
    pub data: Vec<[f64; 2]>,
}

impl SavedMatrix {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| [m[(i, j)].re, m[(i, j)].im])
            .collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn from_vector(v: &CVector) -> Self {
        Self::from_matrix(&CMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(SheError::Parse(format!(
                "matrix data has {} entries for shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            Complex64::new(re, im)
        }))
    }

    pub fn to_vector(&self) -> Result<CVector> {
        let m = self.to_matrix()?;
        if m.ncols() != 1 {
            return Err(SheError::Parse(format!("expected a column vector, got {} columns", m.ncols())));
        }
        Ok(m.column(0).into_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedPhases {
    pub rows: usize,
    pub cols: usize,
    /// Row-major phases in radians.
    pub data: Vec<f64>,
}

/// A designed transmitter and receive filter, as written by `run` and `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedBeamformer {
    pub variant: String,
    pub seed: u64,
    /// `None` for a bypassed analog stage.
    pub analog_phases: Option<SavedPhases>,
    pub analog: SavedMatrix,
    /// Stacked digital matrix; column 0 is the I2S stream.
    pub digital: SavedMatrix,
    pub receive_filter: SavedMatrix,
    pub config: SystemConfig,
}

impl SavedBeamformer {
    pub fn new(result: &RunResult, config: &SystemConfig) -> Self {
        let bf = &result.beamformers;
        let analog_phases = match &bf.analog {
            AnalogStage::PhaseShifters { phases } => Some(SavedPhases {
                rows: phases.nrows(),
                cols: phases.ncols(),
                data: (0..phases.nrows()).flat_map(|i| (0..phases.ncols()).map(move |j| phases[(i, j)])).collect(),
            }),
            AnalogStage::FullyDigital { .. } => None,
        };
        Self {
            variant: result.variant.name().to_string(),
            seed: result.seed,
            analog_phases,
            analog: SavedMatrix::from_matrix(&bf.analog.matrix()),
            digital: SavedMatrix::from_matrix(&bf.stacked_digital()),
            receive_filter: SavedMatrix::from_vector(&result.filter.w),
            config: config.clone(),
        }
    }

    pub fn beamformers(&self) -> Result<BeamformerSet> {
        let analog = match &self.analog_phases {
            Some(p) => {
                if p.data.len() != p.rows * p.cols {
                    return Err(SheError::Parse("phase data does not match its shape".into()));
                }
                AnalogStage::from_phases(DMatrix::from_row_slice(p.rows, p.cols, &p.data))
            }
            None => AnalogStage::FullyDigital { dim: self.analog.rows },
        };
        let digital = self.digital.to_matrix()?;
        if digital.nrows() != analog.num_rf() || digital.ncols() < 2 {
            return Err(SheError::Parse(format!(
                "digital matrix shape {}x{} does not fit {} RF chains",
                digital.nrows(),
                digital.ncols(),
                analog.num_rf()
            )));
        }
        Ok(BeamformerSet::from_stacked(analog, &digital))
    }

    pub fn filter(&self) -> Result<CVector> {
        self.receive_filter.to_vector()
    }
}

/// Result fields that are useful without the matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub status: RunStatus,
    pub wall_time: f64,
    pub achieved_gamma_radar_db: f64,
    pub consensus_residual: f64,
    pub power_slack: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub metrics: MetricsReport,
    pub checks: ConstraintCheck,
}

impl RunSummary {
    pub fn new(result: &RunResult, config: &SystemConfig) -> Self {
        Self {
            variant: result.variant.name().to_string(),
            seed: result.seed,
            status: result.status,
            wall_time: result.wall_time,
            achieved_gamma_radar_db: linear_to_db(result.achieved_gamma_radar),
            consensus_residual: result.consensus_residual,
            power_slack: result.power_slack,
            outer_iterations: result.trace.len(),
            inner_iterations: result.inner_trace.len(),
            metrics: result.metrics.clone(),
            checks: check_constraints(result, config),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(SheError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub angle_deg: f64,
    pub gain: f64,
    pub gain_db: f64,
}

pub fn beampattern_rows(angles: &[f64], gains: &[f64]) -> Vec<PatternRow> {
    angles
        .iter()
        .zip(gains)
        .map(|(&angle_deg, &gain)| PatternRow { angle_deg, gain, gain_db: linear_to_db(gain) })
        .collect()
}

/// Writes `summary.json`, `beamformer.json`, `config.json`, `trace.csv` and
/// `inner_trace.csv` into `dir`, creating it if needed.
pub fn write_run(dir: &Path, result: &RunResult, config: &SystemConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("summary.json"), &RunSummary::new(result, config))?;
    write_json(&dir.join("beamformer.json"), &SavedBeamformer::new(result, config))?;
    write_json(&dir.join("config.json"), config)?;
    write_csv(&dir.join("trace.csv"), &result.trace)?;
    write_csv(&dir.join("inner_trace.csv"), &result.inner_trace)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::{complex_gaussian, seeded_rng};

    #[test]
    fn matrix_round_trip_is_exact() {
        let mut rng = seeded_rng(4);
        let m = CMatrix::from_fn(3, 2, |_, _| complex_gaussian(&mut rng));
        let saved = SavedMatrix::from_matrix(&m);
        assert_eq!(saved.data[1], [m[(0, 1)].re, m[(0, 1)].im]);
        let json = serde_json::to_string(&saved).unwrap();
        let back: SavedMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_matrix().unwrap(), m);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let bad = SavedMatrix { rows: 2, cols: 2, data: vec![[0.0, 0.0]; 3] };
        assert!(bad.to_matrix().is_err());
        let wide = SavedMatrix { rows: 1, cols: 2, data: vec![[0.0, 0.0]; 2] };
        assert!(wide.to_vector().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = beampattern_rows(&[-1.0, 0.0, 1.0], &[0.5, 1.0 / 3.0, 2.0]);
        let path = dir.path().join("p.csv");
        write_csv(&path, &rows).unwrap();
        let back: Vec<PatternRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
    }
}
