//! TOML scenario files.
//!
//! A file picks a preset and overrides individual fields. Levels that are
//! naturally quoted in dB (noise, gains, SINR target) are given in dB here and
//! converted to the linear values used by [`SystemConfig`].
//!
//! ```toml
//! preset = "desk"
//!
//! [array]
//! num_tx = 16
//! num_rf = 4
//!
//! [scenario]
//! radar_sinr_db = 15.0
//! eue_rate_cap = 0.5
//!
//! [solver]
//! max_outer = 40
//! ```

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::{amplitude_from_db, ArrayGeometry, SystemConfig};
use crate::db_to_linear;
use crate::driver::RunOptions;
use crate::error::{Result, SheError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn config(self) -> SystemConfig {
        match self {
            Preset::Desk => SystemConfig::desk(),
            Preset::Paper => SystemConfig::paper_scale(),
        }
    }
}

/// A scalar applied to every user, or one value per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    All(f64),
    Each(Vec<f64>),
}

impl PerUser {
    fn expand(&self, users: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PerUser::All(v) => Ok(vec![*v; users]),
            PerUser::Each(v) if v.len() == users => Ok(v.clone()),
            PerUser::Each(v) => Err(SheError::InvalidConfig(format!(
                "{what} lists {} values for {users} users",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub num_tx: Option<usize>,
    pub num_rx: Option<usize>,
    pub num_rf: Option<usize>,
    pub spacing_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub num_users: Option<usize>,
    pub power_budget: Option<f64>,
    pub noise_user_db: Option<PerUser>,
    pub noise_eue_db: Option<f64>,
    pub noise_radar_db: Option<f64>,
    pub target_angle: Option<f64>,
    pub angle_uncertainty: Option<f64>,
    pub grid_step: Option<f64>,
    pub clutter_angles: Option<Vec<f64>>,
    pub target_gain_db: Option<f64>,
    /// One gain for every clutter patch or one per patch.
    pub clutter_gain_db: Option<PerUser>,
    /// Fixed eavesdropper estimate as `[re, im]` pairs.
    pub eue_estimate: Option<Vec<[f64; 2]>>,
    pub csi_error_var: Option<f64>,
    pub num_samples: Option<usize>,
    pub eue_rate_cap: Option<PerUser>,
    pub radar_sinr_db: Option<f64>,
    pub false_alarm: Option<f64>,
    pub lue_paths: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub array: ArraySection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub solver: RunOptions,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies the overrides to the preset and validates the result.
    pub fn resolve(&self) -> Result<(SystemConfig, RunOptions)> {
        let mut c = self.preset.config();
        let a = &self.array;
        let mut geometry = c.geometry.clone();
        if let Some(v) = a.num_tx {
            geometry.num_tx = v;
        }
        if let Some(v) = a.num_rx {
            geometry.num_rx = v;
        }
        if let Some(v) = a.spacing_ratio {
            geometry.spacing_ratio = v;
        }
        c.geometry = ArrayGeometry { ..geometry };
        if let Some(v) = a.num_rf {
            c.num_rf = v;
        }

        let s = &self.scenario;
        if let Some(u) = s.num_users {
            c.num_users = u;
            // Per-user lists of the preset no longer fit; repeat the first entry.
            c.noise_user = vec![c.noise_user[0]; u];
            c.eue_rate_caps = vec![c.eue_rate_caps[0]; u];
        }
        let users = c.num_users;
        if let Some(v) = s.power_budget {
            c.power_budget = v;
        }
        if let Some(v) = &s.noise_user_db {
            c.noise_user = v.expand(users, "noise_user_db")?.into_iter().map(db_to_linear).collect();
        }
        if let Some(v) = s.noise_eue_db {
            c.noise_eue = db_to_linear(v);
        }
        if let Some(v) = s.noise_radar_db {
            c.noise_radar = db_to_linear(v);
        }
        if let Some(v) = s.target_angle {
            c.target_angle = v;
        }
        if let Some(v) = s.angle_uncertainty {
            c.angle_uncertainty = v;
        }
        if let Some(v) = s.grid_step {
            c.grid_step = v;
        }
        if let Some(v) = &s.clutter_angles {
            let gain = c.clutter_amplitudes.first().copied().unwrap_or_else(|| amplitude_from_db(15.0));
            c.clutter_angles = v.clone();
            c.clutter_amplitudes = vec![gain; v.len()];
        }
        if let Some(v) = s.target_gain_db {
            c.target_amplitude = amplitude_from_db(v);
        }
        if let Some(v) = &s.clutter_gain_db {
            c.clutter_amplitudes = v
                .expand(c.clutter_angles.len(), "clutter_gain_db")?
                .into_iter()
                .map(amplitude_from_db)
                .collect();
        }
        if let Some(v) = &s.eue_estimate {
            c.eue_estimate = Some(v.iter().map(|[re, im]| Complex64::new(*re, *im)).collect());
        }
        if let Some(v) = s.csi_error_var {
            c.csi_error_var = v;
        }
        if let Some(v) = s.num_samples {
            c.num_samples = v;
        }
        if let Some(v) = &s.eue_rate_cap {
            c.eue_rate_caps = v.expand(users, "eue_rate_cap")?;
        }
        if let Some(v) = s.radar_sinr_db {
            c.radar_sinr_target = db_to_linear(v);
        }
        if let Some(v) = s.false_alarm {
            c.false_alarm = v;
        }
        if let Some(v) = s.lue_paths {
            c.lue_paths = v;
        }
        c.validate()?;
        validate_options(&self.solver)?;
        Ok((c, self.solver.clone()))
    }
}

pub fn validate_options(o: &RunOptions) -> Result<()> {
    let bad = |m: &str| Err(SheError::InvalidConfig(m.to_string()));
    if o.max_outer == 0 {
        return bad("solver.max_outer must be positive");
    }
    if o.plateau_window == 0 {
        return bad("solver.plateau_window must be positive");
    }
    if !(o.outer_tol > 0.0) || !(o.filter_tol > 0.0) {
        return bad("solver tolerances must be positive");
    }
    let h = &o.hbf;
    if !(h.penalty > 0.0) || !(h.penalty_growth >= 1.0) {
        return bad("solver.hbf.penalty must be positive and penalty_growth at least 1");
    }
    if h.max_inner == 0 || h.bcd_sweeps == 0 {
        return bad("solver.hbf.max_inner and bcd_sweeps must be positive");
    }
    if !(h.solver_tol > 0.0) || !(h.consensus_tol > 0.0) || !(h.eta_tol > 0.0) {
        return bad("solver.hbf tolerances must be positive");
    }
    Ok(())
}

/// Reads and resolves a scenario file.
pub fn load_config(path: &Path) -> Result<(SystemConfig, RunOptions)> {
    ConfigFile::load(path)?.resolve()
}
