//! Configuration resolution: library defaults, then a flat TOML file, then
//! command-line flags, each layer overriding the one below it.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use pilot_selflearn::estimator::SearchGrid;
use pilot_selflearn::experiments::ScenarioConfig;
use pilot_selflearn::pilot::Scheme;

use crate::CliError;

/// Contents of a `--config` file. Every key is optional so partial files
/// only pin the values they mention.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scheme: Option<String>,
    pub snr1_db: Option<f64>,
    pub snr2_db: Option<f64>,
    pub blocks: Option<u64>,
    pub drops: Option<u64>,
    pub seed: Option<u64>,
    pub quad_nodes: Option<u64>,
    pub rho_p: Option<f64>,
    pub tau_p: Option<u64>,
    pub pilot_index: Option<u64>,
    pub noiseless: Option<bool>,
    pub grid_min_db: Option<f64>,
    pub grid_max_db: Option<f64>,
    pub grid_step_db: Option<f64>,
    pub refine_step_db: Option<f64>,
}

/// Reads and parses a flat TOML configuration file.
pub fn load_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|err| CliError::ParseConfig {
        path: path.to_path_buf(),
        message: err.message().to_string(),
    })
}

pub fn parse_scheme(label: &str) -> Result<Scheme, String> {
    match label {
        "structured" => Ok(Scheme::Structured),
        "pseudo-random" => Ok(Scheme::PseudoRandom),
        "canonical" => Ok(Scheme::Canonical),
        other => Err(format!(
            "unknown scheme {other:?}; expected structured, pseudo-random, or canonical"
        )),
    }
}

/// Fully resolved run parameters, flat like the file format so the manifest
/// can echo them back as a re-runnable record.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub scheme: Scheme,
    pub snr1_db: f64,
    pub snr2_db: f64,
    pub blocks: usize,
    pub drops: usize,
    pub seed: u64,
    pub quad_nodes: usize,
    pub rho_p: f64,
    pub tau_p: usize,
    pub pilot_index: usize,
    pub noiseless: bool,
    pub grid_min_db: f64,
    pub grid_max_db: f64,
    pub grid_step_db: f64,
    pub refine_step_db: f64,
}

impl Default for ResolvedConfig {
    fn default() -> Self {
        let base = ScenarioConfig::default();
        Self {
            scheme: base.scheme,
            snr1_db: base.snr1_db,
            snr2_db: base.snr2_db,
            blocks: base.block_count,
            drops: base.drops,
            seed: base.seed,
            quad_nodes: base.quad_nodes,
            rho_p: base.rho_p,
            tau_p: base.tau_p,
            pilot_index: base.pilot_index,
            noiseless: base.noiseless,
            grid_min_db: base.grid.min_db(),
            grid_max_db: base.grid.max_db(),
            grid_step_db: 1.0,
            refine_step_db: base.grid.refine_step_db(),
        }
    }
}

fn invalid(key: &str, reason: &str) -> CliError {
    CliError::InvalidValue {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

impl ResolvedConfig {
    /// Layers a configuration file over the current values.
    pub fn apply_file(&mut self, file: &FileConfig) -> Result<(), CliError> {
        if let Some(label) = &file.scheme {
            self.scheme =
                parse_scheme(label).map_err(|reason| invalid("scheme", &reason))?;
        }
        if let Some(v) = file.snr1_db {
            self.snr1_db = v;
        }
        if let Some(v) = file.snr2_db {
            self.snr2_db = v;
        }
        if let Some(v) = file.blocks {
            self.blocks = v as usize;
        }
        if let Some(v) = file.drops {
            self.drops = v as usize;
        }
        if let Some(v) = file.seed {
            self.seed = v;
        }
        if let Some(v) = file.quad_nodes {
            self.quad_nodes = v as usize;
        }
        if let Some(v) = file.rho_p {
            self.rho_p = v;
        }
        if let Some(v) = file.tau_p {
            self.tau_p = v as usize;
        }
        if let Some(v) = file.pilot_index {
            self.pilot_index = v as usize;
        }
        if let Some(v) = file.noiseless {
            self.noiseless = v;
        }
        if let Some(v) = file.grid_min_db {
            self.grid_min_db = v;
        }
        if let Some(v) = file.grid_max_db {
            self.grid_max_db = v;
        }
        if let Some(v) = file.grid_step_db {
            self.grid_step_db = v;
        }
        if let Some(v) = file.refine_step_db {
            self.refine_step_db = v;
        }
        Ok(())
    }

    /// Range checks with errors that name the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        if !self.snr1_db.is_finite() {
            return Err(invalid("snr1_db", "must be finite"));
        }
        if !self.snr2_db.is_finite() {
            return Err(invalid("snr2_db", "must be finite"));
        }
        if self.blocks == 0 {
            return Err(invalid("blocks", "must be at least 1"));
        }
        if self.drops == 0 {
            return Err(invalid("drops", "must be at least 1"));
        }
        if self.quad_nodes == 0 {
            return Err(invalid("quad_nodes", "must be at least 1"));
        }
        if !(self.rho_p > 0.0) || !self.rho_p.is_finite() {
            return Err(invalid("rho_p", "must be positive and finite"));
        }
        if self.tau_p == 0 {
            return Err(invalid("tau_p", "must be at least 1"));
        }
        if self.pilot_index >= self.tau_p {
            return Err(invalid("pilot_index", "must be less than tau_p"));
        }
        if !self.grid_min_db.is_finite() || !self.grid_max_db.is_finite() {
            return Err(invalid("grid_min_db", "grid bounds must be finite"));
        }
        if self.grid_max_db < self.grid_min_db {
            return Err(invalid("grid_max_db", "must be at least grid_min_db"));
        }
        if !(self.grid_step_db > 0.0) || !self.grid_step_db.is_finite() {
            return Err(invalid("grid_step_db", "must be positive and finite"));
        }
        if self.refine_step_db.is_nan() {
            return Err(invalid("refine_step_db", "must not be NaN"));
        }
        Ok(())
    }

    pub fn to_scenario(&self) -> Result<ScenarioConfig, CliError> {
        self.validate()?;
        let grid = SearchGrid::from_range_db(
            self.grid_min_db,
            self.grid_max_db,
            self.grid_step_db,
            self.refine_step_db,
        )?;
        Ok(ScenarioConfig {
            scheme: self.scheme,
            snr1_db: self.snr1_db,
            snr2_db: self.snr2_db,
            block_count: self.blocks,
            drops: self.drops,
            seed: self.seed,
            grid,
            quad_nodes: self.quad_nodes,
            rho_p: self.rho_p,
            tau_p: self.tau_p,
            pilot_index: self.pilot_index,
            noiseless: self.noiseless,
            ..ScenarioConfig::default()
        })
    }

    /// Flat JSON mirror of the file keys, suitable for the run manifest.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scheme": self.scheme.label(),
            "snr1_db": self.snr1_db,
            "snr2_db": self.snr2_db,
            "blocks": self.blocks,
            "drops": self.drops,
            "seed": self.seed,
            "quad_nodes": self.quad_nodes,
            "rho_p": self.rho_p,
            "tau_p": self.tau_p,
            "pilot_index": self.pilot_index,
            "noiseless": self.noiseless,
            "grid_min_db": self.grid_min_db,
            "grid_max_db": self.grid_max_db,
            "grid_step_db": self.grid_step_db,
            "refine_step_db": self.refine_step_db,
        })
    }
}
