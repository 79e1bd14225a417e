//! Run configuration: every tunable of the pipeline in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::ExpertConfig;
use crate::imaging::{EncodingConfig, ImagingConfig};
use crate::neurosim::NetworkParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationGrid {
    pub tau_gi_grid: Vec<f64>,
    pub theta_grid: Vec<u64>,
    /// Leading places of the traverse reserved for calibration.
    pub cal_places: usize,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        Self {
            tau_gi_grid: vec![0.5, 1.0, 2.0, 4.0],
            theta_grid: (1..=10).map(|k| k * 20).collect(),
            cal_places: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `None` means one per available core.
    pub workers: Option<usize>,
    pub imaging: ImagingConfig,
    pub encoding: EncodingConfig,
    pub network: NetworkParams,
    pub expert: ExpertConfig,
    /// Hyperactivity threshold; 0 disables the filter.
    pub theta: u64,
    pub calibration: CalibrationGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            imaging: ImagingConfig::default(),
            encoding: EncodingConfig::default(),
            network: NetworkParams::default(),
            expert: ExpertConfig::default(),
            theta: 100,
            calibration: CalibrationGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e.to_string()))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.imaging.validate()?;
        self.encoding.validate()?;
        self.network.validate()?;
        self.expert.validate()?;
        if self.workers == Some(0) {
            return Err(Error::config("workers must be >= 1"));
        }
        let cal = &self.calibration;
        if cal.tau_gi_grid.is_empty() || cal.theta_grid.is_empty() {
            return Err(Error::config("calibration grids must be non-empty"));
        }
        if cal.tau_gi_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::config("tau_gi grid values must be > 0"));
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        self.workers.unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, std::num::NonZeroUsize::get)
        })
    }
}
