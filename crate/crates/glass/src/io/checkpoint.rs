//! Model checkpoints: a JSON document with a format version.

use std::path::Path;

use glass_core::model::Hyperparams;
use glass_core::variational::VariationalParams;
use glass_core::vi::{self, FitConfig, PosteriorDraws, TracePoint};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tool_version: String,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    pub hyper: Hyperparams,
    pub fit: FitConfig,
    pub seed: u64,
    pub calibration: Option<CalibrationRecord>,
    pub variational: VariationalParams,
    pub trace: Vec<TracePoint>,
    pub draws: DrawRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub ratio: f64,
    pub tau: f64,
    pub baseline_medians: Vec<f64>,
}

/// The posterior draws used downstream, regenerated from the surrogate and
/// `seed`, with their training log joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawRecord {
    pub count: usize,
    pub seed: u64,
    pub log_joint: Option<Vec<f64>>,
}

impl Checkpoint {
    /// Regenerates the recorded posterior draws.
    pub fn draws(&self) -> Result<PosteriorDraws> {
        let mut draws = vi::posterior_draws(&self.variational, self.draws.count, self.draws.seed)?;
        if let Some(joint) = &self.draws.log_joint {
            if joint.len() != draws.len() {
                return Err(glass_core::Error::LengthMismatch {
                    expected: draws.len(),
                    found: joint.len(),
                }
                .into());
            }
            draws.log_joint = Some(joint.clone());
        }
        Ok(draws)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(format!("unsupported checkpoint format_version {v}")),
            None => return Err("missing format_version".into()),
        }
        let cp: Checkpoint = serde_json::from_value(value).map_err(|e| e.to_string())?;
        cp.variational.validate().map_err(|e| e.to_string())?;
        if cp.variational.samples() != cp.samples || cp.variational.channels() != cp.channels {
            return Err("variational parameters disagree with the recorded shape".into());
        }
        Ok(cp)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| AppError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_json(&text).map_err(|m| AppError::format(path, m))
    }
}
