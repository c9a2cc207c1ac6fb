//! Run configuration: a TOML document, optionally layered over a named preset.

use std::path::Path;

use glass_core::predict::Weighting;
use glass_core::simulate::{parametric_templates, CorruptionConfig, GenerativeConfig, SIGNAL_CHANNELS};
use glass_core::{model::Hyperparams, vi::FitConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{AppError, Result};

pub const PRESETS: [&str; 5] = ["sim2-moderate", "sim2-high", "attention-drift", "noisy-eeg", "standard"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Named base configuration the rest of the document overrides.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Master seed; overrides the seeds nested in `generator` and `fit`.
    pub seed: u64,
    pub generator: GenerativeConfig,
    pub test: TestSetConfig,
    /// Relabel simulated data so targets follow a known model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relabel: Option<RelabelConfig>,
    pub corruption: CorruptionConfig,
    pub hyper: Hyperparams,
    pub fit: FitConfig,
    pub calibration: CalibrationConfig,
    pub predict: PredictConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            seed: 0,
            generator: GenerativeConfig::sim2_moderate(),
            test: TestSetConfig::default(),
            relabel: None,
            corruption: CorruptionConfig::default(),
            hyper: Hyperparams::default(),
            fit: FitConfig::default(),
            calibration: CalibrationConfig::default(),
            predict: PredictConfig::default(),
        }
    }
}

/// Shape of the simulated test set; unset fields follow the training set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub characters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequences: Option<usize>,
    /// Characters to type; empty draws them at random.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelabelConfig {
    /// Peak of the true latent effects in data units. The default puts the
    /// relabeled standard preset at a signal level where the fitted selection
    /// rates match those of a fit to real recordings.
    pub scale: f64,
    /// Channels with nonzero true weight.
    pub signal_channels: Vec<usize>,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        Self {
            scale: 3.0,
            signal_channels: SIGNAL_CHANNELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Threshold as a multiple of the median absolute baseline effect.
    pub ratio: f64,
    /// Fixed threshold; skips calibration when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { ratio: 0.5, tau: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingName {
    #[default]
    Importance,
    Uniform,
}

impl From<WeightingName> for Weighting {
    fn from(w: WeightingName) -> Self {
        match w {
            WeightingName::Importance => Weighting::Importance,
            WeightingName::Uniform => Weighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Posterior draws behind every prediction.
    pub draws: usize,
    pub weighting: WeightingName,
    /// Fuse at most this many sequences per character.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sequences: Option<usize>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            draws: 2000,
            weighting: WeightingName::Importance,
            max_sequences: None,
        }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let standard = || Self {
            generator: GenerativeConfig::standard(),
            relabel: Some(RelabelConfig::default()),
            ..Self::default()
        };
        let mut cfg = match name {
            "sim2-moderate" => Self::default(),
            "sim2-high" => Self {
                generator: GenerativeConfig::sim2_high(),
                ..Self::default()
            },
            "standard" => standard(),
            "attention-drift" => Self {
                corruption: CorruptionConfig::attention_drift(),
                ..standard()
            },
            "noisy-eeg" => Self {
                corruption: CorruptionConfig::noisy_eeg(),
                ..standard()
            },
            other => {
                return Err(AppError::Config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        cfg.preset = Some(name.to_string());
        Ok(cfg)
    }

    /// Parses a TOML document. Unknown keys and type errors are reported
    /// with their line number. A `preset` key selects the base that the
    /// remaining keys override.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let strict: RunConfig = toml::from_str(text).map_err(|e| located(text, origin, &e))?;
        let table: Table = toml::from_str(text).map_err(|e| located(text, origin, &e))?;
        let base = match &strict.preset {
            Some(name) => Self::preset(name)?,
            None => Self::default(),
        };
        let mut merged = Value::try_from(&base).map_err(|e| AppError::Config(e.to_string()))?;
        if let Value::Table(t) = &mut merged {
            regenerate_templates(t, &table);
            merge(t, table);
        }
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| AppError::Config(format!("{origin}: {}", e.message())))?;
        cfg.preset = strict.preset;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Fills seeds from the master seed and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.generator.seed = self.seed;
        self.fit.grad.seed = self.seed;
        self.generator.validate()?;
        self.corruption.validate()?;
        self.hyper.validate()?;
        self.fit.validate()?;
        if !(self.calibration.ratio >= 0.0 && self.calibration.ratio.is_finite()) {
            return Err(AppError::Config(format!(
                "calibration.ratio must be >= 0, got {}",
                self.calibration.ratio
            )));
        }
        if let Some(tau) = self.calibration.tau {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(AppError::Config(format!("calibration.tau must be >= 0, got {tau}")));
            }
        }
        if self.predict.draws == 0 {
            return Err(AppError::Config("predict.draws must be >= 1".into()));
        }
        if let Some(r) = &self.relabel {
            if !(r.scale > 0.0 && r.scale.is_finite()) {
                return Err(AppError::Config(format!("relabel.scale must be > 0, got {}", r.scale)));
            }
            if r.signal_channels.is_empty() || r.signal_channels.iter().any(|&e| e >= self.generator.channels) {
                return Err(AppError::Config(
                    "relabel.signal_channels must be non-empty channel indices".into(),
                ));
            }
        }
        Ok(self)
    }

    /// Training-set generator.
    pub fn train_generator(&self) -> GenerativeConfig {
        self.generator.clone()
    }

    /// Test-set generator: its own seed stream, shape from `test`.
    pub fn test_generator(&self) -> GenerativeConfig {
        let mut g = self.generator.clone();
        g.seed = glass_core::rng::derive(self.seed, TEST_SET_TAG);
        g.characters = self.test.characters.unwrap_or(g.characters);
        g.sequences = self.test.sequences.unwrap_or(g.sequences);
        g.text = self.test.text.clone();
        g
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AppError::Config(e.to_string()))
    }
}

/// Seed tag of the simulated test set.
const TEST_SET_TAG: u64 = 0x7e57;

fn located(text: &str, origin: &str, e: &toml::de::Error) -> AppError {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            AppError::Config(format!("{origin}:{line}: {}", e.message()))
        }
        None => AppError::Config(format!("{origin}: {}", e.message())),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Resizing a generator without giving templates uses parametric templates
/// of the new size.
fn regenerate_templates(base: &mut Table, over: &Table) {
    let Some(Value::Table(g)) = over.get("generator") else {
        return;
    };
    let resized = g.contains_key("samples") || g.contains_key("sample_rate");
    if !resized || g.contains_key("erp_target") || g.contains_key("erp_nontarget") {
        return;
    }
    let Some(Value::Table(bg)) = base.get_mut("generator") else {
        return;
    };
    let samples = g
        .get("samples")
        .or_else(|| bg.get("samples"))
        .and_then(Value::as_integer)
        .unwrap_or(0)
        .max(0) as usize;
    let rate = g
        .get("sample_rate")
        .or_else(|| bg.get("sample_rate"))
        .and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
        .unwrap_or(1.0);
    let (target, nontarget) = parametric_templates(samples, rate);
    bg.insert("erp_target".into(), Value::try_from(target).expect("floats serialize"));
    bg.insert("erp_nontarget".into(), Value::try_from(nontarget).expect("floats serialize"));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap().resolve().unwrap();
            assert_eq!(cfg.preset.as_deref(), Some(name));
        }
        assert_eq!(RunConfig::preset("sim2-moderate").unwrap().generator.noise_var, 20.0);
        assert_eq!(RunConfig::preset("sim2-high").unwrap().generator.noise_var, 40.0);
        let drift = RunConfig::preset("attention-drift").unwrap();
        assert!(drift.corruption.attention_drift);
        assert_eq!(drift.corruption.drift_prob, 0.10);
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn unknown_keys_report_their_line() {
        let text = "seed = 3\n\n[fit]\niterations = 10\nstepsize = 0.1\n";
        let err = RunConfig::from_toml_str(text, "run.toml").unwrap_err().to_string();
        assert!(err.starts_with("run.toml:5:"), "{err}");
        assert!(err.contains("stepsize"), "{err}");
    }

    #[test]
    fn preset_layering_and_round_trip() {
        let text = "preset = \"sim2-high\"\nseed = 9\n[fit]\niterations = 7\n";
        let cfg = RunConfig::from_toml_str(text, "x").unwrap().resolve().unwrap();
        assert_eq!(cfg.generator.noise_var, 40.0);
        assert_eq!((cfg.seed, cfg.fit.iterations, cfg.fit.step_size), (9, 7, 0.05));
        let echo = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml_str(&echo, "echo").unwrap().resolve().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn resizing_regenerates_templates() {
        let text = "[generator]\nsamples = 10\n";
        let cfg = RunConfig::from_toml_str(text, "x").unwrap().resolve().unwrap();
        assert_eq!(cfg.generator.erp_target.len(), 10);
    }
}
