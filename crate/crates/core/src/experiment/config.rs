//! Experiment configuration file.
//!
//! TOML: `[section]` headers, `key = value` pairs, `#` comments. Every key is
//! optional; omitted keys take the defaults of [`ExperimentConfig::default`].
//!
//! ```toml
//! output_dir = "runs/default"
//!
//! [detector]
//! kind = "likelihood"      # or "reconstruction"
//!
//! [pipeline]
//! n_subsets = 12
//! threshold_mode = "incoming_subset"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detectors::{autoencoder, DetectorKind, TrainConfig, DEFAULT_VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::pipeline::{PipelineConfig, ThresholdMode};
use crate::pose::{feature_dim, DEFAULT_JOINTS, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::streamgen::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Windowing {
    pub window: usize,
    pub stride: usize,
}

impl Default for Windowing {
    fn default() -> Self {
        Windowing {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSettings {
    pub kind: DetectorKind,
    /// Autoencoder hidden width.
    pub hidden: usize,
    /// Autoencoder bottleneck width.
    pub bottleneck: usize,
    pub init_seed: u64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            kind: DetectorKind::Reconstruction,
            hidden: autoencoder::DEFAULT_HIDDEN,
            bottleneck: autoencoder::DEFAULT_BOTTLENECK,
            init_seed: 11,
        }
    }
}

/// Budget for the source model and the target-offline reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OfflineSettings {
    fn default() -> Self {
        OfflineSettings {
            epochs: 200,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 32,
            seed: 13,
        }
    }
}

/// Per-subset fine-tuning step of the online loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adaptation_rate: f64,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        let base = TrainConfig::default();
        OnlineSettings {
            epochs: base.epochs,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: base.batch_size,
            adaptation_rate: base.adaptation_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSettings {
    /// Target domain under study; must name one of `scenario.targets`.
    pub target: String,
    /// Share of the anomalous test tracks reserved for augmentation and
    /// therefore excluded from every evaluation.
    pub pool_fraction: f64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            target: "cam0".into(),
            pool_fraction: 1.0 / 3.0,
        }
    }
}

/// Gradient step size for the autoencoder at experiment level. The loss is
/// a mean over every output coordinate, so its gradients are small and the
/// module-level default barely moves the weights within an online round.
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub variance_floor: f64,
    pub scenario: ScenarioConfig,
    pub windowing: Windowing,
    pub detector: DetectorSettings,
    pub offline: OfflineSettings,
    pub online: OnlineSettings,
    pub pipeline: PipelineConfig,
    pub evaluation: EvaluationSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs/default"),
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            scenario: ScenarioConfig::default(),
            windowing: Windowing::default(),
            detector: DetectorSettings::default(),
            offline: OfflineSettings::default(),
            online: OnlineSettings::default(),
            pipeline: PipelineConfig {
                threshold_mode: ThresholdMode::IncomingSubset,
                ..PipelineConfig::default()
            },
            evaluation: EvaluationSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.pipeline.validate()?;
        self.online_train_config().validate()?;
        self.offline_train_config().validate()?;
        if self.windowing.window == 0 || self.windowing.stride == 0 {
            return Err(Error::Config("window and stride must be positive".into()));
        }
        if self.windowing.window > self.scenario.frames_per_track {
            return Err(Error::Config(format!(
                "window {} is longer than a track ({} frames)",
                self.windowing.window, self.scenario.frames_per_track
            )));
        }
        let d = self.input_dim();
        let (h, b) = (self.detector.hidden, self.detector.bottleneck);
        if h == 0 || b == 0 || b > h || h >= d {
            return Err(Error::Config(format!(
                "autoencoder widths need 0 < bottleneck ({b}) <= hidden ({h}) < input ({d})"
            )));
        }
        if self.offline.epochs == 0 {
            return Err(Error::Config("offline.epochs must be positive".into()));
        }
        if !self.scenario.targets.iter().any(|t| t.domain_id == self.evaluation.target) {
            return Err(Error::Config(format!(
                "evaluation.target `{}` is not a scenario target",
                self.evaluation.target
            )));
        }
        if !(self.evaluation.pool_fraction > 0.0 && self.evaluation.pool_fraction < 1.0) {
            return Err(Error::Config(format!(
                "evaluation.pool_fraction {} outside (0, 1)",
                self.evaluation.pool_fraction
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        feature_dim(DEFAULT_JOINTS, self.windowing.window)
    }

    pub fn ae_dims(&self) -> Vec<usize> {
        let d = self.input_dim();
        let (h, b) = (self.detector.hidden, self.detector.bottleneck);
        vec![d, h, b, h, d]
    }

    pub fn online_train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.detector.kind,
            epochs: self.online.epochs,
            learning_rate: self.online.learning_rate,
            batch_size: self.online.batch_size,
            adaptation_rate: self.online.adaptation_rate,
            variance_floor: self.variance_floor,
        }
    }

    /// Target-offline training: full budget, and a likelihood model is
    /// replaced outright by the fit on the target stream.
    pub fn offline_train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.detector.kind,
            epochs: self.offline.epochs,
            learning_rate: self.offline.learning_rate,
            batch_size: self.offline.batch_size,
            adaptation_rate: 1.0,
            variance_floor: self.variance_floor,
        }
    }

    /// Hex SHA-256 of the canonical rendering. The schedule flag is left out:
    /// sequential and concurrent runs produce the same results.
    pub fn digest(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.pipeline.concurrent = false;
        Ok(hex::encode(Sha256::digest(render_config(&canonical)?.as_bytes())))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| line_of(text, s.start));
        Error::Config(format!("{origin}:{line}: {}", e.message()))
    })?;
    config.validate()?;
    Ok(config)
}

pub fn render_config(config: &ExperimentConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(format!("cannot render config: {e}")))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Config(format!("config file {} not found", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    parse_config(&text, &path.display().to_string())
}
