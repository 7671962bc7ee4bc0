//! Anomaly detectors and their versioned checkpoints.
//!
//! Two families share one contract: a pure scoring function where a higher
//! score means more anomalous, and a `fine_tune` step that turns one
//! checkpoint into the next version of its lineage.

pub mod autoencoder;
mod checkpoint;
pub mod gaussian;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use autoencoder::{ae_grad, ae_init, ae_loss, ae_score, ae_score_batch, ae_train, AutoencoderParams, Dense};
pub use checkpoint::{parse_checkpoint, read_checkpoint, render_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gaussian::{gaussian_fit, gaussian_score, GaussianParams, DEFAULT_VARIANCE_FLOOR};

use crate::error::{Error, Result};
use crate::pose::PoseWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Reconstruction,
    Likelihood,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Reconstruction => "reconstruction",
            DetectorKind::Likelihood => "likelihood",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconstruction" => Ok(DetectorKind::Reconstruction),
            "likelihood" => Ok(DetectorKind::Likelihood),
            other => Err(Error::invalid(format!("unknown detector kind `{other}`"))),
        }
    }
}

/// Hyperparameters for one fine-tuning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub kind: DetectorKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the freshly fitted Gaussian when blending (likelihood only).
    pub adaptation_rate: f64,
    pub variance_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: DetectorKind::Reconstruction,
            epochs: 20,
            learning_rate: 1e-2,
            batch_size: 32,
            adaptation_rate: 0.5,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.adaptation_rate) {
            return Err(Error::Config(format!(
                "adaptation_rate {} outside [0, 1]",
                self.adaptation_rate
            )));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config("variance_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorParams {
    Reconstruction(AutoencoderParams),
    Likelihood(GaussianParams),
}

impl DetectorParams {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorParams::Reconstruction(_) => DetectorKind::Reconstruction,
            DetectorParams::Likelihood(_) => DetectorKind::Likelihood,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            DetectorParams::Reconstruction(p) => p.input_dim(),
            DetectorParams::Likelihood(p) => p.dim(),
        }
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        match self {
            DetectorParams::Reconstruction(p) => ae_score(p, features),
            DetectorParams::Likelihood(p) => gaussian_score(p, features),
        }
    }

    pub fn score_batch<S: AsRef<[f64]>>(&self, samples: &[S]) -> Result<Vec<f64>> {
        match self {
            DetectorParams::Reconstruction(p) => ae_score_batch(p, samples),
            DetectorParams::Likelihood(p) => samples
                .iter()
                .map(|s| gaussian_score(p, s.as_ref()))
                .collect(),
        }
    }
}

/// Detector parameters plus lineage bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCheckpoint {
    pub version: u64,
    pub params: DetectorParams,
    /// Sorted, duplicate-free subset indices this lineage was trained on.
    pub provenance: Vec<usize>,
    pub seed: u64,
}

impl WeightCheckpoint {
    /// A lineage root: version 0, empty provenance.
    pub fn source(params: DetectorParams, seed: u64) -> Self {
        WeightCheckpoint {
            version: 0,
            params,
            provenance: Vec::new(),
            seed,
        }
    }

    pub fn kind(&self) -> DetectorKind {
        self.params.kind()
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        self.params.score(features)
    }

    pub fn score_batch<S: AsRef<[f64]>>(&self, samples: &[S]) -> Result<Vec<f64>> {
        self.params.score_batch(samples)
    }

    /// Latest subset this lineage has seen.
    pub fn last_subset(&self) -> Option<usize> {
        self.provenance.last().copied()
    }
}

impl AsRef<[f64]> for PoseWindow {
    fn as_ref(&self) -> &[f64] {
        &self.features
    }
}

/// Trains the next version of `checkpoint` on `windows`.
///
/// Reconstruction checkpoints continue gradient descent from their current
/// weights. Likelihood checkpoints blend towards a fresh fit:
/// `(1 - rate) * old + rate * fit(windows)` on mean and variance.
/// The result's provenance gains the subset indices of `windows`.
pub fn fine_tune(
    checkpoint: &WeightCheckpoint,
    windows: &[PoseWindow],
    config: &TrainConfig,
    seed: u64,
) -> Result<WeightCheckpoint> {
    if windows.is_empty() {
        return Err(Error::invalid("fine-tuning on an empty window set"));
    }
    if checkpoint.kind() != config.kind {
        return Err(Error::invalid(format!(
            "checkpoint is {} but training config is {}",
            checkpoint.kind(),
            config.kind
        )));
    }
    config.validate()?;
    let params = match &checkpoint.params {
        DetectorParams::Reconstruction(p) => {
            let (trained, _) = ae_train(
                p,
                windows,
                config.epochs,
                config.learning_rate,
                config.batch_size,
                seed,
            )?;
            DetectorParams::Reconstruction(trained)
        }
        DetectorParams::Likelihood(p) => {
            let fit = gaussian_fit(windows, config.variance_floor)?;
            DetectorParams::Likelihood(p.blend(&fit, config.adaptation_rate)?)
        }
    };
    let mut provenance = checkpoint.provenance.clone();
    provenance.extend(windows.iter().map(|w| w.subset_index));
    provenance.sort_unstable();
    provenance.dedup();
    Ok(WeightCheckpoint {
        version: checkpoint.version + 1,
        params,
        provenance,
        seed,
    })
}
