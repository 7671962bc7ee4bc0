//! Online adaptation loop.
//!
//! The target stream is cut into contiguous subsets. For each subset the
//! deployed checkpoint scores every window, low-scoring windows are collected
//! as pseudo-normal training data, a few known anomalies are mixed in, and
//! the lineage head is fine-tuned on the result. A checkpoint trained on
//! subset `k` is deployed for inference from subset `k + 2` onward.

mod history;
mod slot;
mod stages;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use history::{parse_history_csv, render_history_csv, HistoryRow, HISTORY_HEADER};
pub use slot::DeployedSlot;
pub use stages::{
    advance_and_swap, augment_buffer, calibrate_threshold, collect_normals, lag_respected, partition_stream,
    run_inference_stage, run_training_stage, subset_ranges, AugmentationPolicy, CollectionBuffer, Lineage,
    ScoredWindow,
};

use crate::detectors::{TrainConfig, WeightCheckpoint};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, BinaryScoreSet, Metrics};
use crate::pose::PoseWindow;
use crate::rng::derive_seed;

const TRAIN_STREAM: u64 = 0x74_7261_696e;
const AUGMENT_STREAM: u64 = 0x6175_676d;

/// Which score distribution the collection threshold is a quantile of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Source-domain validation windows under the deployed checkpoint,
    /// recomputed whenever the deployed checkpoint changes.
    #[default]
    SourceValidation,
    /// The incoming subset's own scores, recomputed every subset.
    IncomingSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub n_subsets: usize,
    /// Buffer quota as a fraction of the subset size, rounded up.
    pub quota_fraction: f64,
    /// Quantile used as the collection threshold.
    pub collection_quantile: f64,
    pub threshold_mode: ThresholdMode,
    /// Share of injected anomalies in each training batch.
    pub anomaly_ratio: f64,
    pub lineage: Lineage,
    /// Overlap training of subset `k - 1` with inference on subset `k`.
    pub concurrent: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_subsets: 12,
            quota_fraction: 0.8,
            collection_quantile: 0.95,
            threshold_mode: ThresholdMode::SourceValidation,
            anomaly_ratio: AugmentationPolicy::DEFAULT_ANOMALY_RATIO,
            lineage: Lineage::LatestTrained,
            concurrent: false,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subsets == 0 {
            return Err(Error::Config("n_subsets must be positive".into()));
        }
        if !(self.quota_fraction > 0.0 && self.quota_fraction <= 1.0) {
            return Err(Error::Config(format!("quota_fraction {} outside (0, 1]", self.quota_fraction)));
        }
        if !(self.collection_quantile > 0.0 && self.collection_quantile < 1.0) {
            return Err(Error::Config(format!(
                "collection_quantile {} outside (0, 1)",
                self.collection_quantile
            )));
        }
        if !(0.0..1.0).contains(&self.anomaly_ratio) {
            return Err(Error::Config(format!("anomaly_ratio {} outside [0, 1)", self.anomaly_ratio)));
        }
        Ok(())
    }

    pub fn quota(&self, subset_len: usize) -> usize {
        ((subset_len as f64 * self.quota_fraction).ceil() as usize).max(1)
    }
}

/// Everything the loop records about one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetRecord {
    pub subset: usize,
    pub deployed_version: u64,
    pub deployed_provenance: Vec<usize>,
    pub threshold: f64,
    pub quota: usize,
    /// Inference scores in stream order, all from `deployed_version`.
    pub scores: Vec<f64>,
    pub buffer_size: usize,
    pub max_accepted_score: Option<f64>,
    pub contamination: f64,
    pub training_size: usize,
    pub injected_anomalies: usize,
    pub trained_version: u64,
    pub trained_provenance: Vec<usize>,
    /// Trained checkpoint evaluated on the held-out split.
    pub metrics: Metrics,
}

impl SubsetRecord {
    pub fn under_quota(&self) -> bool {
        self.buffer_size < self.quota
    }

    pub fn history_row(&self) -> HistoryRow {
        HistoryRow {
            subset: self.subset,
            deployed_version: self.deployed_version,
            threshold: self.threshold,
            buffer_size: self.buffer_size,
            contamination: self.contamination,
            metrics: self.metrics,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineState {
    pub deployed: DeployedSlot,
    /// Trained, not yet deployed; strictly increasing versions.
    pub pending: VecDeque<Arc<WeightCheckpoint>>,
    /// Head of the training lineage.
    pub latest: Arc<WeightCheckpoint>,
    /// Subset currently being processed; `None` before the first boundary.
    pub subset_cursor: Option<usize>,
    /// Collection threshold for the deployed checkpoint.
    pub threshold: Option<f64>,
    pub history: Vec<SubsetRecord>,
}

impl PipelineState {
    pub fn new(source: WeightCheckpoint) -> Self {
        let source = Arc::new(source);
        PipelineState {
            deployed: DeployedSlot::new(source.clone()),
            pending: VecDeque::new(),
            latest: source,
            subset_cursor: None,
            threshold: None,
            history: Vec::new(),
        }
    }

    pub(crate) fn push_trained(&mut self, ckpt: Arc<WeightCheckpoint>) {
        debug_assert!(self.pending.back().is_none_or(|b| b.version < ckpt.version));
        self.latest = ckpt.clone();
        self.pending.push_back(ckpt);
    }

    /// Every checkpoint version produced by training, in order.
    pub fn trained_versions(&self) -> Vec<u64> {
        self.history.iter().map(|r| r.trained_version).collect()
    }

    pub fn history_rows(&self) -> Vec<HistoryRow> {
        self.history.iter().map(SubsetRecord::history_row).collect()
    }
}

/// Inputs of one online run.
#[derive(Debug, Clone, Copy)]
pub struct OnlineData<'a> {
    /// Unlabeled-in-spirit target stream, in stream order.
    pub stream: &'a [PoseWindow],
    /// Source-domain windows whose scores calibrate the collection threshold.
    pub validation: &'a [PoseWindow],
    /// Held-out labeled windows for per-training evaluation.
    pub evaluation: &'a [PoseWindow],
    /// Known anomalies available for injection.
    pub anomaly_pool: &'a [PoseWindow],
}

fn score_set(ckpt: &WeightCheckpoint, windows: &[PoseWindow]) -> Result<BinaryScoreSet> {
    let scores = ckpt.score_batch(windows)?;
    let labels = windows.iter().map(|w| w.label.is_anomalous()).collect();
    BinaryScoreSet::new(scores, labels)
}

/// Scores `windows` with `ckpt` and computes the three metrics.
pub fn evaluate_checkpoint(ckpt: &WeightCheckpoint, windows: &[PoseWindow]) -> Result<Metrics> {
    evaluate(&score_set(ckpt, windows)?)
}

/// Training job for one subset, resolved against the state when launched.
struct TrainJob {
    windows: Vec<PoseWindow>,
    subset: usize,
}

struct TrainOutcome {
    ckpt: Arc<WeightCheckpoint>,
    metrics: Metrics,
}

fn launch_base(state: &PipelineState, lineage: Lineage) -> Arc<WeightCheckpoint> {
    match lineage {
        Lineage::LatestTrained => state.latest.clone(),
        Lineage::Deployed => state.deployed.load(),
    }
}

fn execute(
    job: &TrainJob,
    base: &WeightCheckpoint,
    head_version: u64,
    train: &TrainConfig,
    seed: u64,
    evaluation: &[PoseWindow],
) -> Result<TrainOutcome> {
    let seed = derive_seed(seed, TRAIN_STREAM, job.subset as u64);
    let ckpt = stages::train_from(base, &job.windows, train, head_version, seed)?;
    let metrics = evaluate_checkpoint(&ckpt, evaluation)?;
    Ok(TrainOutcome {
        ckpt: Arc::new(ckpt),
        metrics,
    })
}

/// Swap, infer, collect and augment for the next subset. Returns the
/// partially filled record and the training job.
fn front_half(
    state: &mut PipelineState,
    subset: &[PoseWindow],
    data: &OnlineData<'_>,
    policy: &AugmentationPolicy,
    config: &PipelineConfig,
) -> Result<(SubsetRecord, TrainJob)> {
    let swapped = advance_and_swap(state);
    let k = state.subset_cursor.expect("cursor set by advance_and_swap");
    let deployed = state.deployed.load();
    let scored = run_inference_stage(subset, state)?;
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    match config.threshold_mode {
        ThresholdMode::SourceValidation if swapped || state.threshold.is_none() => {
            let reference = deployed.score_batch(data.validation)?;
            state.threshold = Some(calibrate_threshold(&reference, config.collection_quantile)?);
        }
        ThresholdMode::SourceValidation => {}
        ThresholdMode::IncomingSubset => {
            state.threshold = Some(calibrate_threshold(&scores, config.collection_quantile)?);
        }
    }
    let threshold = state.threshold.expect("threshold calibrated above");

    let quota = config.quota(subset.len());
    let buffer = collect_normals(&scored, threshold, quota, k)?;
    let training = augment_buffer(&buffer, policy, derive_seed(config.seed, AUGMENT_STREAM, k as u64))?;

    let record = SubsetRecord {
        subset: k,
        deployed_version: deployed.version,
        deployed_provenance: deployed.provenance.clone(),
        threshold,
        quota,
        scores,
        buffer_size: buffer.len(),
        max_accepted_score: buffer.scores.iter().copied().reduce(f64::max),
        contamination: buffer.contamination(),
        training_size: training.len(),
        injected_anomalies: training.len() - buffer.len(),
        trained_version: 0,
        trained_provenance: Vec::new(),
        metrics: Metrics {
            auc_roc: f64::NAN,
            auc_pr: f64::NAN,
            eer: f64::NAN,
        },
    };
    Ok((record, TrainJob { windows: training, subset: k }))
}

fn finish(state: &mut PipelineState, mut record: SubsetRecord, outcome: TrainOutcome) {
    record.trained_version = outcome.ckpt.version;
    record.trained_provenance = outcome.ckpt.provenance.clone();
    record.metrics = outcome.metrics;
    state.push_trained(outcome.ckpt);
    state.history.push(record);
}

/// Runs the full loop over `data.stream`.
///
/// The sequential and concurrent schedules produce identical state: every
/// training job reads its base checkpoint and seed at the same logical point
/// in both.
pub fn run_online(
    data: OnlineData<'_>,
    source: WeightCheckpoint,
    config: &PipelineConfig,
    train: &TrainConfig,
) -> Result<PipelineState> {
    config.validate()?;
    train.validate()?;
    if source.kind() != train.kind {
        return Err(Error::Config(format!(
            "source checkpoint is {} but training is configured for {}",
            source.kind(),
            train.kind
        )));
    }
    let policy = AugmentationPolicy::new(config.anomaly_ratio, data.anomaly_pool.to_vec())?;
    let windows = partition_stream(data.stream.to_vec(), config.n_subsets)?;
    let ranges = subset_ranges(windows.len(), config.n_subsets)?;
    let mut state = PipelineState::new(source);

    if config.concurrent {
        run_overlapped(&mut state, &windows, &ranges, &data, &policy, config, train)?;
    } else {
        for (k, range) in ranges.iter().enumerate() {
            let (record, job) = front_half(&mut state, &windows[range.clone()], &data, &policy, config)
                .map_err(|e| e.in_subset(k))?;
            let base = launch_base(&state, config.lineage);
            let outcome = execute(&job, &base, state.latest.version, train, config.seed, data.evaluation)
                .map_err(|e| e.in_subset(k))?;
            finish(&mut state, record, outcome);
        }
    }
    Ok(state)
}

fn run_overlapped(
    state: &mut PipelineState,
    windows: &[PoseWindow],
    ranges: &[std::ops::Range<usize>],
    data: &OnlineData<'_>,
    policy: &AugmentationPolicy,
    config: &PipelineConfig,
    train: &TrainConfig,
) -> Result<()> {
    let mut carried: Option<(SubsetRecord, TrainJob)> = None;
    for k in 0..=ranges.len() {
        let previous = carried.take();
        let next = std::thread::scope(|scope| -> Result<Option<(SubsetRecord, TrainJob)>> {
            // training for k - 1 starts before the boundary of k, as it
            // would at the end of iteration k - 1 in the sequential schedule
            let handle = previous.map(|(record, job)| {
                let base = launch_base(state, config.lineage);
                let head = state.latest.version;
                let evaluation = data.evaluation;
                let seed = config.seed;
                let worker = scope.spawn(move || execute(&job, &base, head, train, seed, evaluation));
                (record, worker)
            });
            // the swap for k needs the checkpoint trained on k - 2, which
            // was joined in the previous iteration
            let front = ranges.get(k).map(|range| {
                front_half(state, &windows[range.clone()], data, policy, config).map_err(|e| e.in_subset(k))
            });
            if let Some((record, worker)) = handle {
                let outcome = worker
                    .join()
                    .map_err(|_| Error::Numerical(format!("training thread for subset {} panicked", k - 1)))?
                    .map_err(|e| e.in_subset(k - 1))?;
                finish(state, record, outcome);
            }
            front.transpose()
        })?;
        carried = next;
    }
    Ok(())
}
