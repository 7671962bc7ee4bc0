//! The individual steps of one subset cycle.

use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::PipelineState;
use crate::detectors::{fine_tune, TrainConfig, WeightCheckpoint};
use crate::error::{Error, Result};
use crate::pose::{PoseWindow, WindowLabel};
use crate::rng::rng_from_seed;

/// Contiguous index ranges of `n_subsets` near-equal blocks over `len`
/// items; the first `len % n_subsets` blocks hold one extra item.
pub fn subset_ranges(len: usize, n_subsets: usize) -> Result<Vec<Range<usize>>> {
    if n_subsets == 0 {
        return Err(Error::invalid("need at least one subset"));
    }
    if n_subsets > len {
        return Err(Error::invalid(format!(
            "cannot split {len} windows into {n_subsets} subsets"
        )));
    }
    let (base, extra) = (len / n_subsets, len % n_subsets);
    let mut start = 0;
    Ok((0..n_subsets)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect())
}

/// Assigns `subset_index` to windows in stream order.
pub fn partition_stream(mut windows: Vec<PoseWindow>, n_subsets: usize) -> Result<Vec<PoseWindow>> {
    for (i, range) in subset_ranges(windows.len(), n_subsets)?.into_iter().enumerate() {
        for w in &mut windows[range] {
            w.subset_index = i;
        }
    }
    Ok(windows)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn calibrate_threshold(scores: &[f64], quantile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot calibrate a threshold on no scores"));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::invalid(format!("quantile {quantile} outside (0, 1)")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numerical(format!("non-finite score {s}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * quantile;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredWindow<'a> {
    pub window: &'a PoseWindow,
    pub score: f64,
    /// Version of the checkpoint that produced `score`.
    pub checkpoint_version: u64,
}

/// Lag rule: while processing subset `k`, the deployed lineage may only have
/// seen subsets up to `k - 2`.
pub fn lag_respected(deployed: &WeightCheckpoint, subset: usize) -> bool {
    match deployed.last_subset() {
        None => true,
        Some(last) => last + 2 <= subset,
    }
}

/// Scores one subset with the deployed checkpoint.
pub fn run_inference_stage<'a>(windows: &'a [PoseWindow], state: &PipelineState) -> Result<Vec<ScoredWindow<'a>>> {
    let deployed = state.deployed.load();
    let subset = state.subset_cursor.unwrap_or(0);
    if !lag_respected(&deployed, subset) {
        return Err(Error::invalid(format!(
            "deployed checkpoint v{} has seen subsets {:?}, too recent for subset {subset}",
            deployed.version, deployed.provenance
        )));
    }
    let scores = deployed.score_batch(windows)?;
    Ok(windows
        .iter()
        .zip(scores)
        .map(|(window, score)| ScoredWindow {
            window,
            score,
            checkpoint_version: deployed.version,
        })
        .collect())
}

/// Windows judged normal by the deployed detector, up to `quota`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectionBuffer {
    pub subset_index: usize,
    pub accepted: Vec<PoseWindow>,
    /// Detector score of each accepted window, same order.
    pub scores: Vec<f64>,
    pub quota: usize,
    pub threshold_used: f64,
}

impl CollectionBuffer {
    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.accepted.len() >= self.quota
    }

    /// Share of ground-truth anomalous windows that slipped in.
    pub fn contamination(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        let bad = self.accepted.iter().filter(|w| w.label.is_anomalous()).count();
        bad as f64 / self.accepted.len() as f64
    }
}

/// Accepts windows scoring at or below `threshold`, in stream order, until
/// `quota` is reached. Ground-truth labels are never consulted.
pub fn collect_normals(
    scored: &[ScoredWindow<'_>],
    threshold: f64,
    quota: usize,
    subset_index: usize,
) -> Result<CollectionBuffer> {
    if quota == 0 {
        return Err(Error::invalid("collection quota must be at least 1"));
    }
    let mut buffer = CollectionBuffer {
        subset_index,
        accepted: Vec::with_capacity(quota),
        scores: Vec::with_capacity(quota),
        quota,
        threshold_used: threshold,
    };
    for s in scored.iter().filter(|s| s.score <= threshold).take(quota) {
        buffer.accepted.push(s.window.clone());
        buffer.scores.push(s.score);
    }
    Ok(buffer)
}

/// Mixes known anomalies into a training batch at a fixed ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    normal_ratio: f64,
    anomaly_ratio: f64,
    anomaly_pool: Vec<PoseWindow>,
}

impl AugmentationPolicy {
    pub const DEFAULT_ANOMALY_RATIO: f64 = 0.05;

    pub fn new(anomaly_ratio: f64, anomaly_pool: Vec<PoseWindow>) -> Result<Self> {
        if !(0.0..1.0).contains(&anomaly_ratio) {
            return Err(Error::invalid(format!("anomaly ratio {anomaly_ratio} outside [0, 1)")));
        }
        if anomaly_pool.iter().any(|w| w.label != WindowLabel::Anomalous) {
            return Err(Error::invalid("anomaly pool contains windows not labeled anomalous"));
        }
        if anomaly_ratio > 0.0 && anomaly_pool.is_empty() {
            return Err(Error::invalid("positive anomaly ratio needs a non-empty pool"));
        }
        Ok(AugmentationPolicy {
            normal_ratio: 1.0 - anomaly_ratio,
            anomaly_ratio,
            anomaly_pool,
        })
    }

    pub fn normal_ratio(&self) -> f64 {
        self.normal_ratio
    }

    pub fn anomaly_ratio(&self) -> f64 {
        self.anomaly_ratio
    }

    pub fn pool(&self) -> &[PoseWindow] {
        &self.anomaly_pool
    }

    /// Anomalies to add to `collected` normals.
    pub fn anomaly_count(&self, collected: usize) -> usize {
        (collected as f64 * self.anomaly_ratio / self.normal_ratio).round() as usize
    }
}

/// Collected windows plus pool anomalies, shuffled. Pool draws are without
/// replacement until the pool runs out, then with replacement. Injected
/// windows take the buffer's subset index.
pub fn augment_buffer(buffer: &CollectionBuffer, policy: &AugmentationPolicy, seed: u64) -> Result<Vec<PoseWindow>> {
    if buffer.is_empty() {
        return Err(Error::Numerical(format!(
            "subset {} collected no windows to train on",
            buffer.subset_index
        )));
    }
    let mut rng = rng_from_seed(seed);
    let count = policy.anomaly_count(buffer.len());
    let pool = policy.pool();
    let mut out = buffer.accepted.clone();
    if count > 0 {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let mut picks: Vec<usize> = order.into_iter().take(count).collect();
        while picks.len() < count {
            picks.push(rng.random_range(0..pool.len()));
        }
        out.extend(picks.into_iter().map(|i| {
            let mut w = pool[i].clone();
            w.subset_index = buffer.subset_index;
            w
        }));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Which checkpoint a new training round starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lineage {
    /// Continue from the most recently trained checkpoint, deployed or not.
    #[default]
    LatestTrained,
    /// Restart from whatever is currently deployed.
    Deployed,
}

/// Fine-tunes the lineage head on `windows` and queues the result for
/// deployment.
pub fn run_training_stage(
    windows: &[PoseWindow],
    state: &mut PipelineState,
    config: &TrainConfig,
    lineage: Lineage,
    seed: u64,
) -> Result<Arc<WeightCheckpoint>> {
    if windows.is_empty() {
        return Err(Error::Numerical("training stage received no windows".into()));
    }
    let base = match lineage {
        Lineage::LatestTrained => state.latest.clone(),
        Lineage::Deployed => state.deployed.load(),
    };
    let trained = Arc::new(train_from(&base, windows, config, state.latest.version, seed)?);
    state.push_trained(trained.clone());
    Ok(trained)
}

/// `fine_tune`, but numbering the result after `head_version` so versions
/// stay consecutive even when training restarts from an older base.
pub(crate) fn train_from(
    base: &WeightCheckpoint,
    windows: &[PoseWindow],
    config: &TrainConfig,
    head_version: u64,
    seed: u64,
) -> Result<WeightCheckpoint> {
    let mut next = fine_tune(base, windows, config, seed)?;
    next.version = head_version + 1;
    Ok(next)
}

/// Moves to the next subset and deploys the checkpoint trained two subsets
/// back, if one is waiting. Returns whether the deployed checkpoint changed.
pub fn advance_and_swap(state: &mut PipelineState) -> bool {
    let k = state.subset_cursor.map_or(0, |c| c + 1);
    state.subset_cursor = Some(k);
    let mut newest = None;
    while let Some(front) = state.pending.front() {
        let ready = front.last_subset().is_some_and(|last| last + 2 <= k);
        if !ready {
            break;
        }
        newest = state.pending.pop_front();
    }
    match newest {
        Some(ckpt) => {
            state.deployed.store(ckpt);
            true
        }
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{DetectorKind, DetectorParams, GaussianParams};

    fn window(i: usize, anomalous: bool) -> PoseWindow {
        PoseWindow {
            stream_id: "s".into(),
            track_id: format!("t{i}"),
            start_frame: i as u64,
            length: 1,
            features: vec![i as f64, -(i as f64)],
            label: if anomalous {
                WindowLabel::Anomalous
            } else {
                WindowLabel::Normal
            },
            subset_index: 0,
        }
    }

    fn sizes(n: usize, k: usize) -> Vec<usize> {
        subset_ranges(n, k).unwrap().iter().map(|r| r.len()).collect()
    }

    #[test]
    fn partition_sizes() {
        assert_eq!(sizes(120, 12), vec![10; 12]);
        let mut expected = vec![11; 5];
        expected.extend(vec![10; 7]);
        assert_eq!(sizes(125, 12), expected);
        assert_eq!(sizes(12, 12), vec![1; 12]);
        assert!(subset_ranges(11, 12).is_err());
        assert!(subset_ranges(11, 0).is_err());
    }

    #[test]
    fn partition_assigns_in_order() {
        let ws: Vec<PoseWindow> = (0..12).map(|i| window(i, false)).collect();
        let parts = partition_stream(ws, 12).unwrap();
        for (i, w) in parts.iter().enumerate() {
            assert_eq!(w.subset_index, i);
            assert_eq!(w.start_frame, i as u64);
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(calibrate_threshold(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(), 3.0);
        assert_eq!(calibrate_threshold(&[5.0, 1.0, 4.0, 2.0, 3.0], 0.5).unwrap(), 3.0);
        assert!((calibrate_threshold(&[1.0, 2.0], 0.25).unwrap() - 1.25).abs() < 1e-15);
        for q in [0.01, 0.5, 0.95] {
            assert_eq!(calibrate_threshold(&[2.5; 7], q).unwrap(), 2.5);
        }
        assert!(calibrate_threshold(&[], 0.5).is_err());
        assert!(calibrate_threshold(&[1.0], 0.0).is_err());
        assert!(calibrate_threshold(&[1.0], 1.0).is_err());
    }

    #[test]
    fn quantile_of_uniform_draws() {
        let mut rng = rng_from_seed(17);
        let draws: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1.0)).collect();
        let q = calibrate_threshold(&draws, 0.95).unwrap();
        assert!((q - 0.95).abs() < 0.03, "{q}");
    }

    fn scored(ws: &[PoseWindow], scores: &[f64]) -> Vec<ScoredWindow<'static>> {
        let leaked: &'static [PoseWindow] = Box::leak(ws.to_vec().into_boxed_slice());
        leaked
            .iter()
            .zip(scores)
            .map(|(window, &score)| ScoredWindow {
                window,
                score,
                checkpoint_version: 0,
            })
            .collect()
    }

    #[test]
    fn collection_respects_threshold_and_quota() {
        let ws: Vec<PoseWindow> = (0..10).map(|i| window(i, i == 1)).collect();
        let all_high = scored(&ws, &[5.0; 10]);
        assert!(collect_normals(&all_high, 1.0, 5, 0).unwrap().is_empty());

        let scores = [0.1, 0.2, 9.0, 0.3, 0.4, 9.0, 0.5, 0.6, 0.7, 0.8];
        let s = scored(&ws, &scores);
        let buf = collect_normals(&s, 1.0, 5, 3).unwrap();
        let picked: Vec<u64> = buf.accepted.iter().map(|w| w.start_frame).collect();
        assert_eq!(picked, vec![0, 1, 3, 4, 6]);
        assert_eq!(buf.scores, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(buf.threshold_used, 1.0);
        assert!(buf.is_full());
        // window 1 is a ground-truth anomaly that scored low: collected anyway
        assert!((buf.contamination() - 0.2).abs() < 1e-15);
        assert!(collect_normals(&s, 1.0, 0, 0).is_err());
    }

    fn buffer_of(n: usize) -> CollectionBuffer {
        CollectionBuffer {
            subset_index: 4,
            accepted: (0..n).map(|i| window(i, false)).collect(),
            scores: vec![0.0; n],
            quota: n,
            threshold_used: 1.0,
        }
    }

    fn pool(n: usize) -> Vec<PoseWindow> {
        (1000..1000 + n).map(|i| window(i, true)).collect()
    }

    #[test]
    fn augmentation_counts() {
        let policy = AugmentationPolicy::new(0.05, pool(30)).unwrap();
        let out = augment_buffer(&buffer_of(190), &policy, 1).unwrap();
        assert_eq!(out.len(), 200);
        assert_eq!(out.iter().filter(|w| w.label.is_anomalous()).count(), 10);
        assert!(out.iter().all(|w| w.subset_index == 4 || !w.label.is_anomalous()));

        let out = augment_buffer(&buffer_of(19), &policy, 1).unwrap();
        assert_eq!(out.iter().filter(|w| w.label.is_anomalous()).count(), 1);

        // draws are distinct while the pool lasts
        let out = augment_buffer(&buffer_of(190), &policy, 2).unwrap();
        let mut ids: Vec<&str> = out
            .iter()
            .filter(|w| w.label.is_anomalous())
            .map(|w| w.track_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn augmentation_falls_back_to_replacement() {
        let policy = AugmentationPolicy::new(0.05, pool(3)).unwrap();
        let out = augment_buffer(&buffer_of(190), &policy, 1).unwrap();
        assert_eq!(out.iter().filter(|w| w.label.is_anomalous()).count(), 10);
    }

    #[test]
    fn zero_ratio_keeps_the_buffer() {
        let policy = AugmentationPolicy::new(0.0, Vec::new()).unwrap();
        let buf = buffer_of(20);
        let mut out = augment_buffer(&buf, &policy, 1).unwrap();
        out.sort_by_key(|w| w.start_frame);
        assert_eq!(out, buf.accepted);
        assert!(augment_buffer(&buffer_of(0), &policy, 1).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentationPolicy::new(0.05, Vec::new()).is_err());
        assert!(AugmentationPolicy::new(0.05, vec![window(0, false)]).is_err());
        assert!(AugmentationPolicy::new(1.0, pool(2)).is_err());
        let p = AugmentationPolicy::new(0.05, pool(1)).unwrap();
        assert!((p.normal_ratio() + p.anomaly_ratio() - 1.0).abs() < 1e-15);
    }

    fn likelihood_source() -> WeightCheckpoint {
        WeightCheckpoint::source(
            DetectorParams::Likelihood(GaussianParams::new(vec![0.0, 0.0], vec![1.0, 1.0], 1e-6).unwrap()),
            0,
        )
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig {
            kind: DetectorKind::Likelihood,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn swap_follows_two_subset_lag() {
        let mut state = PipelineState::new(likelihood_source());
        let mut deployed_provenance = Vec::new();
        for k in 0..6 {
            advance_and_swap(&mut state);
            assert_eq!(state.subset_cursor, Some(k));
            let d = state.deployed.load();
            assert!(lag_respected(&d, k));
            deployed_provenance.push(d.provenance.clone());
            let ws: Vec<PoseWindow> = (0..4)
                .map(|i| {
                    let mut w = window(i + 10 * k, false);
                    w.subset_index = k;
                    w
                })
                .collect();
            run_training_stage(&ws, &mut state, &train_cfg(), Lineage::LatestTrained, k as u64).unwrap();
        }
        assert!(deployed_provenance[0].is_empty());
        assert!(deployed_provenance[1].is_empty());
        assert_eq!(deployed_provenance[5].last(), Some(&3));
        assert_eq!(state.deployed.load().version, 4);
        assert_eq!(state.latest.version, 6);
    }

    #[test]
    fn training_starts_from_latest_not_deployed() {
        let mut state = PipelineState::new(likelihood_source());
        advance_and_swap(&mut state);
        let mut w0 = window(1, false);
        let mut w1 = window(2, false);
        w0.subset_index = 0;
        w1.subset_index = 0;
        let first = run_training_stage(&[w0.clone(), w1.clone()], &mut state, &train_cfg(), Lineage::LatestTrained, 0)
            .unwrap();
        assert_eq!(first.version, 1);
        advance_and_swap(&mut state);
        w0.subset_index = 1;
        w1.subset_index = 1;
        let second =
            run_training_stage(&[w0, w1], &mut state, &train_cfg(), Lineage::LatestTrained, 1).unwrap();
        assert_eq!(second.version, 2);
        assert_eq!(second.provenance, vec![0, 1]);
        // deployment still lags
        assert_eq!(state.deployed.load().version, 0);
    }

    #[test]
    fn inference_refuses_a_too_fresh_checkpoint() {
        let mut ckpt = likelihood_source();
        ckpt.provenance = vec![0];
        let mut state = PipelineState::new(ckpt);
        advance_and_swap(&mut state);
        let ws = vec![window(0, false)];
        assert!(run_inference_stage(&ws, &state).is_err());
    }
}
