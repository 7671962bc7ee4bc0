//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls the crate's metric or gradient code; the oracles are
//! deliberately naive so they can be trusted by inspection.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamvad::detectors::{ae_grad, ae_init, ae_loss, AutoencoderParams};
use streamvad::pose::{PoseWindow, WindowLabel};

pub const ORACLE_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Metric oracles
// ---------------------------------------------------------------------------

/// Mann-Whitney statistic: share of (positive, negative) pairs ranked
/// correctly, ties counting one half. O(P * N).
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Distinct scores, highest first.
fn thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

/// `(tp, fp)` counts when predicting positive iff `score >= threshold`,
/// counted from scratch.
fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> (usize, usize) {
    let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= threshold).count();
    let fp = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= threshold).count();
    (tp, fp)
}

fn class_counts(labels: &[bool]) -> (f64, f64) {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    (p, labels.len() as f64 - p)
}

/// `(threshold, fpr, tpr)` for `+inf`, every distinct score, and `-inf`.
pub fn brute_roc(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, f64)> {
    let (p, n) = class_counts(labels);
    let mut out = vec![(f64::INFINITY, 0.0, 0.0)];
    for t in thresholds(scores) {
        let (tp, fp) = confusion(scores, labels, t);
        out.push((t, fp as f64 / n, tp as f64 / p));
    }
    out.push((f64::NEG_INFINITY, 1.0, 1.0));
    out
}

/// Non-interpolated average precision: precision at each distinct
/// threshold weighted by the recall it adds.
pub fn brute_auc_pr(scores: &[f64], labels: &[bool]) -> f64 {
    let (p, _) = class_counts(labels);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds(scores) {
        let (tp, fp) = confusion(scores, labels, t);
        let recall = tp as f64 / p;
        area += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    area
}

/// Scans consecutive ROC points for the first where FPR catches up with
/// FNR and interpolates linearly inside that segment.
pub fn brute_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let roc = brute_roc(scores, labels);
    for w in roc.windows(2) {
        let (_, f0, t0) = w[0];
        let (_, f1, t1) = w[1];
        let g0 = f0 - (1.0 - t0);
        let g1 = f1 - (1.0 - t1);
        if g0 >= 0.0 {
            return f0;
        }
        if g1 >= 0.0 {
            if g1 == 0.0 {
                return f1;
            }
            let a = -g0 / (g1 - g0);
            return f0 + a * (f1 - f0);
        }
    }
    unreachable!("final ROC point has fpr = 1, fnr = 0")
}

/// Seeded score set with both classes, `n` in `[4, 64]`, scores on a coarse
/// grid so ties are common.
pub fn random_score_set(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=64);
    let grid = rng.random_range(3..=40) as f64;
    let prevalence = rng.random_range(0.1..0.9);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(prevalence)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let shift = if l { 0.3 } else { 0.0 };
            ((rng.random::<f64>() + shift) * grid).floor() / grid
        })
        .collect();
    (scores, labels)
}

// ---------------------------------------------------------------------------
// Gradient oracle
// ---------------------------------------------------------------------------

pub const FD_STEP: f64 = 1e-5;

/// Largest per-coordinate relative gap between the analytic gradient and a
/// central finite difference. Coordinates whose gradients are both below
/// `floor` in magnitude are compared against `floor`.
pub fn gradient_gap(params: &AutoencoderParams, batch: &[Vec<f64>], floor: f64) -> f64 {
    let dims = params.dims();
    let analytic = ae_grad(params, batch).unwrap().to_flat();
    let base = params.to_flat();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        let lp = ae_loss(&AutoencoderParams::from_flat(&dims, &plus).unwrap(), batch).unwrap();
        let lm = ae_loss(&AutoencoderParams::from_flat(&dims, &minus).unwrap(), batch).unwrap();
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let scale = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// Random small autoencoder and batch for configuration `seed`.
pub fn gradient_case(seed: u64) -> (AutoencoderParams, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(3..=10);
    let h = rng.random_range(2..=d);
    let b = rng.random_range(1..=h);
    let params = ae_init(&[d, h, b, h, d], seed).unwrap();
    let rows = rng.random_range(1..=6);
    let batch = (0..rows)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (params, batch)
}

// ---------------------------------------------------------------------------
// Window fixtures
// ---------------------------------------------------------------------------

pub fn window(track: &str, start: u64, features: Vec<f64>, anomalous: bool) -> PoseWindow {
    PoseWindow {
        stream_id: "fixture".into(),
        track_id: track.into(),
        start_frame: start,
        length: 1,
        features,
        label: if anomalous {
            WindowLabel::Anomalous
        } else {
            WindowLabel::Normal
        },
        subset_index: 0,
    }
}

/// `n` low-dimensional windows in stream order; roughly `anomaly_share` of
/// them are anomalous and sit far from the normal cloud.
pub fn toy_stream(n: usize, dim: usize, anomaly_share: f64, seed: u64) -> Vec<PoseWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let anomalous = rng.random_bool(anomaly_share);
            let centre = if anomalous { 3.0 } else { 0.0 };
            let f = (0..dim).map(|_| centre + rng.random_range(-1.0..1.0)).collect();
            window(&format!("t{}", i % 7), i as u64, f, anomalous)
        })
        .collect()
}
