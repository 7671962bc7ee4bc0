//! Windowed data sets of one experiment.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pose::{read_stream, window_tracks, PoseStream, PoseWindow};
use crate::streamgen::{target_stream_file, target_test_file, Scenario, TargetStreams, SOURCE_TEST_FILE, SOURCE_TRAIN_FILE};

use super::ExperimentConfig;

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub source_train: Vec<PoseWindow>,
    pub source_test: Vec<PoseWindow>,
    /// Normal source-test windows; calibrate the collection threshold.
    pub validation: Vec<PoseWindow>,
    /// Target deployment stream in stream order.
    pub target_stream: Vec<PoseWindow>,
    /// Target test windows minus the anomaly-pool tracks.
    pub evaluation: Vec<PoseWindow>,
    /// Windows of the reserved anomalous target-test tracks.
    pub anomaly_pool: Vec<PoseWindow>,
}

/// Track ids reserved for the anomaly pool: `ceil(fraction * n)` of the `n`
/// anomalous tracks, spread evenly over their sorted order.
pub fn pool_tracks(windows: &[PoseWindow], fraction: f64) -> Result<BTreeSet<String>> {
    let anomalous: Vec<&str> = windows
        .iter()
        .filter(|w| w.label.is_anomalous())
        .map(|w| w.track_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = anomalous.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least two anomalous test tracks to reserve a pool, found {n}"
        )));
    }
    // at least one track stays on each side
    let take = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    Ok((0..take)
        .map(|i| anomalous[(i * n) / take].to_string())
        .collect())
}

/// Splits `windows` into `(evaluation, pool)` by track.
pub fn split_anomaly_pool(windows: &[PoseWindow], fraction: f64) -> Result<(Vec<PoseWindow>, Vec<PoseWindow>)> {
    let reserved = pool_tracks(windows, fraction)?;
    let (pool, evaluation): (Vec<_>, Vec<_>) = windows.iter().cloned().partition(|w| reserved.contains(&w.track_id));
    Ok((evaluation, pool))
}

fn windows_of(stream: &PoseStream, config: &ExperimentConfig) -> Result<Vec<PoseWindow>> {
    window_tracks(&stream.frames, config.windowing.window, config.windowing.stride)
}

fn target<'a>(scenario: &'a Scenario, config: &ExperimentConfig) -> Result<&'a TargetStreams> {
    scenario
        .targets
        .iter()
        .find(|t| t.domain_id == config.evaluation.target)
        .ok_or_else(|| Error::Config(format!("scenario has no target `{}`", config.evaluation.target)))
}

pub fn prepare(scenario: &Scenario, config: &ExperimentConfig) -> Result<PreparedData> {
    let t = target(scenario, config)?;
    let source_train = windows_of(&scenario.source_train, config)?;
    let source_test = windows_of(&scenario.source_test, config)?;
    let target_stream = windows_of(&t.stream, config)?;
    let target_test = windows_of(&t.test, config)?;
    let validation: Vec<PoseWindow> = source_test.iter().filter(|w| !w.label.is_anomalous()).cloned().collect();
    let (evaluation, anomaly_pool) = split_anomaly_pool(&target_test, config.evaluation.pool_fraction)?;
    for (name, set) in [
        ("source train", &source_train),
        ("validation", &validation),
        ("target stream", &target_stream),
    ] {
        if set.is_empty() {
            return Err(Error::invalid(format!("{name} set has no windows")));
        }
    }
    Ok(PreparedData {
        source_train,
        source_test,
        validation,
        target_stream,
        evaluation,
        anomaly_pool,
    })
}

fn read_required(dir: &Path, name: &str) -> Result<PoseStream> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            hint: "run `streamvad gen` first".into(),
        });
    }
    read_stream(&path)
}

/// Reads the scenario files written by `gen` from `dir`. Only the source
/// splits and the evaluated target are loaded.
pub fn load_scenario(dir: &Path, config: &ExperimentConfig) -> Result<Scenario> {
    let id = &config.evaluation.target;
    Ok(Scenario {
        source_train: read_required(dir, SOURCE_TRAIN_FILE)?,
        source_test: read_required(dir, SOURCE_TEST_FILE)?,
        targets: vec![TargetStreams {
            domain_id: id.clone(),
            stream: read_required(dir, &target_stream_file(id))?,
            test: read_required(dir, &target_test_file(id))?,
        }],
    })
}
