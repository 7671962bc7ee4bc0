//! The no-train / online / offline comparison on one target domain.
//!
//! - *no train*: the source-trained detector applied to the target as is.
//! - *online*: the source detector adapted by the streaming loop; one
//!   evaluation per training.
//! - *offline*: the source detector fine-tuned on the whole target stream
//!   with the full budget; the reference the online case is measured against.
//!
//! Every case is evaluated on the same target test windows, minus the tracks
//! reserved as the anomaly pool. Commands persist their rows under
//! `output_dir` so they can run separately; `report` merges them.
//!
//! ```text
//! output_dir/
//!   scenario/            gen
//!   checkpoints/         source.ckpt, offline.ckpt, online_final.ckpt
//!   rows/                offline.csv, online.csv, zeroshot_{source,target}.csv
//!   history.csv          online, one line per subset
//!   report.csv report.txt trend_*.dat trends.gp
//! ```

mod config;
mod data;
mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub use config::{
    load_config, parse_config, render_config, DetectorSettings, EvaluationSettings, ExperimentConfig,
    OfflineSettings, OnlineSettings, Windowing, DEFAULT_LEARNING_RATE,
};
pub use data::{load_scenario, pool_tracks, prepare, split_anomaly_pool, PreparedData};
pub use report::{
    parse_report_csv, render_gnuplot, render_report_csv, render_table, render_trends, subset_point, Case,
    ExperimentReport, ReportRow, Retention, GNUPLOT_FILE, REPORT_HEADER, RETENTION_TOLERANCE, SOURCE_EVAL,
    TARGET_EVAL, TREND_METRICS,
};

use crate::detectors::{
    ae_init, ae_train, fine_tune, gaussian_fit, read_checkpoint, write_checkpoint, DetectorKind, DetectorParams,
    WeightCheckpoint,
};
use crate::error::{Error, Result};
use crate::metrics::AUC_PR_ESTIMATOR;
use crate::pipeline::{evaluate_checkpoint, render_history_csv, run_online, OnlineData, PipelineState};
use crate::rng::derive_seed;
use crate::streamgen::{gen_scenario, write_scenario, Scenario};

const SOURCE_STREAM: u64 = 0x736f_7572;
const OFFLINE_STREAM: u64 = 0x6f66_666c;

/// Split the zero-shot command evaluates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalOn {
    Source,
    #[default]
    Target,
}

impl EvalOn {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalOn::Source => "source",
            EvalOn::Target => "target",
        }
    }
}

impl fmt::Display for EvalOn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(EvalOn::Source),
            "target" => Ok(EvalOn::Target),
            other => Err(Error::Config(format!("eval-on must be `source` or `target`, not `{other}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// In-memory protocol
// ---------------------------------------------------------------------------

/// Trains the version-0 checkpoint on the source training windows.
pub fn train_source(config: &ExperimentConfig, data: &PreparedData) -> Result<WeightCheckpoint> {
    let seed = derive_seed(config.offline.seed, SOURCE_STREAM, 0);
    let params = match config.detector.kind {
        DetectorKind::Likelihood => DetectorParams::Likelihood(gaussian_fit(&data.source_train, config.variance_floor)?),
        DetectorKind::Reconstruction => {
            let init = ae_init(&config.ae_dims(), config.detector.init_seed)?;
            let (trained, _) = ae_train(
                &init,
                &data.source_train,
                config.offline.epochs,
                config.offline.learning_rate,
                config.offline.batch_size,
                seed,
            )?;
            DetectorParams::Reconstruction(trained)
        }
    };
    Ok(WeightCheckpoint::source(params, seed))
}

/// Fine-tunes `source` on the entire target stream with the offline budget.
pub fn train_offline(config: &ExperimentConfig, source: &WeightCheckpoint, data: &PreparedData) -> Result<WeightCheckpoint> {
    let seed = derive_seed(config.offline.seed, OFFLINE_STREAM, 0);
    fine_tune(source, &data.target_stream, &config.offline_train_config(), seed)
}

pub fn eval_row(case: Case, point: &str, ckpt: &WeightCheckpoint, windows: &[crate::pose::PoseWindow]) -> Result<ReportRow> {
    Ok(ReportRow {
        case,
        eval_point: point.to_string(),
        checkpoint_version: ckpt.version,
        metrics: evaluate_checkpoint(ckpt, windows)?,
    })
}

/// Zero-shot evaluation of `source` on the chosen split.
pub fn no_train_row(source: &WeightCheckpoint, data: &PreparedData, eval_on: EvalOn) -> Result<ReportRow> {
    match eval_on {
        EvalOn::Target => eval_row(Case::NoTrain, TARGET_EVAL, source, &data.evaluation),
        EvalOn::Source => eval_row(Case::NoTrain, SOURCE_EVAL, source, &data.source_test),
    }
}

pub fn run_online_case(config: &ExperimentConfig, source: WeightCheckpoint, data: &PreparedData) -> Result<PipelineState> {
    let online = OnlineData {
        stream: &data.target_stream,
        validation: &data.validation,
        evaluation: &data.evaluation,
        anomaly_pool: &data.anomaly_pool,
    };
    run_online(online, source, &config.pipeline, &config.online_train_config())
}

/// One row per online training, in subset order.
pub fn online_rows(state: &PipelineState) -> Vec<ReportRow> {
    state
        .history
        .iter()
        .map(|r| ReportRow {
            case: Case::Online,
            eval_point: subset_point(r.subset),
            checkpoint_version: r.trained_version,
            metrics: r.metrics,
        })
        .collect()
}

/// Everything one full protocol run produces.
#[derive(Debug)]
pub struct ProtocolRun {
    pub source: WeightCheckpoint,
    pub offline: WeightCheckpoint,
    pub online: PipelineState,
    pub report: ExperimentReport,
}

/// Runs all three cases in memory on an already generated scenario.
pub fn run_protocol(config: &ExperimentConfig, scenario: &Scenario) -> Result<ProtocolRun> {
    config.validate()?;
    let data = prepare(scenario, config)?;
    let source = train_source(config, &data)?;
    let offline = train_offline(config, &source, &data)?;
    let online = run_online_case(config, source.clone(), &data)?;
    let mut rows = vec![no_train_row(&source, &data, EvalOn::Target)?];
    rows.extend(online_rows(&online));
    rows.push(eval_row(Case::Offline, TARGET_EVAL, &offline, &data.evaluation)?);
    let report = ExperimentReport {
        metadata: base_metadata(config)?,
        rows,
    };
    Ok(ProtocolRun {
        source,
        offline,
        online,
        report,
    })
}

/// Run-invariant description of how the numbers were produced.
pub fn base_metadata(config: &ExperimentConfig) -> Result<std::collections::BTreeMap<String, String>> {
    let threshold_mode = match config.pipeline.threshold_mode {
        crate::pipeline::ThresholdMode::SourceValidation => "source_validation",
        crate::pipeline::ThresholdMode::IncomingSubset => "incoming_subset",
    };
    Ok([
        ("config_digest", config.digest()?),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("detector", config.detector.kind.to_string()),
        ("target", config.evaluation.target.clone()),
        ("auc_pr_estimator", AUC_PR_ESTIMATOR.to_string()),
        ("offline_epochs", config.offline.epochs.to_string()),
        ("online_epochs", config.online.epochs.to_string()),
        ("n_subsets", config.pipeline.n_subsets.to_string()),
        ("threshold_mode", threshold_mode.to_string()),
        ("swap_rule", "subset k is scored by the checkpoint trained on subset k-2".to_string()),
        ("online_aggregate", "mean over every online training".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect())
}

// ---------------------------------------------------------------------------
// File-backed commands
// ---------------------------------------------------------------------------

pub fn scenario_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("scenario")
}

pub fn checkpoint_path(config: &ExperimentConfig, name: &str) -> PathBuf {
    config.output_dir.join("checkpoints").join(format!("{name}.ckpt"))
}

pub fn rows_path(config: &ExperimentConfig, name: &str) -> PathBuf {
    config.output_dir.join("rows").join(format!("{name}.csv"))
}

pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn save_checkpoint(ckpt: &WeightCheckpoint, path: PathBuf) -> Result<()> {
    ensure_parent(&path)?;
    write_checkpoint(ckpt, path)
}

fn write_rows(path: &Path, config: &ExperimentConfig, command: &str, started: Instant, rows: Vec<ReportRow>) -> Result<ExperimentReport> {
    let mut metadata = base_metadata(config)?;
    metadata.insert("command".into(), command.into());
    metadata.insert("wall_time_s".into(), format!("{:.3}", started.elapsed().as_secs_f64()));
    let report = ExperimentReport { metadata, rows };
    write_file(path, &render_report_csv(&report)?)?;
    Ok(report)
}

fn load_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let scenario = load_scenario(&scenario_dir(config), config)?;
    prepare(&scenario, config)
}

fn load_source(config: &ExperimentConfig) -> Result<WeightCheckpoint> {
    let path = checkpoint_path(config, "source");
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            hint: "run `streamvad offline` first; it trains the source detector".into(),
        });
    }
    let ckpt = read_checkpoint(&path)?;
    if ckpt.kind() != config.detector.kind {
        return Err(Error::Config(format!(
            "{} holds a {} detector but the config asks for {}; rerun `streamvad offline`",
            path.display(),
            ckpt.kind(),
            config.detector.kind
        )));
    }
    Ok(ckpt)
}

/// Generates the synthetic scenario into `output_dir/scenario`.
pub fn cmd_gen(config: &ExperimentConfig, force: bool) -> Result<Vec<PathBuf>> {
    config.validate()?;
    write_scenario(&config.scenario, &scenario_dir(config), force)
}

/// Trains the source and target-offline detectors; writes both checkpoints
/// and the no-train and offline rows.
pub fn cmd_offline(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let data = load_data(config)?;
    let source = train_source(config, &data)?;
    save_checkpoint(&source, checkpoint_path(config, "source"))?;
    let offline = train_offline(config, &source, &data)?;
    save_checkpoint(&offline, checkpoint_path(config, "offline"))?;
    let rows = vec![
        no_train_row(&source, &data, EvalOn::Target)?,
        eval_row(Case::Offline, TARGET_EVAL, &offline, &data.evaluation)?,
    ];
    write_rows(&rows_path(config, "offline"), config, "offline", started, rows)
}

/// Evaluates the stored source detector without adaptation.
pub fn cmd_zeroshot(config: &ExperimentConfig, eval_on: EvalOn) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let source = load_source(config)?;
    let data = load_data(config)?;
    let row = no_train_row(&source, &data, eval_on)?;
    let name = format!("zeroshot_{eval_on}");
    write_rows(&rows_path(config, &name), config, &name, started, vec![row])
}

/// Runs the streaming loop from the stored source detector.
pub fn cmd_online(config: &ExperimentConfig, concurrent: bool) -> Result<(PipelineState, ExperimentReport)> {
    let mut config = config.clone();
    config.pipeline.concurrent |= concurrent;
    config.validate()?;
    let started = Instant::now();
    let source = load_source(&config)?;
    let data = load_data(&config)?;
    let state = run_online_case(&config, source, &data)?;
    write_file(&config.output_dir.join(HISTORY_FILE), &render_history_csv(&state.history_rows()))?;
    save_checkpoint(&state.latest, checkpoint_path(&config, "online_final"))?;
    let report = write_rows(&rows_path(&config, "online"), &config, "online", started, online_rows(&state))?;
    Ok((state, report))
}

fn read_rows(path: &Path) -> Result<Option<ExperimentReport>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report_csv(&text, &path.display().to_string()).map(Some)
}

/// Merges stored rows into the report files. Fails with the list of commands
/// still to run when a case is missing.
pub fn cmd_report(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let digest = config.digest()?;
    let mut merged = ExperimentReport {
        metadata: base_metadata(config)?,
        rows: Vec::new(),
    };
    for name in ["offline", "online", "zeroshot_source", "zeroshot_target"] {
        let path = rows_path(config, name);
        let Some(part) = read_rows(&path)? else { continue };
        let theirs = part.metadata.get("config_digest").cloned().unwrap_or_default();
        if theirs != digest {
            return Err(Error::Config(format!(
                "{} was produced by a different config; rerun `streamvad {}`",
                path.display(),
                part.metadata.get("command").map_or(name, |c| c.split('_').next().unwrap_or(c))
            )));
        }
        if let Some(t) = part.metadata.get("wall_time_s") {
            merged.metadata.insert(format!("wall_time_s.{name}"), t.clone());
        }
        for row in part.rows {
            // zero-shot on target repeats the offline command's no-train row
            let duplicate = merged
                .rows
                .iter()
                .any(|r| r.case == row.case && r.eval_point == row.eval_point);
            if !duplicate {
                merged.rows.push(row);
            }
        }
    }

    let missing = merged.missing_cases();
    if !missing.is_empty() {
        let mut todo: Vec<&str> = Vec::new();
        for case in &missing {
            let cmd = match case {
                Case::NoTrain | Case::Offline => "streamvad offline --config <config>",
                Case::Online => "streamvad online --config <config>",
            };
            if !todo.contains(&cmd) {
                todo.push(cmd);
            }
        }
        let names: Vec<&str> = missing.iter().map(|c| c.as_str()).collect();
        return Err(Error::MissingArtifact {
            path: config.output_dir.join("rows"),
            hint: format!("no results yet for {}; run: {}", names.join(", "), todo.join("; then ")),
        });
    }

    merged.rows.sort_by_key(|r| r.case);
    merged.metadata.insert("report_digest".into(), merged.digest()?);
    let out = &config.output_dir;
    write_file(&out.join(REPORT_CSV), &render_report_csv(&merged)?)?;
    write_file(&out.join(REPORT_TXT), &render_table(&merged)?)?;
    for (name, body) in render_trends(&merged) {
        write_file(&out.join(name), &body)?;
    }
    write_file(&out.join(GNUPLOT_FILE), &render_gnuplot())?;
    Ok(merged)
}

/// Generates the scenario in memory; `run_protocol` on the result is the
/// whole experiment without touching the filesystem.
pub fn scenario_for(config: &ExperimentConfig) -> Result<Scenario> {
    gen_scenario(&config.scenario)
}
