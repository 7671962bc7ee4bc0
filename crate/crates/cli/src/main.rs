//! `streamvad`: generate the synthetic scenario, train and evaluate the
//! no-train / online / offline cases, and assemble the comparison report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing or unreadable
//! artifact, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use streamvad::experiment::{self, load_config, render_table, EvalOn, ExperimentConfig, ExperimentReport};
use streamvad::Error;

#[derive(Parser)]
#[command(name = "streamvad", version, about = "Online adaptation of pose-based anomaly detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic source and target streams.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Replace existing scenario files.
        #[arg(long)]
        force: bool,
    },
    /// Train the source and target-offline detectors; record no-train and offline rows.
    Offline {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the source detector without adaptation.
    Zeroshot {
        #[command(flatten)]
        common: Common,
        /// Split to evaluate on.
        #[arg(long, value_name = "SPLIT", default_value = "target", value_parser = parse_eval_on)]
        eval_on: EvalOn,
    },
    /// Run the online adaptation loop from the source detector.
    Online {
        #[command(flatten)]
        common: Common,
        /// Overlap training with inference on the next subset.
        #[arg(long)]
        concurrent: bool,
    },
    /// Merge stored rows into report.csv, report.txt and trend files.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_eval_on(s: &str) -> Result<EvalOn, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut config = load_config(&common.config)?;
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn summary(report: &ExperimentReport) -> anyhow::Result<String> {
    let rows_only = ExperimentReport {
        metadata: Default::default(),
        rows: report.rows.clone(),
    };
    Ok(render_table(&rows_only)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen { common, force } => {
            let config = load(&common)?;
            let written = experiment::cmd_gen(&config, force)?;
            println!("wrote {} files to {}", written.len(), experiment::scenario_dir(&config).display());
        }
        Command::Offline { common } => {
            let config = load(&common)?;
            let report = experiment::cmd_offline(&config).context("offline training")?;
            print!("{}", summary(&report)?);
        }
        Command::Zeroshot { common, eval_on } => {
            let config = load(&common)?;
            let report = experiment::cmd_zeroshot(&config, eval_on)?;
            print!("{}", summary(&report)?);
        }
        Command::Online { common, concurrent } => {
            let config = load(&common)?;
            let (state, report) = experiment::cmd_online(&config, concurrent).context("online loop")?;
            let under: Vec<usize> = state.history.iter().filter(|r| r.under_quota()).map(|r| r.subset).collect();
            if !under.is_empty() {
                eprintln!("note: buffers of subsets {under:?} closed below quota");
            }
            print!("{}", summary(&report)?);
            println!("history: {}", config.output_dir.join(experiment::HISTORY_FILE).display());
        }
        Command::Report { common } => {
            let config = load(&common)?;
            let report = experiment::cmd_report(&config)?;
            print!("{}", render_table(&report)?);
            println!("\nwrote {}", config.output_dir.join(experiment::REPORT_CSV).display());
        }
    }
    Ok(())
}

/// The cause chain joined by `: `, skipping causes whose text an outer
/// message already includes.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<Error>())
                .map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
