//! Run-history CSV, one row per subset.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::Metrics;

pub const HISTORY_HEADER: &str = "subset,deployed_version,threshold,buffer_size,contamination,auc_roc,auc_pr,eer";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub subset: usize,
    pub deployed_version: u64,
    pub threshold: f64,
    pub buffer_size: usize,
    pub contamination: f64,
    pub metrics: Metrics,
}

pub fn render_history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.subset,
            r.deployed_version,
            r.threshold,
            r.buffer_size,
            r.contamination,
            r.metrics.auc_roc,
            r.metrics.auc_pr,
            r.metrics.eer
        )
        .unwrap();
    }
    out
}

pub fn parse_history_csv(text: &str, origin: &str) -> Result<Vec<HistoryRow>> {
    let err = |line: usize, field: &str, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        field: field.to_string(),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HISTORY_HEADER => {}
        _ => return Err(err(1, "header", format!("expected `{HISTORY_HEADER}`"))),
    }
    let names: Vec<&str> = HISTORY_HEADER.split(',').collect();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(err(
                lineno,
                "row",
                format!("expected {} fields, found {}", names.len(), cells.len()),
            ));
        }
        let real = |j: usize| -> Result<f64> {
            cells[j]
                .parse()
                .map_err(|_| err(lineno, names[j], format!("`{}` is not a number", cells[j])))
        };
        let int = |j: usize| -> Result<u64> {
            cells[j]
                .parse()
                .map_err(|_| err(lineno, names[j], format!("`{}` is not an integer", cells[j])))
        };
        rows.push(HistoryRow {
            subset: int(0)? as usize,
            deployed_version: int(1)?,
            threshold: real(2)?,
            buffer_size: int(3)? as usize,
            contamination: real(4)?,
            metrics: Metrics {
                auc_roc: real(5)?,
                auc_pr: real(6)?,
                eer: real(7)?,
            },
        });
    }
    Ok(rows)
}
