//! Result rows of the three-way comparison and the files built from them.
//!
//! A report file is a comment block of `# key = value` metadata followed by
//! one CSV table:
//!
//! ```text
//! # config_digest = 3f1c...
//! case,eval_point,checkpoint_version,auc_roc,auc_pr,eer
//! no_train,target_test,0,0.83,0.41,0.24
//! online,subset_00,1,0.85,0.44,0.22
//! offline,target_test,1,0.99,0.97,0.03
//! retention,online_mean/offline,,96.1,80.2,410.5
//! ```
//!
//! The `retention` row is written exactly when both online and offline rows
//! are present, and always equals [`metrics::retention`] of the online mean
//! over the offline value. A cell is left empty where the offline value is
//! zero (a perfect offline EER), since the ratio is then undefined.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{self, Metrics};

pub const REPORT_HEADER: &str = "case,eval_point,checkpoint_version,auc_roc,auc_pr,eer";
pub const TARGET_EVAL: &str = "target_test";
pub const SOURCE_EVAL: &str = "source_test";
const RETENTION_CASE: &str = "retention";
const RETENTION_POINT: &str = "online_mean/offline";
/// Allowed drift between a stored retention value and its recomputation.
pub const RETENTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Case {
    NoTrain,
    Online,
    Offline,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::NoTrain, Case::Online, Case::Offline];

    pub fn as_str(self) -> &'static str {
        match self {
            Case::NoTrain => "no_train",
            Case::Online => "online",
            Case::Offline => "offline",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Case::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown case `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub case: Case,
    /// `target_test`, `source_test`, or `subset_NN` for online trainings.
    pub eval_point: String,
    pub checkpoint_version: u64,
    pub metrics: Metrics,
}

/// Eval-point name of the online row for the training on subset `k`.
pub fn subset_point(k: usize) -> String {
    format!("subset_{k:02}")
}

/// Online as a percentage of offline, per metric; `None` where the offline
/// value is zero. For EER lower is better, so values above 100 mean the
/// online detector is worse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retention {
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
    pub eer: Option<f64>,
}

fn retention_of(online: f64, offline: f64) -> Result<Option<f64>> {
    if offline == 0.0 {
        return Ok(None);
    }
    metrics::retention(online, offline).map(Some)
}

impl Retention {
    pub fn compute(online_mean: &Metrics, offline: &Metrics) -> Result<Self> {
        Ok(Retention {
            auc_roc: retention_of(online_mean.auc_roc, offline.auc_roc)?,
            auc_pr: retention_of(online_mean.auc_pr, offline.auc_pr)?,
            eer: retention_of(online_mean.eer, offline.eer)?,
        })
    }

    fn cells(&self) -> [(&'static str, Option<f64>); 3] {
        [("auc_roc", self.auc_roc), ("auc_pr", self.auc_pr), ("eer", self.eer)]
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn mean_metrics<'a>(ms: impl IntoIterator<Item = &'a Metrics>) -> Option<Metrics> {
    let mut n = 0usize;
    let mut sum = [0.0; 3];
    for m in ms {
        n += 1;
        sum[0] += m.auc_roc;
        sum[1] += m.auc_pr;
        sum[2] += m.eer;
    }
    (n > 0).then(|| Metrics {
        auc_roc: sum[0] / n as f64,
        auc_pr: sum[1] / n as f64,
        eer: sum[2] / n as f64,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// First row of `case` evaluated on the target test split.
    pub fn target_row(&self, case: Case) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.case == case && r.eval_point == TARGET_EVAL)
    }

    pub fn online_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.case == Case::Online)
    }

    /// Mean over every online training.
    pub fn online_mean(&self) -> Option<Metrics> {
        mean_metrics(self.online_rows().map(|r| &r.metrics))
    }

    /// `None` unless both online and offline rows exist.
    pub fn retention(&self) -> Result<Option<Retention>> {
        match (self.online_mean(), self.target_row(Case::Offline)) {
            (Some(online), Some(offline)) => Retention::compute(&online, &offline.metrics).map(Some),
            _ => Ok(None),
        }
    }

    /// Cases the comparison still lacks.
    pub fn missing_cases(&self) -> Vec<Case> {
        let mut missing = Vec::new();
        if self.target_row(Case::NoTrain).is_none() {
            missing.push(Case::NoTrain);
        }
        if self.online_rows().next().is_none() {
            missing.push(Case::Online);
        }
        if self.target_row(Case::Offline).is_none() {
            missing.push(Case::Offline);
        }
        missing
    }

    /// Hex SHA-256 of the rows and retention, metadata excluded, so reruns
    /// with identical results agree regardless of wall time.
    pub fn digest(&self) -> Result<String> {
        let body = render_body(self)?;
        Ok(hex::encode(Sha256::digest(body.as_bytes())))
    }
}

fn render_body(report: &ExperimentReport) -> Result<String> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.case, r.eval_point, r.checkpoint_version, m.auc_roc, m.auc_pr, m.eer
        )
        .unwrap();
    }
    if let Some(ret) = report.retention()? {
        writeln!(
            out,
            "{RETENTION_CASE},{RETENTION_POINT},,{},{},{}",
            opt_cell(ret.auc_roc),
            opt_cell(ret.auc_pr),
            opt_cell(ret.eer)
        )
        .unwrap();
    }
    Ok(out)
}

pub fn render_report_csv(report: &ExperimentReport) -> Result<String> {
    let mut out = String::new();
    for (k, v) in &report.metadata {
        if k.contains('\n') || v.contains('\n') || k.contains(" = ") {
            return Err(Error::invalid(format!("metadata entry `{k}` cannot be written on one line")));
        }
        writeln!(out, "# {k} = {v}").unwrap();
    }
    out.push_str(&render_body(report)?);
    Ok(out)
}

pub fn parse_report_csv(text: &str, origin: &str) -> Result<ExperimentReport> {
    let err = |line: usize, field: &str, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        field: field.to_string(),
        message,
    };
    let names: Vec<&str> = REPORT_HEADER.split(',').collect();
    let mut report = ExperimentReport::default();
    let mut stored_retention: Option<(usize, Retention)> = None;
    let mut header_seen = false;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(meta) = line.strip_prefix('#') {
            if header_seen {
                return Err(err(lineno, "metadata", "metadata after the table header".into()));
            }
            let Some((k, v)) = meta.trim_start().split_once(" = ") else {
                return Err(err(lineno, "metadata", "expected `# key = value`".into()));
            };
            report.metadata.insert(k.to_string(), v.to_string());
            continue;
        }
        if !header_seen {
            if line != REPORT_HEADER {
                return Err(err(lineno, "header", format!("expected `{REPORT_HEADER}`")));
            }
            header_seen = true;
            continue;
        }
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
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(lineno, names[j], format!("`{}` is not a finite number", cells[j])))
        };
        if cells[0] == RETENTION_CASE {
            if stored_retention.is_some() {
                return Err(err(lineno, "case", "duplicate retention row".into()));
            }
            let opt = |j: usize| -> Result<Option<f64>> {
                if cells[j].is_empty() {
                    Ok(None)
                } else {
                    real(j).map(Some)
                }
            };
            let ret = Retention {
                auc_roc: opt(3)?,
                auc_pr: opt(4)?,
                eer: opt(5)?,
            };
            stored_retention = Some((lineno, ret));
            continue;
        }
        let case: Case = cells[0]
            .parse()
            .map_err(|_| err(lineno, "case", format!("unknown case `{}`", cells[0])))?;
        if cells[1].is_empty() {
            return Err(err(lineno, "eval_point", "empty eval point".into()));
        }
        let version = cells[2]
            .parse()
            .map_err(|_| err(lineno, "checkpoint_version", format!("`{}` is not an integer", cells[2])))?;
        report.rows.push(ReportRow {
            case,
            eval_point: cells[1].to_string(),
            checkpoint_version: version,
            metrics: Metrics {
                auc_roc: real(3)?,
                auc_pr: real(4)?,
                eer: real(5)?,
            },
        });
    }
    if !header_seen {
        return Err(err(text.lines().count().max(1), "header", format!("expected `{REPORT_HEADER}`")));
    }

    let expected = report.retention().map_err(|e| err(1, "retention", e.to_string()))?;
    match (stored_retention, expected) {
        (None, None) => {}
        (Some((line, _)), None) => {
            return Err(err(line, "case", "retention row without both online and offline rows".into()));
        }
        (None, Some(_)) => {
            return Err(err(
                text.lines().count(),
                "case",
                "online and offline rows present but retention row missing".into(),
            ));
        }
        (Some((line, got)), Some(want)) => {
            for ((name, g), (_, w)) in got.cells().into_iter().zip(want.cells()) {
                let agree = match (g, w) {
                    (Some(g), Some(w)) => (g - w).abs() <= RETENTION_TOLERANCE,
                    (None, None) => true,
                    _ => false,
                };
                if !agree {
                    return Err(err(
                        line,
                        name,
                        format!("retention {} disagrees with rows ({})", opt_cell(g), opt_cell(w)),
                    ));
                }
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Human-readable outputs
// ---------------------------------------------------------------------------

fn fmt_metrics(m: &Metrics) -> String {
    format!("{:>9.4} {:>9.4} {:>9.4}", m.auc_roc, m.auc_pr, m.eer)
}

/// Summary table: one line per case, the online trend, then retention.
pub fn render_table(report: &ExperimentReport) -> Result<String> {
    let mut out = String::new();
    for (k, v) in &report.metadata {
        writeln!(out, "{k}: {v}").unwrap();
    }
    if !report.metadata.is_empty() {
        out.push('\n');
    }
    writeln!(out, "{:<10} {:<22} {:>9} {:>9} {:>9}", "case", "evaluated on", "AUC-ROC", "AUC-PR", "EER").unwrap();
    fn line(out: &mut String, case: &str, point: &str, m: &Metrics) {
        writeln!(out, "{case:<10} {point:<22} {}", fmt_metrics(m)).unwrap();
    }
    if let Some(r) = report.target_row(Case::NoTrain) {
        line(&mut out, "no_train", TARGET_EVAL, &r.metrics);
    }
    let n_online = report.online_rows().count();
    if let Some(m) = report.online_mean() {
        line(&mut out, "online", &format!("mean of {n_online} trainings"), &m);
    }
    if let Some(r) = report.target_row(Case::Offline) {
        line(&mut out, "offline", TARGET_EVAL, &r.metrics);
    }
    if let Some(ret) = report.retention()? {
        let pct = |v: Option<f64>| v.map_or(format!("{:>9}", "n/a"), |v| format!("{v:>8.2}%"));
        writeln!(
            out,
            "{:<10} {:<22} {} {} {}",
            "retention",
            "online / offline",
            pct(ret.auc_roc),
            pct(ret.auc_pr),
            pct(ret.eer)
        )
        .unwrap();
    }
    let extras: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| r.case != Case::Online && r.eval_point != TARGET_EVAL)
        .collect();
    if !extras.is_empty() {
        out.push('\n');
        for r in extras {
            line(&mut out, r.case.as_str(), &r.eval_point, &r.metrics);
        }
    }
    if n_online > 0 {
        writeln!(out, "\nonline trend").unwrap();
        writeln!(out, "{:<10} {:<22} {:>9} {:>9} {:>9}", "version", "after", "AUC-ROC", "AUC-PR", "EER").unwrap();
        for r in report.online_rows() {
            writeln!(out, "{:<10} {:<22} {}", r.checkpoint_version, r.eval_point, fmt_metrics(&r.metrics)).unwrap();
        }
    }
    Ok(out)
}

pub const TREND_METRICS: [&str; 3] = ["auc_roc", "auc_pr", "eer"];

fn pick(m: &Metrics, name: &str) -> f64 {
    match name {
        "auc_roc" => m.auc_roc,
        "auc_pr" => m.auc_pr,
        _ => m.eer,
    }
}

/// Whitespace-separated trend data per metric, `(file name, contents)`:
/// training number, online value, and the no-train and offline references.
pub fn render_trends(report: &ExperimentReport) -> Vec<(String, String)> {
    let no_train = report.target_row(Case::NoTrain).map(|r| r.metrics);
    let offline = report.target_row(Case::Offline).map(|r| r.metrics);
    let reference = |m: Option<Metrics>, name: &str| m.map_or("NaN".to_string(), |m| pick(&m, name).to_string());
    TREND_METRICS
        .iter()
        .map(|&name| {
            let mut out = format!("# {name} after each online training\n# training online no_train offline\n");
            for (i, r) in report.online_rows().enumerate() {
                writeln!(
                    out,
                    "{} {} {} {}",
                    i + 1,
                    pick(&r.metrics, name),
                    reference(no_train, name),
                    reference(offline, name)
                )
                .unwrap();
            }
            (format!("trend_{name}.dat"), out)
        })
        .collect()
}

pub const GNUPLOT_FILE: &str = "trends.gp";

/// Gnuplot script drawing the three trend files side by side.
pub fn render_gnuplot() -> String {
    let mut out = String::from(
        "set terminal pngcairo size 1500,420\nset output 'trends.png'\nset multiplot layout 1,3\nset xlabel 'training'\nset key bottom right\n",
    );
    for name in TREND_METRICS {
        writeln!(
            out,
            "set title '{name}'\nplot 'trend_{name}.dat' using 1:2 with linespoints title 'online', \
             '' using 1:3 with lines dashtype 2 title 'no train', \
             '' using 1:4 with lines dashtype 3 title 'offline'"
        )
        .unwrap();
    }
    out.push_str("unset multiplot\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(a: f64, p: f64, e: f64) -> Metrics {
        Metrics {
            auc_roc: a,
            auc_pr: p,
            eer: e,
        }
    }

    fn full() -> ExperimentReport {
        let mut rows = vec![ReportRow {
            case: Case::NoTrain,
            eval_point: TARGET_EVAL.into(),
            checkpoint_version: 0,
            metrics: m(0.7, 0.3, 0.35),
        }];
        for k in 0..12 {
            rows.push(ReportRow {
                case: Case::Online,
                eval_point: subset_point(k),
                checkpoint_version: k as u64 + 1,
                metrics: m(0.75 + 0.01 * k as f64, 1.0 / 3.0, 0.2),
            });
        }
        rows.push(ReportRow {
            case: Case::Offline,
            eval_point: TARGET_EVAL.into(),
            checkpoint_version: 1,
            metrics: m(0.9, 0.6, 0.1),
        });
        let mut metadata = BTreeMap::new();
        metadata.insert("config_digest".into(), "abc".into());
        ExperimentReport { metadata, rows }
    }

    #[test]
    fn retention_is_online_mean_over_offline() {
        let r = full();
        let ret = r.retention().unwrap().unwrap();
        // online AUC-ROC mean = 0.75 + 0.055 = 0.805
        assert!((ret.auc_roc.unwrap() - 89.44).abs() < 1e-9);
        assert!((ret.auc_pr.unwrap() - 55.56).abs() < 1e-9);
        assert!((ret.eer.unwrap() - 200.0).abs() < 1e-9);
        assert!(r.missing_cases().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let r = full();
        let text = render_report_csv(&r).unwrap();
        assert!(text.lines().any(|l| l.starts_with("retention,")));
        let back = parse_report_csv(&text, "r").unwrap();
        assert_eq!(back, r);
        assert_eq!(render_report_csv(&back).unwrap(), text);
        assert_eq!(back.digest().unwrap(), r.digest().unwrap());
    }

    #[test]
    fn perfect_offline_eer_leaves_the_cell_empty() {
        let mut r = full();
        let last = r.rows.len() - 1;
        r.rows[last].metrics.eer = 0.0;
        let ret = r.retention().unwrap().unwrap();
        assert_eq!(ret.eer, None);
        assert!(ret.auc_roc.is_some());
        let text = render_report_csv(&r).unwrap();
        assert!(text.lines().last().unwrap().ends_with(','));
        assert_eq!(parse_report_csv(&text, "r").unwrap(), r);
        assert!(render_table(&r).unwrap().contains("n/a"));
        let forged = text.trim_end().to_string() + "100\n";
        assert!(parse_report_csv(&forged, "r").is_err());
    }

    #[test]
    fn partial_reports_have_no_retention() {
        let mut r = full();
        r.rows.retain(|row| row.case != Case::Online);
        assert_eq!(r.retention().unwrap(), None);
        assert_eq!(r.missing_cases(), vec![Case::Online]);
        let text = render_report_csv(&r).unwrap();
        assert!(!text.contains("retention"));
        assert_eq!(parse_report_csv(&text, "r").unwrap(), r);
    }

    #[test]
    fn tampered_retention_is_rejected() {
        let text = render_report_csv(&full()).unwrap();
        let tampered = text.replace("89.44", "91");
        match parse_report_csv(&tampered, "r").unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, text.lines().count());
                assert_eq!(field, "auc_roc");
            }
            other => panic!("{other}"),
        }
        let dropped: String = text.lines().filter(|l| !l.starts_with("retention")).map(|l| format!("{l}\n")).collect();
        assert!(parse_report_csv(&dropped, "r").is_err());
    }

    #[test]
    fn malformed_rows_name_line_and_field() {
        let text = "# a = b\ncase,eval_point,checkpoint_version,auc_roc,auc_pr,eer\nonline,subset_00,x,0.5,0.5,0.5\n";
        match parse_report_csv(text, "r").unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "checkpoint_version");
            }
            other => panic!("{other}"),
        }
        let bad_case = "case,eval_point,checkpoint_version,auc_roc,auc_pr,eer\nfoo,p,0,0.5,0.5,0.5\n";
        assert!(matches!(parse_report_csv(bad_case, "r"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_report_csv("", "r"), Err(Error::Parse { .. })));
    }

    #[test]
    fn digest_ignores_metadata() {
        let a = full();
        let mut b = a.clone();
        b.metadata.insert("wall_time_s.online".into(), "12.5".into());
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.rows[1].metrics.auc_roc += 1e-12;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn table_and_trends() {
        let r = full();
        let table = render_table(&r).unwrap();
        assert!(table.contains("mean of 12 trainings"));
        assert!(table.contains("89.44%"));
        let trends = render_trends(&r);
        assert_eq!(trends.len(), 3);
        let (name, body) = &trends[0];
        assert_eq!(name, "trend_auc_roc.dat");
        assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 12);
        assert!(body.contains("\n1 0.75 0.7 0.9\n"));
        assert!(render_gnuplot().contains("trend_eer.dat"));
    }
}
