//! Report files: per-subject CSV, per-method tables, confusion-matrix CSVs
//! and a JSON summary.
//!
//! Layout under the output directory:
//!
//! - `subjects.csv`: `subject_id,method,plane,condition,accuracy`, one row per
//!   entry, accuracy at full precision.
//! - `table_<method>.csv`: subjects as rows and plane × condition columns at
//!   2 decimals, followed by `Average` and `Std.` rows.
//! - `confusion/<method>_<subject>_<plane>_<condition>.csv`: row-normalised
//!   rates at 4 decimals, true classes as rows.
//! - `summary.json`: see [`Summary`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use btrn_core::dataset::{Condition, Plane};
use btrn_core::eval::{round_half_up, AggregateRow, EvalReport, Method, SubjectEntry};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// Aggregate row with its table-rounded values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(flatten)]
    pub row: AggregateRow,
    pub mean_2dp: f64,
    pub std_2dp: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aggregates: Vec<SummaryRow>,
    pub entries: Vec<SubjectEntry>,
}

impl Summary {
    pub fn new(report: &EvalReport) -> Self {
        Self {
            aggregates: report
                .aggregates()
                .into_iter()
                .map(|row| SummaryRow {
                    mean_2dp: round_half_up(row.mean, 2),
                    std_2dp: round_half_up(row.std, 2),
                    row,
                })
                .collect(),
            entries: report.entries.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }
}

fn condition_slug(c: Condition) -> &'static str {
    match c {
        Condition::Combined => "me_mi",
        Condition::MiOnly => "mi",
    }
}

pub fn matrix_file_name(e: &SubjectEntry) -> String {
    format!(
        "{}_{}_{}_{}.csv",
        e.method.slug(),
        e.subject_id,
        e.plane.as_str(),
        condition_slug(e.condition)
    )
}

pub fn subjects_csv(report: &EvalReport) -> String {
    let mut s = String::from("subject_id,method,plane,condition,accuracy\n");
    for e in &report.entries {
        writeln!(
            s,
            "{},{},{},{},{}",
            e.subject_id, e.method, e.plane, e.condition, e.accuracy
        )
        .expect("string write");
    }
    s
}

/// Table-style layout for one method: one column per plane × condition cell
/// present in the report.
pub fn method_table_csv(report: &EvalReport, method: Method) -> String {
    let mut cells = Vec::new();
    for plane in Plane::ALL {
        for condition in Condition::ALL {
            if !report.accuracies(method, condition, plane).is_empty() {
                cells.push((plane, condition));
            }
        }
    }
    let mut subjects: Vec<&str> = Vec::new();
    for e in report.entries.iter().filter(|e| e.method == method) {
        if !subjects.contains(&e.subject_id.as_str()) {
            subjects.push(&e.subject_id);
        }
    }
    let mut s = String::from("subject");
    for (p, c) in &cells {
        write!(s, ",{p} {c}").expect("string write");
    }
    s.push('\n');
    let fmt2 = |v: f64| format!("{:.2}", round_half_up(v, 2));
    for id in &subjects {
        s.push_str(id);
        for &(p, c) in &cells {
            let v = report
                .entries
                .iter()
                .find(|e| {
                    e.method == method && e.plane == p && e.condition == c && e.subject_id == *id
                })
                .map_or(String::new(), |e| fmt2(e.accuracy));
            write!(s, ",{v}").expect("string write");
        }
        s.push('\n');
    }
    let rows = report.aggregates();
    for (label, pick) in [
        (
            "Average",
            (|r: &AggregateRow| r.mean) as fn(&AggregateRow) -> f64,
        ),
        ("Std.", |r: &AggregateRow| r.std),
    ] {
        s.push_str(label);
        for &(p, c) in &cells {
            let r = rows
                .iter()
                .find(|r| r.method == method && r.plane == p && r.condition == c)
                .expect("aggregate for a present cell");
            write!(s, ",{}", fmt2(pick(r))).expect("string write");
        }
        s.push('\n');
    }
    s
}

pub fn confusion_csv(e: &SubjectEntry) -> String {
    let m = &e.confusion;
    let mut s = String::from("true\\predicted");
    for l in &m.labels {
        write!(s, ",{l}").expect("string write");
    }
    s.push('\n');
    for (l, row) in m.labels.iter().zip(m.rates()) {
        s.push_str(l.as_str());
        for v in row {
            write!(s, ",{v:.4}").expect("string write");
        }
        s.push('\n');
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes every report file under `dir` and returns their paths.
pub fn render_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let confusion_dir = dir.join("confusion");
    std::fs::create_dir_all(&confusion_dir).map_err(|source| ReportError::Io {
        path: confusion_dir.clone(),
        source,
    })?;
    let mut written = Vec::new();
    let mut emit = |path: PathBuf, contents: String| -> Result<()> {
        write(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    emit(dir.join("subjects.csv"), subjects_csv(report))?;
    for method in Method::ALL {
        if report.entries.iter().any(|e| e.method == method) {
            emit(
                dir.join(format!("table_{}.csv", method.slug())),
                method_table_csv(report, method),
            )?;
        }
    }
    for e in &report.entries {
        emit(confusion_dir.join(matrix_file_name(e)), confusion_csv(e))?;
    }
    emit(dir.join("summary.json"), Summary::new(report).to_json())?;
    Ok(written)
}

pub fn load_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// `(subject_id, method, plane, condition, accuracy)` rows of `subjects.csv`.
pub type SubjectRow = (String, Method, Plane, Condition, f64);

pub fn parse_subjects_csv(text: &str) -> std::result::Result<Vec<SubjectRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("subject_id,method,plane,condition,accuracy") {
        return Err("unexpected header".into());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let [id, method, plane, condition, acc] = f[..] else {
                return Err(format!("row {}: expected 5 fields", i + 1));
            };
            let method = Method::ALL
                .into_iter()
                .find(|m| m.as_str() == method)
                .ok_or_else(|| format!("row {}: unknown method `{method}`", i + 1))?;
            let err = |e: String| format!("row {}: {e}", i + 1);
            Ok((
                id.to_string(),
                method,
                plane
                    .parse()
                    .map_err(|e: btrn_core::dataset::DatasetError| err(e.to_string()))?,
                condition
                    .parse()
                    .map_err(|e: btrn_core::dataset::DatasetError| err(e.to_string()))?,
                acc.parse()
                    .map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
            ))
        })
        .collect()
}
