//! Accuracy, confusion matrices and per-subject aggregation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Condition, Direction, Plane};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("label {0} is not one of the matrix classes")]
    UnknownLabel(Direction),
    #[error("confusion matrix holds no trials")]
    NoTrials,
    #[error("cannot aggregate an empty list")]
    Empty,
    #[error("permutation does not match {0} classes")]
    BadPermutation(usize),
}

pub type Result<T> = core::result::Result<T, EvalError>;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<Direction>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn correct(&self) -> usize {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Row-normalised counts; an empty row stays all zero.
    pub fn rates(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }

    /// True-positive rate of each class.
    pub fn recalls(&self) -> Vec<f64> {
        let rates = self.rates();
        (0..self.k()).map(|i| rates[i][i]).collect()
    }

    /// Reorders classes so that new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        let mut seen = vec![false; k];
        if perm.len() != k
            || perm
                .iter()
                .any(|&p| p >= k || core::mem::replace(&mut seen[p], true))
        {
            return Err(EvalError::BadPermutation(k));
        }
        Ok(Self {
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            counts: perm
                .iter()
                .map(|&r| perm.iter().map(|&c| self.counts[r][c]).collect())
                .collect(),
        })
    }
}

/// Tallies `(true, predicted)` pairs over `labels`.
pub fn confusion(
    pairs: &[(Direction, Direction)],
    labels: &[Direction],
) -> Result<ConfusionMatrix> {
    let k = labels.len();
    let index = |d: Direction| {
        labels
            .iter()
            .position(|&l| l == d)
            .ok_or(EvalError::UnknownLabel(d))
    };
    let mut counts = vec![vec![0usize; k]; k];
    for &(t, p) in pairs {
        counts[index(t)?][index(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

pub fn accuracy(matrix: &ConfusionMatrix) -> Result<f64> {
    match matrix.total() {
        0 => Err(EvalError::NoTrials),
        n => Ok(matrix.correct() as f64 / n as f64),
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn rounded(&self, decimals: u32) -> (f64, f64) {
        (
            round_half_up(self.mean, decimals),
            round_half_up(self.std, decimals),
        )
    }
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Aggregate {
        mean,
        std: libm::sqrt(var),
    })
}

/// Rounds halves away from zero at the given decimal. The tiny nudge keeps
/// decimal ties such as 0.455 (stored as 0.45499..) rounding up.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    let scaled = libm::fabs(x) * scale;
    libm::copysign(libm::floor(scaled + 0.5 + 1e-9) / scale, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BTRN")]
    Btrn,
    #[serde(rename = "CSP+LDA")]
    CspLda,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Btrn, Method::CspLda];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Btrn => "BTRN",
            Method::CspLda => "CSP+LDA",
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            Method::Btrn => "btrn",
            Method::CspLda => "csp_lda",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub method: Method,
    pub condition: Condition,
    pub plane: Plane,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub condition: Condition,
    pub plane: Plane,
    pub n_subjects: usize,
    pub mean: f64,
    pub std: f64,
}

/// Orders ids like `sub2` before `sub10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let cut = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        (&s[..cut], s[cut..].parse().ok())
    }
    let (pa, na) = split(a);
    let (pb, nb) = split(b);
    pa.cmp(pb).then(na.cmp(&nb)).then(a.cmp(b))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<SubjectEntry>,
}

impl EvalReport {
    pub fn new(mut entries: Vec<SubjectEntry>) -> Self {
        entries.sort_by(|a, b| {
            natural_cmp(&a.subject_id, &b.subject_id)
                .then(a.plane.cmp(&b.plane))
                .then(a.condition.cmp(&b.condition))
                .then(a.method.cmp(&b.method))
        });
        Self { entries }
    }

    pub fn accuracies(&self, method: Method, condition: Condition, plane: Plane) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.method == method && e.condition == condition && e.plane == plane)
            .map(|e| e.accuracy)
            .collect()
    }

    /// One row per method × condition × plane that has entries.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut rows = Vec::new();
        for method in Method::ALL {
            for plane in Plane::ALL {
                for condition in Condition::ALL {
                    let accs = self.accuracies(method, condition, plane);
                    if let Ok(a) = aggregate(&accs) {
                        rows.push(AggregateRow {
                            method,
                            condition,
                            plane,
                            n_subjects: accs.len(),
                            mean: a.mean,
                            std: a.std,
                        });
                    }
                }
            }
        }
        rows
    }
}
