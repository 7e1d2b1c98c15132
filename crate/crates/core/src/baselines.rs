//! CSP+LDA: one-vs-rest common spatial patterns, normalised log-variance
//! features and a multiclass linear discriminant.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Direction, Epoch, EpochSet};
use crate::linalg::{self, cholesky, cholesky_solve, generalized_sym_eigen, LinalgError, Matrix};

/// Ridge added to the composite covariance when it is not positive definite.
pub const CSP_RIDGE: f64 = 1e-8;
/// Pooled-covariance ridge, relative to `trace / dim`.
pub const LDA_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("class {class} has {count} epochs, CSP needs at least 2 per class")]
    TooFewEpochs { class: Direction, count: usize },
    #[error("CSP needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("each epoch needs more samples ({samples}) than channels ({channels})")]
    TooFewSamples { samples: usize, channels: usize },
    #[error("{pairs} filter pairs requested but only {channels} channels")]
    TooManyPairs { pairs: usize, channels: usize },
    #[error("composite covariance for class {class} is singular even after ridge")]
    SingularComposite { class: Direction },
    #[error("epoch projects to zero variance on a retained filter")]
    DegenerateEpoch,
    #[error("expected {expected} values, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("class label {label} has {count} samples, LDA needs at least 2")]
    TooFewSamplesForClass { label: usize, count: usize },
    #[error("pooled covariance is degenerate after regularisation")]
    DegenerateCovariance,
    #[error("no samples")]
    Empty,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = core::result::Result<T, BaselineError>;

/// Filters for one class-vs-rest split. Columns of `filters` are ordered by
/// descending generalised eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspSplit {
    pub class: Direction,
    pub eigenvalues: Vec<f64>,
    pub filters: Matrix,
}

impl CspSplit {
    /// The `m` largest- then `m` smallest-eigenvalue filters.
    pub fn retained(&self, m: usize) -> Vec<Vec<f64>> {
        let n = self.filters.cols;
        (0..m)
            .chain(n - m..n)
            .map(|k| self.filters.column(k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspFilters {
    pub splits: Vec<CspSplit>,
    pub m: usize,
    pub n_channels: usize,
}

impl CspFilters {
    pub fn feature_dim(&self) -> usize {
        self.splits.len() * 2 * self.m
    }
}

/// Zero-mean channel covariance divided by its trace.
pub fn normalized_covariance(data: &[Vec<f64>]) -> Result<Matrix> {
    let c = data.len();
    let t = data.first().map_or(0, Vec::len);
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / t as f64;
            row.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mut cov = Matrix::zeros(c, c);
    for i in 0..c {
        for j in i..c {
            let v = linalg::dot(&centered[i], &centered[j]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let tr = cov.trace();
    if tr <= 0.0 || tr.is_nan() {
        return Err(BaselineError::DegenerateEpoch);
    }
    cov.scale(1.0 / tr);
    Ok(cov)
}

fn mean_covariance(epochs: &[&Epoch], c: usize) -> Result<Matrix> {
    let mut acc = Matrix::zeros(c, c);
    for e in epochs {
        acc.add_assign(&normalized_covariance(&e.data)?);
    }
    acc.scale(1.0 / epochs.len() as f64);
    Ok(acc)
}

/// Solves `Σ₁w = λ(Σ₁+Σ₂)w`; a ridge of [`CSP_RIDGE`] is applied to the
/// composite only if it fails to factorise.
pub fn csp_pair(
    sigma1: &Matrix,
    sigma2: &Matrix,
) -> core::result::Result<linalg::SymEigen, LinalgError> {
    let mut composite = sigma1.clone();
    composite.add_assign(sigma2);
    composite.symmetrize();
    match generalized_sym_eigen(sigma1, &composite) {
        Err(LinalgError::NotPositiveDefinite { .. }) => {
            composite.add_diagonal(CSP_RIDGE);
            generalized_sym_eigen(sigma1, &composite)
        }
        other => other,
    }
}

/// One-vs-rest CSP over the set's class order, keeping `m` pairs per split.
pub fn csp_fit(epochs: &EpochSet, m: usize) -> Result<CspFilters> {
    let classes = epochs.class_order();
    if classes.len() < 2 {
        return Err(BaselineError::TooFewClasses(classes.len()));
    }
    let (c, t) = epochs.epoch_shape().ok_or(BaselineError::Empty)?;
    if t <= c {
        return Err(BaselineError::TooFewSamples {
            samples: t,
            channels: c,
        });
    }
    if m == 0 || 2 * m > c {
        return Err(BaselineError::TooManyPairs {
            pairs: m,
            channels: c,
        });
    }
    for &class in &classes {
        let count = epochs.count(class);
        if count < 2 {
            return Err(BaselineError::TooFewEpochs { class, count });
        }
    }
    let mut splits = Vec::with_capacity(classes.len());
    for &class in &classes {
        let (inside, outside): (Vec<&Epoch>, Vec<&Epoch>) = epochs
            .epochs
            .iter()
            .filter(|e| classes.contains(&e.direction))
            .partition(|e| e.direction == class);
        let s1 = mean_covariance(&inside, c)?;
        let s2 = mean_covariance(&outside, c)?;
        let eig = csp_pair(&s1, &s2).map_err(|e| match e {
            LinalgError::NotPositiveDefinite { .. } => BaselineError::SingularComposite { class },
            other => other.into(),
        })?;
        splits.push(CspSplit {
            class,
            eigenvalues: eig.values,
            filters: eig.vectors,
        });
    }
    Ok(CspFilters {
        splits,
        m,
        n_channels: c,
    })
}

fn projected_variance(data: &[Vec<f64>], w: &[f64]) -> f64 {
    let t = data[0].len();
    let mut proj = vec![0.0; t];
    for (wi, row) in w.iter().zip(data) {
        proj.iter_mut().zip(row).for_each(|(p, x)| *p += wi * x);
    }
    let mean = proj.iter().sum::<f64>() / t as f64;
    proj.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / t as f64
}

/// Per split: `log(var_k / Σ var)` over the split's `2m` retained filters.
pub fn csp_features(epoch: &[Vec<f64>], filters: &CspFilters) -> Result<Vec<f64>> {
    if epoch.len() != filters.n_channels {
        return Err(BaselineError::Dimension {
            expected: filters.n_channels,
            actual: epoch.len(),
        });
    }
    if epoch.first().map_or(0, Vec::len) == 0 {
        return Err(BaselineError::DegenerateEpoch);
    }
    let mut out = Vec::with_capacity(filters.feature_dim());
    for split in &filters.splits {
        let vars: Vec<f64> = split
            .retained(filters.m)
            .iter()
            .map(|w| projected_variance(epoch, w))
            .collect();
        if vars.iter().any(|&v| v <= 0.0 || v.is_nan()) {
            return Err(BaselineError::DegenerateEpoch);
        }
        let total: f64 = vars.iter().sum();
        out.extend(vars.iter().map(|v| libm::log(v / total)));
    }
    Ok(out)
}

/// Linear discriminant with shared covariance and uniform priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    /// Sorted distinct training labels.
    pub labels: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    /// Regularised pooled within-class covariance.
    pub covariance: Matrix,
    pub priors: Vec<f64>,
    /// `Σ⁻¹μ_k` per class.
    pub coefficients: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

pub fn lda_fit(features: &[Vec<f64>], labels: &[usize]) -> Result<LdaModel> {
    if features.is_empty() {
        return Err(BaselineError::Empty);
    }
    if features.len() != labels.len() {
        return Err(BaselineError::Dimension {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(BaselineError::Dimension {
            expected: dim,
            actual: bad.len(),
        });
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut means = Vec::with_capacity(classes.len());
    for &label in &classes {
        let members: Vec<&Vec<f64>> = features
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == label)
            .map(|(f, _)| f)
            .collect();
        if members.len() < 2 {
            return Err(BaselineError::TooFewSamplesForClass {
                label,
                count: members.len(),
            });
        }
        let mut mu = vec![0.0; dim];
        for f in &members {
            mu.iter_mut().zip(f.iter()).for_each(|(m, v)| *m += v);
        }
        mu.iter_mut().for_each(|m| *m /= members.len() as f64);
        means.push(mu);
    }
    let mut cov = Matrix::zeros(dim, dim);
    for (f, &l) in features.iter().zip(labels) {
        let mu = &means[classes.binary_search(&l).unwrap_or(0)];
        let d: Vec<f64> = f.iter().zip(mu).map(|(a, b)| a - b).collect();
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    cov.scale(1.0 / features.len() as f64);
    let ridge = LDA_RIDGE * cov.trace() / dim as f64;
    cov.add_diagonal(if ridge > 0.0 { ridge } else { LDA_RIDGE });
    let chol = cholesky(&cov).map_err(|_| BaselineError::DegenerateCovariance)?;
    let priors = vec![1.0 / classes.len() as f64; classes.len()];
    let coefficients: Vec<Vec<f64>> = means.iter().map(|mu| cholesky_solve(&chol, mu)).collect();
    let intercepts = coefficients
        .iter()
        .zip(&means)
        .zip(&priors)
        .map(|((w, mu), p)| -0.5 * linalg::dot(w, mu) + libm::log(*p))
        .collect();
    Ok(LdaModel {
        labels: classes,
        means,
        covariance: cov,
        priors,
        coefficients,
        intercepts,
    })
}

impl LdaModel {
    pub fn scores(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let dim = self.covariance.rows;
        if feature.len() != dim {
            return Err(BaselineError::Dimension {
                expected: dim,
                actual: feature.len(),
            });
        }
        Ok(self
            .coefficients
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| linalg::dot(w, feature) + b)
            .collect())
    }
}

/// Label with the highest discriminant score; ties go to the lowest label.
pub fn lda_predict(model: &LdaModel, feature: &[f64]) -> Result<usize> {
    let scores = model.scores(feature)?;
    Ok(model.labels[argmax(&scores)])
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fitted CSP filters and discriminant, classifying into the training set's
/// class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspLda {
    pub classes: Vec<Direction>,
    pub csp: CspFilters,
    pub lda: LdaModel,
}

impl CspLda {
    pub fn fit(train: &EpochSet, m: usize) -> Result<Self> {
        let csp = csp_fit(train, m)?;
        let classes = train.class_order();
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for e in &train.epochs {
            if let Some(k) = classes.iter().position(|&c| c == e.direction) {
                feats.push(csp_features(&e.data, &csp)?);
                labels.push(k);
            }
        }
        let lda = lda_fit(&feats, &labels)?;
        Ok(Self { classes, csp, lda })
    }

    pub fn predict(&self, epoch: &Epoch) -> Result<Direction> {
        let f = csp_features(&epoch.data, &self.csp)?;
        Ok(self.classes[lda_predict(&self.lda, &f)?])
    }
}
