//! The experiment configuration file.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use btrn_core::dataset::{Condition, Plane, SynthConfig, MONTAGE_60};
use btrn_core::dsp::PreprocessConfig;
use btrn_core::model::{Architecture, BtrnModel, HyperParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The default configuration shipped with the crate.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../configs/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Per-class share of epochs used for training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub hyper: HyperParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    /// CSP filter pairs kept per one-vs-rest split.
    pub csp_pairs: usize,
    pub conditions: Vec<Condition>,
    pub planes: Vec<Plane>,
    /// Read `<subject>_<session>.btrn` files from here instead of generating.
    pub recordings_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            csp_pairs: 2,
            conditions: Condition::ALL.to_vec(),
            planes: Plane::ALL.to_vec(),
            recordings_dir: None,
            output_dir: PathBuf::from("results"),
            save_checkpoints: false,
        }
    }
}

/// One violated invariant, named by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}\n  {line} | {context}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
        context: String,
    },
    #[error("invalid config:\n{}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
            context: text
                .lines()
                .nth(e.line().saturating_sub(1))
                .unwrap_or("")
                .trim_end()
                .to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Parses and validates.
    pub fn load_valid(path: &Path) -> Result<Self, ConfigError> {
        let config = Self::load(path)?;
        config.check()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        match self.violations() {
            v if v.is_empty() => Ok(()),
            v => Err(ConfigError::Invalid(v)),
        }
    }

    /// Every violated invariant, in field order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(Violation {
                field: field.into(),
                message,
            })
        };
        if let Err(e) = self.synth.validate() {
            push("synth", e.to_string());
        }
        if let Err(e) = self.preprocess.validate() {
            push("preprocess", e.to_string());
        }
        if let Err(e) = self.preprocess.decimation_factor(self.synth.fs_hz) {
            push("preprocess.target_fs_hz", e.to_string());
        }
        let mut seen = HashSet::new();
        for label in &self.preprocess.montage {
            if self.recordings_dir.is_none() && !MONTAGE_60.contains(&label.as_str()) {
                push(
                    "preprocess.montage",
                    format!("unknown channel label `{label}`"),
                );
            }
            if !seen.insert(label) {
                push(
                    "preprocess.montage",
                    format!("channel label `{label}` is listed twice"),
                );
            }
        }
        if self.preprocess.montage.len() < 2 {
            push(
                "preprocess.montage",
                "at least 2 channels are needed".into(),
            );
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            push(
                "split.train_fraction",
                format!("must lie in (0, 1), got {f}"),
            );
        }
        let n_samples = self
            .preprocess
            .window
            .n_samples(self.preprocess.target_fs_hz);
        if let Err(e) = BtrnModel::new(
            self.model.architecture.clone(),
            self.model.hyper.clone(),
            self.preprocess.montage.len().max(1),
            n_samples,
        ) {
            push("model", e.to_string());
        }
        if f > 0.0 && f < 1.0 && self.synth.trials_per_direction >= 2 {
            let n = self.synth.trials_per_direction;
            let n_train = ((f * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
            let k = self.model.hyper.k_shot;
            if n_train < k {
                push(
                    "model.hyper.k_shot",
                    format!("{k} exceeds the {n_train} training epochs per class"),
                );
            } else if self.conditions.contains(&Condition::MiOnly) && n_train < k + 1 {
                push(
                    "model.hyper.k_shot",
                    format!("MI condition needs k_shot + 1 <= {n_train} training epochs per class"),
                );
            }
        } else if self.synth.trials_per_direction == 1 {
            push(
                "synth.trials_per_direction",
                "at least 2 trials per direction are needed to split".into(),
            );
        }
        if self.csp_pairs == 0 || 2 * self.csp_pairs > self.preprocess.montage.len() {
            push(
                "csp_pairs",
                format!(
                    "must lie in 1..={} for {} channels",
                    self.preprocess.montage.len() / 2,
                    self.preprocess.montage.len()
                ),
            );
        }
        if self.conditions.is_empty() {
            push("conditions", "at least one condition is needed".into());
        }
        if self.conditions.iter().collect::<HashSet<_>>().len() != self.conditions.len() {
            push("conditions", "duplicate entries".into());
        }
        if self.planes.is_empty() {
            push("planes", "at least one plane is needed".into());
        }
        if self.planes.iter().collect::<HashSet<_>>().len() != self.planes.len() {
            push("planes", "duplicate entries".into());
        }
        out
    }
}
