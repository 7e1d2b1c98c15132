//! Recordings, epochs, experiment labels and the synthetic EEG generator.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod synth;

pub use synth::{
    background_component, class_amplitude, class_component, class_patterns, synth_generate,
    synth_schedule, SynthConfig, TrialSpec, INSTRUCTION_S, MONTAGE_60, REST_S, TASK_S, TRIAL_S,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("{labels} channel labels for {rows} sample rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("channel {channel} has {actual} samples, expected {expected}")]
    RaggedSamples {
        channel: usize,
        expected: usize,
        actual: usize,
    },
    #[error("event {index} at {onset_s} s is outside [0, {duration_s}) or out of order")]
    BadEvent {
        index: usize,
        onset_s: f64,
        duration_s: f64,
    },
    #[error("sample rate must be positive and finite, got {0}")]
    BadSampleRate(f64),
    #[error("epoch {index} has shape {actual:?}, expected {expected:?}")]
    EpochShape {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("class {0} is missing from the epoch set")]
    MissingClass(Direction),
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T> = core::result::Result<T, DatasetError>;

/// Recording session: real movement or imagined movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Session {
    #[serde(rename = "ME")]
    Execution,
    #[serde(rename = "MI")]
    Imagination,
}

impl Session {
    pub const ALL: [Session; 2] = [Session::Execution, Session::Imagination];

    pub fn as_str(self) -> &'static str {
        match self {
            Session::Execution => "ME",
            Session::Imagination => "MI",
        }
    }
}

impl fmt::Display for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Session {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ME" => Ok(Session::Execution),
            "MI" => Ok(Session::Imagination),
            _ => Err(DatasetError::UnknownName {
                kind: "session",
                value: s.into(),
            }),
        }
    }
}

/// Arm-reaching direction cued on a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Forward,
    Backward,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Left,
        Direction::Right,
        Direction::Forward,
        Direction::Backward,
        Direction::Up,
        Direction::Down,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| DatasetError::UnknownName {
                kind: "direction",
                value: s.into(),
            })
    }
}

/// Four-class decoding problem: reaching within one plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Horizontal,
    Vertical,
}

impl Plane {
    pub const ALL: [Plane; 2] = [Plane::Horizontal, Plane::Vertical];

    /// Class order used for prototypes, scores and confusion matrices.
    pub fn classes(self) -> [Direction; 4] {
        match self {
            Plane::Horizontal => [
                Direction::Left,
                Direction::Right,
                Direction::Forward,
                Direction::Backward,
            ],
            Plane::Vertical => [
                Direction::Left,
                Direction::Right,
                Direction::Up,
                Direction::Down,
            ],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Horizontal => "horizontal",
            Plane::Vertical => "vertical",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Plane {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        Plane::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| DatasetError::UnknownName {
                kind: "plane",
                value: s.into(),
            })
    }
}

/// Source of the BTRN support set. Queries are always MI epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Support from ME epochs.
    #[serde(rename = "ME+MI")]
    Combined,
    /// Support drawn from MI epochs disjoint from the queries.
    #[serde(rename = "MI")]
    MiOnly,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Combined, Condition::MiOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Combined => "ME+MI",
            Condition::MiOnly => "MI",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| DatasetError::UnknownName {
                kind: "condition",
                value: s.into(),
            })
    }
}

/// Start of a task period and its cued direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset_s: f64,
    pub direction: Direction,
}

/// Multichannel continuous EEG. `samples[c]` is channel `c` over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    pub subject_id: String,
    pub session: Session,
    pub fs_hz: f64,
    pub channel_labels: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub events: Vec<Event>,
}

impl ContinuousRecording {
    pub fn new(
        subject_id: String,
        session: Session,
        fs_hz: f64,
        channel_labels: Vec<String>,
        samples: Vec<Vec<f64>>,
        events: Vec<Event>,
    ) -> Result<Self> {
        let rec = Self {
            subject_id,
            session,
            fs_hz,
            channel_labels,
            samples,
            events,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs_hz > 0.0 && self.fs_hz.is_finite()) {
            return Err(DatasetError::BadSampleRate(self.fs_hz));
        }
        if self.channel_labels.len() != self.samples.len() {
            return Err(DatasetError::LabelCount {
                labels: self.channel_labels.len(),
                rows: self.samples.len(),
            });
        }
        let n = self.n_samples();
        if let Some((channel, row)) = self.samples.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(DatasetError::RaggedSamples {
                channel,
                expected: n,
                actual: row.len(),
            });
        }
        let duration_s = self.duration_s();
        let mut prev = 0.0;
        for (index, ev) in self.events.iter().enumerate() {
            if !(ev.onset_s >= prev && ev.onset_s < duration_s) {
                return Err(DatasetError::BadEvent {
                    index,
                    onset_s: ev.onset_s,
                    duration_s,
                });
            }
            prev = ev.onset_s;
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs_hz
    }
}

/// One labelled trial window, `data[c]` is channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub direction: Direction,
    pub session: Session,
    pub data: Vec<Vec<f64>>,
}

impl Epoch {
    pub fn shape(&self) -> (usize, usize) {
        (self.data.len(), self.data.first().map_or(0, Vec::len))
    }
}

/// Epochs sharing sample rate, channel order and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub epochs: Vec<Epoch>,
    pub fs_hz: f64,
    pub channel_labels: Vec<String>,
    pub plane: Option<Plane>,
}

impl EpochSet {
    pub fn new(epochs: Vec<Epoch>, fs_hz: f64, channel_labels: Vec<String>) -> Result<Self> {
        let set = Self {
            epochs,
            fs_hz,
            channel_labels,
            plane: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.epochs.first() else {
            return Ok(());
        };
        let expected = first.shape();
        if expected.0 != self.channel_labels.len() {
            return Err(DatasetError::LabelCount {
                labels: self.channel_labels.len(),
                rows: expected.0,
            });
        }
        for (index, e) in self.epochs.iter().enumerate() {
            let actual = e.shape();
            if actual != expected || e.data.iter().any(|r| r.len() != expected.1) {
                return Err(DatasetError::EpochShape {
                    index,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// `(channels, samples)` of every epoch, if any.
    pub fn epoch_shape(&self) -> Option<(usize, usize)> {
        self.epochs.first().map(Epoch::shape)
    }

    pub fn count(&self, direction: Direction) -> usize {
        self.epochs
            .iter()
            .filter(|e| e.direction == direction)
            .count()
    }

    /// Indices of the epochs labelled `direction`, in set order.
    pub fn indices_of(&self, direction: Direction) -> Vec<usize> {
        self.epochs
            .iter()
            .enumerate()
            .filter(|(_, e)| e.direction == direction)
            .map(|(i, _)| i)
            .collect()
    }

    /// The plane's class order when tagged, otherwise the classes present.
    pub fn class_order(&self) -> Vec<Direction> {
        match self.plane {
            Some(p) => p.classes().to_vec(),
            None => self.classes(),
        }
    }

    /// Classes present, in [`Direction::ALL`] order.
    pub fn classes(&self) -> Vec<Direction> {
        Direction::ALL
            .into_iter()
            .filter(|&d| self.count(d) > 0)
            .collect()
    }
}

/// Keeps the four classes of `plane` and tags the set with it.
pub fn plane_subset(epochs: &EpochSet, plane: Plane) -> Result<EpochSet> {
    let classes = plane.classes();
    if let Some(&missing) = classes.iter().find(|&&d| epochs.count(d) == 0) {
        return Err(DatasetError::MissingClass(missing));
    }
    Ok(EpochSet {
        epochs: epochs
            .epochs
            .iter()
            .filter(|e| classes.contains(&e.direction))
            .cloned()
            .collect(),
        fs_hz: epochs.fs_hz,
        channel_labels: epochs.channel_labels.clone(),
        plane: Some(plane),
    })
}
