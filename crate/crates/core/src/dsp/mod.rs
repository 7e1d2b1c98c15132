//! Preprocessing: decimation, zero-phase bandpass, common average reference,
//! channel selection, epoching and stratified splitting, in that order.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ContinuousRecording, DatasetError, Direction, Epoch, EpochSet, TASK_S};
use crate::rng::{derive_seed, seeded};

mod filter;
mod filtfilt;

pub use filter::{
    design_butterworth_bandpass, design_butterworth_lowpass, Biquad, FilterBand, SosFilter,
};
pub use filtfilt::{
    decimate, decimate_with, decimation_filter, filtfilt, filtfilt_padlen, sosfilt_with_state,
    sosfilt_zi, DECIMATE_CUTOFF, DECIMATE_ORDER,
};

/// Analysed electrodes, in listed order. Twenty-four labels: the count
/// quoted alongside this list says 25, but only these are named.
pub const DEFAULT_MONTAGE: [&str; 24] = [
    "F3", "F1", "Fz", "F2", "F4", "FC3", "FC1", "FCz", "FC4", "C3", "C1", "Cz", "C2", "C4", "CP3",
    "CP1", "CPz", "CP2", "CP4", "P3", "P1", "Pz", "P2", "P4",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("filter order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("invalid band {low_hz}-{high_hz} Hz for sample rate {fs_hz} Hz")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        fs_hz: f64,
    },
    #[error("signal of {len} samples is too short, need at least {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("decimation factor must be at least 1, got {0}")]
    InvalidFactor(usize),
    #[error("cannot resample {from_hz} Hz to {to_hz} Hz by an integer factor")]
    NonIntegerRatio { from_hz: f64, to_hz: f64 },
    #[error("common average reference needs at least 2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("unknown channel label `{0}`")]
    UnknownChannel(String),
    #[error("invalid epoch window: {0}")]
    InvalidWindow(&'static str),
    #[error("epoch for event {event} spans samples {start}..{end} beyond the recording ({len})")]
    WindowOutOfBounds {
        event: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("recording has no events")]
    NoEvents,
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("class {class} has {count} epochs, at least 2 are needed to split")]
    ClassTooSmall { class: Direction, count: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = core::result::Result<T, DspError>;

/// Subtracts the cross-channel mean at every time index.
pub fn car(samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out = samples.to_vec();
    car_in_place(&mut out)?;
    Ok(out)
}

pub fn car_in_place(samples: &mut [Vec<f64>]) -> Result<()> {
    let c = samples.len();
    if c < 2 {
        return Err(DspError::TooFewChannels(c));
    }
    let n = samples[0].len();
    let mut mean = alloc::vec![0.0; n];
    for row in samples.iter() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    for row in samples.iter_mut() {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    Ok(())
}

/// Restricts and reorders channels to `names`.
pub fn select_channels<S: AsRef<str>>(
    recording: &ContinuousRecording,
    names: &[S],
) -> Result<ContinuousRecording> {
    let mut samples = Vec::with_capacity(names.len());
    for name in names {
        let name = name.as_ref();
        let idx = recording
            .channel_labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| DspError::UnknownChannel(name.into()))?;
        samples.push(recording.samples[idx].clone());
    }
    Ok(ContinuousRecording {
        subject_id: recording.subject_id.clone(),
        session: recording.session,
        fs_hz: recording.fs_hz,
        channel_labels: names.iter().map(|n| n.as_ref().into()).collect(),
        samples,
        events: recording.events.clone(),
    })
}

/// Analysis window relative to task-cue onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochWindow {
    pub start_offset_s: f64,
    pub duration_s: f64,
}

impl Default for EpochWindow {
    /// The first three seconds of the four-second task period.
    fn default() -> Self {
        Self {
            start_offset_s: 0.0,
            duration_s: 3.0,
        }
    }
}

impl EpochWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(DspError::InvalidWindow("duration must be positive"));
        }
        if !(self.start_offset_s >= 0.0 && self.start_offset_s + self.duration_s <= TASK_S + 1e-9) {
            return Err(DspError::InvalidWindow(
                "window must lie within the 4 s task period",
            ));
        }
        Ok(())
    }

    pub fn n_samples(&self, fs_hz: f64) -> usize {
        libm::round(self.duration_s * fs_hz) as usize
    }
}

/// One epoch per event: channels × `duration_s·fs` samples.
pub fn extract_epochs(recording: &ContinuousRecording, window: EpochWindow) -> Result<EpochSet> {
    window.validate()?;
    if recording.events.is_empty() {
        return Err(DspError::NoEvents);
    }
    let len = window.n_samples(recording.fs_hz);
    let total = recording.n_samples();
    let epochs = recording
        .events
        .iter()
        .enumerate()
        .map(|(event, ev)| {
            let start =
                libm::round((ev.onset_s + window.start_offset_s) * recording.fs_hz) as usize;
            let end = start + len;
            if end > total {
                return Err(DspError::WindowOutOfBounds {
                    event,
                    start,
                    end,
                    len: total,
                });
            }
            Ok(Epoch {
                direction: ev.direction,
                session: recording.session,
                data: recording
                    .samples
                    .iter()
                    .map(|r| r[start..end].to_vec())
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochSet::new(
        epochs,
        recording.fs_hz,
        recording.channel_labels.clone(),
    )?)
}

/// Per class: `floor(fraction·n)` epochs to train, the rest to test, with at
/// least one epoch on each side. Epochs keep their original relative order.
pub fn split_train_test(
    epochs: &EpochSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(EpochSet, EpochSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DspError::InvalidFraction(train_fraction));
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in epochs.classes() {
        let mut idx = epochs.indices_of(class);
        let n = idx.len();
        if n < 2 {
            return Err(DspError::ClassTooSmall { class, count: n });
        }
        idx.shuffle(&mut seeded(derive_seed(seed, &[class.index() as u64])));
        let n_train = (libm::floor(train_fraction * n as f64 + 1e-9) as usize).clamp(1, n - 1);
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| EpochSet {
        epochs: idx.iter().map(|&i| epochs.epochs[i].clone()).collect(),
        fs_hz: epochs.fs_hz,
        channel_labels: epochs.channel_labels.clone(),
        plane: epochs.plane,
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Settings for the full preprocessing chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_fs_hz: f64,
    pub bandpass_order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub montage: Vec<String>,
    pub window: EpochWindow,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_fs_hz: 250.0,
            bandpass_order: 5,
            low_hz: 4.0,
            high_hz: 40.0,
            montage: DEFAULT_MONTAGE.iter().map(|&s| s.into()).collect(),
            window: EpochWindow::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn decimation_factor(&self, fs_hz: f64) -> Result<usize> {
        let ratio = fs_hz / self.target_fs_hz;
        let factor = libm::round(ratio);
        if !(factor >= 1.0 && libm::fabs(ratio - factor) < 1e-9) {
            return Err(DspError::NonIntegerRatio {
                from_hz: fs_hz,
                to_hz: self.target_fs_hz,
            });
        }
        Ok(factor as usize)
    }

    pub fn validate(&self) -> Result<()> {
        design_butterworth_bandpass(
            self.bandpass_order,
            self.low_hz,
            self.high_hz,
            self.target_fs_hz,
        )?;
        self.window.validate()?;
        if self.montage.is_empty() {
            return Err(DspError::TooFewChannels(0));
        }
        Ok(())
    }
}

/// Decimate → bandpass → CAR (over all recorded channels) → channel
/// selection → epoching, one stage after another on every channel.
pub fn preprocess_stepwise(
    recording: ContinuousRecording,
    config: &PreprocessConfig,
) -> Result<EpochSet> {
    let (factor, fs_out, bandpass, anti_alias) = chain_filters(&recording, config)?;
    let ContinuousRecording {
        subject_id,
        session,
        channel_labels,
        samples,
        events,
        ..
    } = recording;
    let mut rows = Vec::with_capacity(samples.len());
    for raw in samples {
        rows.push(filter_chain(&raw, factor, anti_alias.as_ref(), &bandpass)?);
    }
    car_in_place(&mut rows)?;
    let reduced =
        ContinuousRecording::new(subject_id, session, fs_out, channel_labels, rows, events)?;
    let selected = select_channels(&reduced, &config.montage)?;
    extract_epochs(&selected, config.window)
}

/// Same result as [`preprocess_stepwise`] up to rounding. Every stage before
/// epoching is linear and channel-wise, so the common average is formed once
/// on the raw signals and only the montage channels and that average are
/// filtered.
pub fn preprocess(recording: ContinuousRecording, config: &PreprocessConfig) -> Result<EpochSet> {
    let (factor, fs_out, bandpass, anti_alias) = chain_filters(&recording, config)?;
    let c = recording.n_channels();
    if c < 2 {
        return Err(DspError::TooFewChannels(c));
    }
    let picks = config
        .montage
        .iter()
        .map(|name| {
            recording
                .channel_labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| DspError::UnknownChannel(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec_zeros(recording.n_samples());
    for row in &recording.samples {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let mean = filter_chain(&mean, factor, anti_alias.as_ref(), &bandpass)?;
    let mut rows = Vec::with_capacity(picks.len());
    for &i in &picks {
        let mut row = filter_chain(
            &recording.samples[i],
            factor,
            anti_alias.as_ref(),
            &bandpass,
        )?;
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        rows.push(row);
    }
    let reduced = ContinuousRecording::new(
        recording.subject_id,
        recording.session,
        fs_out,
        config.montage.clone(),
        rows,
        recording.events,
    )?;
    extract_epochs(&reduced, config.window)
}

fn vec_zeros(n: usize) -> Vec<f64> {
    alloc::vec![0.0; n]
}

fn chain_filters(
    recording: &ContinuousRecording,
    config: &PreprocessConfig,
) -> Result<(usize, f64, SosFilter, Option<SosFilter>)> {
    let factor = config.decimation_factor(recording.fs_hz)?;
    let fs_out = recording.fs_hz / factor as f64;
    let bandpass =
        design_butterworth_bandpass(config.bandpass_order, config.low_hz, config.high_hz, fs_out)?;
    let anti_alias = (factor > 1)
        .then(|| decimation_filter(recording.fs_hz, factor))
        .transpose()?;
    Ok((factor, fs_out, bandpass, anti_alias))
}

fn filter_chain(
    raw: &[f64],
    factor: usize,
    anti_alias: Option<&SosFilter>,
    bandpass: &SosFilter,
) -> Result<Vec<f64>> {
    match anti_alias {
        Some(f) => filtfilt(bandpass, &decimate_with(f, raw, factor)?),
        None => filtfilt(bandpass, raw),
    }
}
