//! Synthetic stand-in for the reaching-task recordings.
//!
//! Each trial is 3 s rest, 3 s visual instruction and 4 s task. The
//! background on every channel is unit-RMS pink noise plus a common-mode term
//! shared by all channels (slow drift and a broadband pink component). During
//! the task period a direction-specific spatial pattern, fixed per subject,
//! carries an amplitude-modulated mu-band (8–13 Hz) oscillation.
//!
//! Streams are keyed by `(seed, subject, session, ...)` so that every
//! recording is reproducible on its own. Spatial patterns depend only on
//! `(seed, subject, direction)`: the execution and imagination sessions of a
//! subject share them, with execution scaled by `me_gain`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ContinuousRecording, DatasetError, Direction, Event, Result, Session};
use crate::rng::{derive_seed, seeded, standard_normal, tag_hash, ChaCha8Rng};

pub const REST_S: f64 = 3.0;
pub const INSTRUCTION_S: f64 = 3.0;
pub const TASK_S: f64 = 4.0;
pub const TRIAL_S: f64 = REST_S + INSTRUCTION_S + TASK_S;

const MU_BAND_HZ: (f64, f64) = (8.0, 13.0);
const ENVELOPE_HZ: (f64, f64) = (0.3, 1.0);
const ENVELOPE_DEPTH: f64 = 0.5;
const TAPER_S: f64 = 0.25;
const DRIFT_RMS: f64 = 2.0;
const DRIFT_TAU_S: f64 = 2.0;
const COMMON_PINK_RMS: f64 = 0.5;

// Stream tags.
const ORDER: u64 = 1;
const TRIAL: u64 = 2;
const PATTERN: u64 = 3;
const NOISE: u64 = 4;
const COMMON: u64 = 5;

/// 60-electrode layout of the generated recordings (10-10 positions).
pub const MONTAGE_60: [&str; 60] = [
    "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1", "Fz", "F2", "F4",
    "F6", "F8", "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3",
    "C1", "Cz", "C2", "C4", "C6", "T8", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6",
    "TP8", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO3", "POz", "PO4", "PO8",
    "O1", "Oz", "O2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_direction: usize,
    pub fs_hz: f64,
    /// Class-signal amplitude over background-noise RMS.
    pub snr: f64,
    /// Execution-session amplitude multiplier over imagination.
    pub me_gain: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 9,
            trials_per_direction: 50,
            fs_hz: 1000.0,
            snr: 1.5,
            me_gain: 1.5,
            seed: 20_200_315,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(DatasetError::InvalidConfig("n_subjects must be positive"));
        }
        if self.trials_per_direction == 0 {
            return Err(DatasetError::InvalidConfig(
                "trials_per_direction must be positive",
            ));
        }
        if !(self.fs_hz > 2.0 * MU_BAND_HZ.1 && self.fs_hz.is_finite()) {
            return Err(DatasetError::InvalidConfig(
                "fs_hz must be finite and above twice the mu band",
            ));
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return Err(DatasetError::InvalidConfig("snr must be non-negative"));
        }
        if !(self.me_gain > 1.0 && self.me_gain.is_finite()) {
            return Err(DatasetError::InvalidConfig("me_gain must exceed 1"));
        }
        Ok(())
    }

    /// `sub1`, `sub2`, ...
    pub fn subject_ids(&self) -> Vec<String> {
        (1..=self.n_subjects).map(|i| format!("sub{i}")).collect()
    }

    pub fn n_trials(&self) -> usize {
        self.trials_per_direction * Direction::ALL.len()
    }

    pub fn n_samples(&self) -> usize {
        libm::round(self.n_trials() as f64 * TRIAL_S * self.fs_hz) as usize
    }
}

/// Timing and oscillation parameters of one generated trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSpec {
    pub direction: Direction,
    /// Start of the task period.
    pub onset_s: f64,
    pub freq_hz: f64,
    pub phase: f64,
    pub envelope_hz: f64,
    pub envelope_phase: f64,
}

fn subject_key(config: &SynthConfig, subject_id: &str) -> u64 {
    derive_seed(config.seed, &[tag_hash(subject_id)])
}

fn session_key(config: &SynthConfig, subject_id: &str, session: Session) -> u64 {
    derive_seed(subject_key(config, subject_id), &[session as u64 + 1])
}

/// Class-signal amplitude for a session.
pub fn class_amplitude(config: &SynthConfig, session: Session) -> f64 {
    match session {
        Session::Execution => config.snr * config.me_gain,
        Session::Imagination => config.snr,
    }
}

/// Randomised cue order with `trials_per_direction` trials per direction.
pub fn synth_schedule(config: &SynthConfig, subject_id: &str, session: Session) -> Vec<TrialSpec> {
    let key = session_key(config, subject_id, session);
    let mut order: Vec<Direction> = Direction::ALL
        .iter()
        .flat_map(|&d| core::iter::repeat_n(d, config.trials_per_direction))
        .collect();
    order.shuffle(&mut seeded(derive_seed(key, &[ORDER])));
    let mut rng = seeded(derive_seed(key, &[TRIAL]));
    order
        .into_iter()
        .enumerate()
        .map(|(k, direction)| TrialSpec {
            direction,
            onset_s: k as f64 * TRIAL_S + REST_S + INSTRUCTION_S,
            freq_hz: rng.gen_range(MU_BAND_HZ.0..MU_BAND_HZ.1),
            phase: rng.gen_range(0.0..2.0 * PI),
            envelope_hz: rng.gen_range(ENVELOPE_HZ.0..ENVELOPE_HZ.1),
            envelope_phase: rng.gen_range(0.0..2.0 * PI),
        })
        .collect()
}

/// Unit-norm spatial pattern over [`MONTAGE_60`] for each direction, in
/// [`Direction::ALL`] order.
pub fn class_patterns(config: &SynthConfig, subject_id: &str) -> Vec<Vec<f64>> {
    let key = subject_key(config, subject_id);
    Direction::ALL
        .iter()
        .map(|&d| {
            let mut rng = seeded(derive_seed(key, &[PATTERN, d.index() as u64]));
            let mut p: Vec<f64> = (0..MONTAGE_60.len())
                .map(|_| standard_normal(&mut rng))
                .collect();
            let norm = libm::sqrt(p.iter().map(|v| v * v).sum::<f64>());
            p.iter_mut().for_each(|v| *v /= norm);
            p
        })
        .collect()
}

/// Paul Kellet's refined pink-noise filter driven by white Gaussian noise.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let (mut b0, mut b1, mut b2, mut b3, mut b4, mut b5, mut b6) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let w = standard_normal(rng);
            b0 = 0.99886 * b0 + w * 0.0555179;
            b1 = 0.99332 * b1 + w * 0.0750759;
            b2 = 0.96900 * b2 + w * 0.1538520;
            b3 = 0.86650 * b3 + w * 0.3104856;
            b4 = 0.55000 * b4 + w * 0.5329522;
            b5 = -0.7616 * b5 - w * 0.0168980;
            let out = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
            b6 = w * 0.115926;
            out
        })
        .collect()
}

fn scale_to_rms(x: &mut [f64], rms: f64) {
    let current = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64);
    if current > 0.0 {
        let k = rms / current;
        x.iter_mut().for_each(|v| *v *= k);
    }
}

fn common_mode(config: &SynthConfig, key: u64, n: usize) -> Vec<f64> {
    let mut rng = seeded(derive_seed(key, &[COMMON]));
    let alpha = libm::exp(-1.0 / (DRIFT_TAU_S * config.fs_hz));
    let mut level = 0.0;
    let mut drift: Vec<f64> = (0..n)
        .map(|_| {
            level = alpha * level + standard_normal(&mut rng);
            level
        })
        .collect();
    let mean = drift.iter().sum::<f64>() / n as f64;
    drift.iter_mut().for_each(|v| *v -= mean);
    scale_to_rms(&mut drift, DRIFT_RMS);
    let mut shared = pink_noise(&mut rng, n);
    scale_to_rms(&mut shared, COMMON_PINK_RMS);
    drift.iter().zip(&shared).map(|(a, b)| a + b).collect()
}

/// Background activity: per-channel pink noise plus the common-mode term.
pub fn background_component(
    config: &SynthConfig,
    subject_id: &str,
    session: Session,
) -> Vec<Vec<f64>> {
    let key = session_key(config, subject_id, session);
    let n = config.n_samples();
    let common = common_mode(config, key, n);
    (0..MONTAGE_60.len())
        .map(|c| {
            let mut rng = seeded(derive_seed(key, &[NOISE, c as u64]));
            let mut row = pink_noise(&mut rng, n);
            scale_to_rms(&mut row, 1.0);
            row.iter_mut().zip(&common).for_each(|(v, m)| *v += m);
            row
        })
        .collect()
}

fn add_class_component(
    rows: &mut [Vec<f64>],
    fs_hz: f64,
    patterns: &[Vec<f64>],
    schedule: &[TrialSpec],
    amplitude: f64,
) {
    if amplitude == 0.0 {
        return;
    }
    let n = rows.first().map_or(0, Vec::len);
    let task_len = libm::round(TASK_S * fs_hz) as usize;
    let mut wave = vec![0.0; task_len];
    for trial in schedule {
        let start = libm::round(trial.onset_s * fs_hz) as usize;
        let len = task_len.min(n.saturating_sub(start));
        for (i, w) in wave[..len].iter_mut().enumerate() {
            let t = i as f64 / fs_hz;
            let ramp = (t.min(TASK_S - t) / TAPER_S).clamp(0.0, 1.0);
            let taper = 0.5 - 0.5 * libm::cos(PI * ramp);
            let env = 1.0
                + ENVELOPE_DEPTH
                    * libm::sin(2.0 * PI * trial.envelope_hz * t + trial.envelope_phase);
            *w = amplitude * taper * env * libm::sin(2.0 * PI * trial.freq_hz * t + trial.phase);
        }
        let pattern = &patterns[trial.direction.index()];
        for (row, &weight) in rows.iter_mut().zip(pattern) {
            for (v, w) in row[start..start + len].iter_mut().zip(&wave[..len]) {
                *v += weight * w;
            }
        }
    }
}

/// Class signal alone for a given schedule and amplitude.
pub fn class_component(
    config: &SynthConfig,
    subject_id: &str,
    schedule: &[TrialSpec],
    amplitude: f64,
) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; config.n_samples()]; MONTAGE_60.len()];
    let patterns = class_patterns(config, subject_id);
    add_class_component(&mut rows, config.fs_hz, &patterns, schedule, amplitude);
    rows
}

/// Generates one session of one synthetic subject.
pub fn synth_generate(
    config: &SynthConfig,
    subject_id: &str,
    session: Session,
) -> Result<ContinuousRecording> {
    config.validate()?;
    let schedule = synth_schedule(config, subject_id, session);
    let patterns = class_patterns(config, subject_id);
    let mut samples = background_component(config, subject_id, session);
    add_class_component(
        &mut samples,
        config.fs_hz,
        &patterns,
        &schedule,
        class_amplitude(config, session),
    );
    let events = schedule
        .iter()
        .map(|t| Event {
            onset_s: t.onset_s,
            direction: t.direction,
        })
        .collect();
    ContinuousRecording::new(
        subject_id.into(),
        session,
        config.fs_hz,
        MONTAGE_60.iter().map(|&s| s.into()).collect(),
        samples,
        events,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 1,
            trials_per_direction: 3,
            fs_hz: 250.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn event_counts_follow_trials_per_direction() {
        let cfg = SynthConfig {
            trials_per_direction: 50,
            fs_hz: 100.0,
            ..small()
        };
        let sched = synth_schedule(&cfg, "sub1", Session::Imagination);
        assert_eq!(sched.len(), 300);
        for d in Direction::ALL {
            assert_eq!(sched.iter().filter(|t| t.direction == d).count(), 50);
        }
        assert!(sched.windows(2).all(|w| w[0].onset_s < w[1].onset_s));
    }

    #[test]
    fn recordings_are_deterministic() {
        let cfg = small();
        let a = synth_generate(&cfg, "sub1", Session::Execution).unwrap();
        let b = synth_generate(&cfg, "sub1", Session::Execution).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&cfg, "sub2", Session::Execution).unwrap();
        assert_ne!(a.samples, c.samples);
        assert_eq!(a.n_channels(), 60);
        assert_eq!(a.n_samples(), 18 * 10 * 250);
    }

    #[test]
    fn zero_snr_is_pure_background() {
        let cfg = SynthConfig {
            snr: 0.0,
            ..small()
        };
        let rec = synth_generate(&cfg, "sub1", Session::Imagination).unwrap();
        let bg = background_component(&cfg, "sub1", Session::Imagination);
        assert_eq!(rec.samples, bg);
    }

    #[test]
    fn execution_amplitude_is_gain_times_imagination() {
        let cfg = small();
        let sched = synth_schedule(&cfg, "sub1", Session::Execution);
        let me = class_component(
            &cfg,
            "sub1",
            &sched,
            class_amplitude(&cfg, Session::Execution),
        );
        let mi = class_component(
            &cfg,
            "sub1",
            &sched,
            class_amplitude(&cfg, Session::Imagination),
        );
        for (a, b) in me.iter().flatten().zip(mi.iter().flatten()) {
            assert!((a - cfg.me_gain * b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let full = synth_generate(&cfg, "sub1", Session::Execution).unwrap();
        let bg = background_component(&cfg, "sub1", Session::Execution);
        for ((f, b), c) in full
            .samples
            .iter()
            .flatten()
            .zip(bg.iter().flatten())
            .zip(me.iter().flatten())
        {
            assert!((f - b - c).abs() <= 1e-12 * (1.0 + f.abs()));
        }
    }

    #[test]
    fn patterns_are_unit_norm_and_shared_across_sessions() {
        let cfg = small();
        let p = class_patterns(&cfg, "sub1");
        assert_eq!(p.len(), 6);
        for v in &p {
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_ne!(p, class_patterns(&cfg, "sub2"));
    }

    #[test]
    fn invalid_configs() {
        assert!(SynthConfig {
            n_subjects: 0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            snr: -1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            me_gain: 1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(small().validate().is_ok());
    }
}
