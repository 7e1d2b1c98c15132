//! Core algorithms for decoding movement imagination from EEG with a
//! relation-network classifier whose class prototypes come from movement
//! execution recordings.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation over in-memory data; file formats, reporting and the command
//! line live in the companion `btrn` crate.
//!
//! Module map:
//!
//! - [`tensor`]: dense f64 tensors, the layer kernels and a reverse-mode tape.
//! - [`dsp`]: Butterworth design, zero-phase filtering, decimation, CAR,
//!   channel selection, epoching and stratified splits.
//! - [`dataset`]: recordings, epochs and the synthetic EEG generator.
//! - [`model`]: the Siamese 3D-CNN encoder and relation head, episodic
//!   training and prediction.
//! - [`baselines`]: one-vs-rest CSP features with multiclass LDA.
//! - [`eval`]: confusion matrices, accuracy and cross-subject aggregation.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod dataset;
pub mod dsp;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod tensor;

pub use dataset::{
    Condition, ContinuousRecording, Direction, Epoch, EpochSet, Event, Plane, Session,
};
pub use tensor::Tensor;
