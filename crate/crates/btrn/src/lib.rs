//! File formats, experiment configuration, report rendering and the
//! end-to-end pipeline behind the `btrn` command.
//!
//! - [`format`]: the `BTRNEEG1` recording and `BTRNCKP1` checkpoint files.
//! - [`config`]: the JSON experiment configuration and its validation.
//! - [`pipeline`]: synthetic data generation and the evaluation run.
//! - [`report`]: CSV tables, confusion matrices and the JSON summary.

pub mod config;
pub mod format;
pub mod pipeline;
pub mod report;

pub use btrn_core as core;
