//! Experiment runner, file formats and command-line front end for the
//! `snncl-core` spiking continual-learning engine.
//!
//! - [`idx`]: IDX image/label files (plain or gzip).
//! - [`config`]: TOML experiment configuration with dotted overrides.
//! - [`checkpoint`]: bit-exact binary model snapshots.
//! - [`runner`]: resumable runs, run records and sweeps.
//! - [`report`]: CSV/JSON result files.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod idx;
pub mod report;
pub mod runner;
