//! Experiment runner, file formats and reports around `diana-core`.
//!
//! - [`config`]: TOML experiment configuration.
//! - [`runner`]: parallel (variant, seed) jobs and their output files.
//! - [`report`]: metric reports, matrix CSV and aggregates.
//! - [`compare`]: side-by-side comparison of runs and ordering checks.
//! - [`snapshot`]: key-space snapshots in JSON and binary form.
//! - [`stream_csv`]: stream export and import.

pub mod compare;
pub mod config;
pub mod report;
pub mod runner;
pub mod snapshot;
pub mod stream_csv;
