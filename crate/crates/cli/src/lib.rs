//! Experiment driver for `switchtrack-core`: dataset generation and
//! ingestion, identification, tracking, evaluation and parameter sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use commands::{
    cmd_cluster_identify, cmd_evaluate, cmd_generate, cmd_identifiability, cmd_ingest, cmd_sweep,
    cmd_track, exit_code,
};
pub use config::{ExperimentConfig, Overrides};
