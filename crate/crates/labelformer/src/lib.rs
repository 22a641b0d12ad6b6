//! File formats, run directories and the command-line interface around
//! `labelformer-core`.

pub mod alloc_tuning;
pub mod analyses;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod report;
