//! Orchestration behind the `dpfed` binary: experiment configs, training
//! and sweep drivers, and the CSV/JSON files they write.

pub mod config;
pub mod experiment;
pub mod output;
