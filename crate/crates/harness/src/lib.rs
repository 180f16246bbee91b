//! Multi-seed experiment orchestration for the structure attacks: config
//! parsing, the clean/evasion/poisoning/sequential/joint pipelines,
//! parameter sweeps and CSV/JSON reports.

pub mod config;
mod error;
pub mod experiment;
pub mod report;

pub use config::{AttackKind, DatasetSource, Defense, ExperimentConfig, LabelSource, SweepParam};
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_experiment_with, run_sweep, AttackReport, Experiment};
