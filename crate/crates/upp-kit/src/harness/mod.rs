//! Experiment runner, configuration files, direct baselines and trace I/O.

pub mod baselines;
pub mod config;
pub mod equivalence;
pub mod experiment;

pub use baselines::DirectBaseline;
pub use config::FlatConfig;
pub use equivalence::{equivalence_suite, EquivalenceEntry, EquivalenceReport};
pub use experiment::{plotdata, run_experiment, trace_from_csv, trace_to_csv, ExperimentOutput, ExperimentSpec};
