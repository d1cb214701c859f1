//! Datasets, the Monte-Carlo experiment runner and the command line.

mod cli;
mod config;
mod data;
mod runner;

pub use cli::{cli, scheme_names};
pub use config::{
    default_attack, parse_distribution, parse_range, DatasetSource, ExperimentConfig, Scheme,
};
pub use data::{gen_beta, load_csv, read_column, Column};
pub use runner::{
    derive_seed, format_float, mse, run_experiment, summary_path, write_csv, write_outputs,
    write_summary, CellSummary, ExperimentResult, SchemeDiagnostics, TrialDiagnostics, TrialRecord,
};
