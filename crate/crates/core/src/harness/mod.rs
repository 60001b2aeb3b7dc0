//! Experiment driver for the manufactured test problem.

pub mod config;
pub mod example31;
pub mod output;
pub mod run;

pub use config::{
    parse_pairs, Algorithm, CoarseOperator, ConfigError, ExperimentConfig, MeshChoice, Sweep,
};
pub use output::{format_g, to_csv, write_csv, ResultRow, CSV_HEADER};
pub use run::{run_experiment, HarnessError, Outcome};

/// Run every configuration of a sweep in order.
pub fn run_sweep(sweep: &Sweep) -> Result<Vec<Outcome>, HarnessError> {
    sweep.configs().iter().map(run_experiment).collect()
}
