//! Config-driven sweeps over perturbation rates, label fractions, variants
//! and seeds, with CSV results, JSON checkpoints and feature exports.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod results;
pub mod sweep;

pub use config::{ExperimentConfig, RowSpec, Violation};
pub use error::{CliError, CliResult};
pub use results::{AggregateRow, ResultRow, RESULTS_HEADER};
pub use sweep::{run_experiment, run_sweep, SweepOptions, SweepSummary};
