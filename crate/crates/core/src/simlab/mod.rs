//! Monte Carlo harness: generators, replication runner, shift statistics
//! and chain diagnostics.

pub mod additional;
pub mod diagnostics;
pub mod generators;
pub mod oracle;
pub mod redesign;
pub mod runner;
pub mod stats;

pub use diagnostics::{drift_check, freeze_policy, rho_tilde_estimate, run_diagnostics, DiagnoseMode, DriftRow, RhoTildeRow};
pub use generators::{Generator, GeneratorSpec};
pub use oracle::{oracle_parameter, OracleEstimate};
pub use redesign::redesign_from_csv;
pub use runner::{run_discrete_shift_study, run_experiment, ExperimentResult, RunOptions, StratumRow, SummaryRow};
pub use stats::{normality_check, shift_statistic, NormalityReport, ShiftStat};
