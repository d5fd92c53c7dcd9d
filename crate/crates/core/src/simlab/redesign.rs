//! Re-randomization of an existing trial's covariates read from CSV.

use std::path::Path;

use super::generators::GeneratorSpec;
use super::runner::{run_experiment, ExperimentResult, RunOptions};
use crate::config::ExperimentConfig;
use crate::error::{CarError, Result};

/// Re-allocate the units of a CSV file under every configured policy.
/// The config's generator must be `csv_resample`; `csv` replaces its path.
pub fn redesign_from_csv(config: &ExperimentConfig, csv: Option<&Path>, opts: RunOptions) -> Result<ExperimentResult> {
    let mut config = config.clone();
    match &mut config.generator {
        GeneratorSpec::CsvResample { path, .. } => {
            if let Some(p) = csv {
                *path = p.to_path_buf();
            }
        }
        _ => return Err(CarError::config("generator.kind", "redesign needs a csv_resample generator")),
    }
    run_experiment(&config, opts)
}
