//! Simulation studies around the estimator.
//!
//! Errors are always scored against the true mean of the population that
//! *occupied* a rank, never against the population whose true mean is
//! largest. Every replicate (or bootstrap resample) draws from its own
//! ChaCha stream `(seed, index)`, and results are reduced in index order, so
//! output is identical for any number of worker threads.

mod bootstrap;
mod export;
mod mse;

pub use bootstrap::{
    bc_percentile_interval, bootstrap_from_groups, percentile_interval, quantile_sorted,
    run_bootstrap_ci, BootstrapConfig, Interval, IntervalSet,
};
pub use export::{export_results, format_sig10, Cell, ExportFormat, ResultTable};
pub use mse::{
    p2_grid, p3_grid, run_mse, run_mse_grid, score_replicate, ExperimentRecord, MseConfig, MseRow,
    MseSummary,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The ranked observations themselves.
    Mle,
    Ccmle,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Mle => "mle",
            Estimator::Ccmle => "ccmle",
        })
    }
}

pub(crate) fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}
