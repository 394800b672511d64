use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stream, Cell, Estimator, ResultTable};
use crate::ccmle::{ccmle, ObservedSample, OptimizerSettings};
use crate::error::{Error, Result};
use crate::kernels::{std_normal_cdf, std_normal_quantile, QuadratureSpec};

/// Ranked raw means, ranked estimates and redraw count of one resample.
type Resample = (Vec<f64>, Vec<f64>, usize);

/// Attempts per resample before a failing CCMLE is treated as fatal.
const MAX_REDRAWS: usize = 100;

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub mu_true: Vec<f64>,
    pub n_per_group: usize,
    /// Standard deviation of a single observation, not of the group mean.
    pub obs_sd: f64,
    pub n_boot: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu_true.len() < 2 {
            return Err(Error::invalid("mu_true", "need at least two populations"));
        }
        if self.mu_true.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mu_true", "entries must be finite"));
        }
        if self.n_per_group < 2 {
            return Err(Error::invalid("n_per_group", "must be at least 2"));
        }
        if !(self.obs_sd > 0.0 && self.obs_sd.is_finite()) {
            return Err(Error::invalid("obs_sd", "must be positive and finite"));
        }
        validate_resampling(self.n_boot, self.level)
    }

    /// Standard deviation of one group mean.
    pub fn sigma_eff(&self) -> f64 {
        self.obs_sd / (self.n_per_group as f64).sqrt()
    }
}

fn validate_resampling(n_boot: usize, level: f64) -> Result<()> {
    if n_boot < 999 {
        return Err(Error::invalid(
            "n_boot",
            format!("must be at least 999, got {n_boot}"),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level", "must lie strictly between 0 and 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    /// 1-based; 1 is the largest group mean.
    pub rank: usize,
    pub estimator: Estimator,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub level: f64,
    pub n_boot: usize,
    /// Group means of the original data, in label order.
    pub group_means: Vec<f64>,
    /// Resamples whose CCMLE failed and were redrawn.
    pub failures: usize,
    pub intervals: Vec<Interval>,
}

impl IntervalSet {
    pub fn get(&self, rank: usize, estimator: Estimator) -> Option<&Interval> {
        self.intervals
            .iter()
            .find(|i| i.rank == rank && i.estimator == estimator)
    }

    /// Columns `rank, estimator, point, lower, upper, level, n_boot`.
    pub fn to_table(&self) -> ResultTable {
        let columns = [
            "rank",
            "estimator",
            "point",
            "lower",
            "upper",
            "level",
            "n_boot",
        ]
        .map(String::from)
        .to_vec();
        let rows = self
            .intervals
            .iter()
            .map(|i| {
                vec![
                    Cell::Int(i.rank as i64),
                    Cell::Text(i.estimator.to_string()),
                    Cell::Float(i.point),
                    Cell::Float(i.lower),
                    Cell::Float(i.upper),
                    Cell::Float(self.level),
                    Cell::Int(self.n_boot as i64),
                ]
            })
            .collect();
        ResultTable { columns, rows }
    }
}

/// Linear-interpolation quantile (R type 7) of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let a = 0.5 * (1.0 - level);
    (quantile_sorted(sorted, a), quantile_sorted(sorted, 1.0 - a))
}

/// Bias-corrected percentile interval. The bias constant comes from the
/// share of bootstrap statistics strictly below `point`, clamped half a
/// resample away from 0 and 1.
pub fn bc_percentile_interval(sorted: &[f64], point: f64, level: f64) -> (f64, f64) {
    let b = sorted.len() as f64;
    let below = sorted.partition_point(|&t| t < point) as f64;
    let frac = (below / b).clamp(0.5 / b, 1.0 - 0.5 / b);
    let z0 = std_normal_quantile(frac);
    let z = std_normal_quantile(0.5 * (1.0 + level));
    (
        quantile_sorted(sorted, std_normal_cdf(2.0 * z0 - z)),
        quantile_sorted(sorted, std_normal_cdf(2.0 * z0 + z)),
    )
}

fn ranked(means: &[f64]) -> Vec<f64> {
    let mut v = means.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn group_means(groups: &[Vec<f64>]) -> Vec<f64> {
    groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect()
}

/// Stratified bootstrap over already observed groups. `sigma_eff` is the
/// standard deviation of one group mean.
pub fn bootstrap_from_groups(
    groups: &[Vec<f64>],
    sigma_eff: f64,
    n_boot: usize,
    level: f64,
    seed: u64,
    spec: &QuadratureSpec,
    opt: &OptimizerSettings,
) -> Result<IntervalSet> {
    if groups.len() < 2 {
        return Err(Error::invalid("groups", "need at least two groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::invalid("groups", "every group needs observations"));
    }
    validate_resampling(n_boot, level)?;
    spec.validate()?;
    opt.validate()?;

    let means = group_means(groups);
    let base = ccmle(&ObservedSample::new(means.clone(), sigma_eff)?, spec, opt)?;

    // Resample b uses stream b + 1; stream 0 belongs to the data draw.
    let draws: Vec<Result<Resample>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b + 1);
            let mut failed = 0;
            loop {
                let m: Vec<f64> = groups
                    .iter()
                    .map(|g| {
                        let s: f64 = (0..g.len()).map(|_| g[rng.random_range(0..g.len())]).sum();
                        s / g.len() as f64
                    })
                    .collect();
                match ObservedSample::new(m, sigma_eff).and_then(|o| {
                    let est = ccmle(&o, spec, opt)?;
                    Ok((o.x().to_vec(), est.mu_hat_ranked))
                }) {
                    Ok((raw, est)) => return Ok((raw, est, failed)),
                    Err(e) => {
                        failed += 1;
                        if failed >= MAX_REDRAWS {
                            return Err(e);
                        }
                    }
                }
            }
        })
        .collect();

    let p = groups.len();
    let mut raw_by_rank = vec![Vec::with_capacity(n_boot); p];
    let mut est_by_rank = vec![Vec::with_capacity(n_boot); p];
    let mut failures = 0;
    for d in draws {
        let (raw, est, failed) = d?;
        failures += failed;
        for r in 0..p {
            raw_by_rank[r].push(raw[r]);
            est_by_rank[r].push(est[r]);
        }
    }

    let ranked_means = ranked(&means);
    let mut intervals = Vec::with_capacity(2 * p);
    for r in 0..p {
        raw_by_rank[r].sort_by(f64::total_cmp);
        est_by_rank[r].sort_by(f64::total_cmp);
        let (lower, upper) = percentile_interval(&raw_by_rank[r], level);
        intervals.push(Interval {
            rank: r + 1,
            estimator: Estimator::Mle,
            point: ranked_means[r],
            lower,
            upper,
        });
        let point = base.mu_hat_ranked[r];
        let (lower, upper) = bc_percentile_interval(&est_by_rank[r], point, level);
        intervals.push(Interval {
            rank: r + 1,
            estimator: Estimator::Ccmle,
            point,
            lower,
            upper,
        });
    }
    Ok(IntervalSet {
        level,
        n_boot,
        group_means: means,
        failures,
        intervals,
    })
}

/// Draws one dataset from `cfg` and bootstraps it.
pub fn run_bootstrap_ci(
    cfg: &BootstrapConfig,
    spec: &QuadratureSpec,
    opt: &OptimizerSettings,
) -> Result<IntervalSet> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0);
    let groups: Vec<Vec<f64>> = cfg
        .mu_true
        .iter()
        .map(|&m| {
            (0..cfg.n_per_group)
                .map(|_| m + cfg.obs_sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    bootstrap_from_groups(
        &groups,
        cfg.sigma_eff(),
        cfg.n_boot,
        cfg.level,
        cfg.seed,
        spec,
        opt,
    )
}
