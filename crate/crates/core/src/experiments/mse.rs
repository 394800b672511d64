use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stream, Cell, Estimator, ResultTable};
use crate::ccmle::{ccmle, ObservedSample, OptimizerSettings};
use crate::error::{Error, Result};
use crate::kernels::QuadratureSpec;

/// One mean configuration of the MSE study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseConfig {
    /// True population means, in any order.
    pub mu_true: Vec<f64>,
    pub sigma: f64,
    pub n_reps: usize,
    pub seed: u64,
    /// 1-based ranks to score; 1 is the largest observation.
    pub ranks: Vec<usize>,
}

impl MseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu_true.len() < 2 {
            return Err(Error::invalid("mu_true", "need at least two populations"));
        }
        if self.mu_true.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mu_true", "entries must be finite"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be positive and finite"));
        }
        if self.n_reps < 100 {
            return Err(Error::invalid(
                "n_reps",
                format!("must be at least 100, got {}", self.n_reps),
            ));
        }
        if self.ranks.is_empty() {
            return Err(Error::invalid("ranks", "must name at least one rank"));
        }
        let p = self.mu_true.len();
        if let Some(&bad) = self.ranks.iter().find(|&&r| r == 0 || r > p) {
            return Err(Error::invalid(
                "ranks",
                format!("rank {bad} outside 1..={p}"),
            ));
        }
        Ok(())
    }
}

/// One simulated dataset and its per-rank errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// Sampled values in the population label order.
    pub draw: Vec<f64>,
    /// `selected_labels[r]` is the population that landed at rank `r`.
    pub selected_labels: Vec<usize>,
    /// `μ(selected_labels[r]) − x₍ᵣ₎`, by rank.
    pub errors_mle: Vec<f64>,
    /// `μ(selected_labels[r]) − μ̂₍ᵣ₎`, by rank.
    pub errors_ccmle: Vec<f64>,
    pub converged: bool,
}

/// Ranks `draw`, estimates, and scores both estimators against the true
/// means of the selected populations.
pub fn score_replicate(
    mu_true: &[f64],
    draw: &[f64],
    sigma: f64,
    spec: &QuadratureSpec,
    opt: &OptimizerSettings,
) -> Result<ExperimentRecord> {
    let obs = ObservedSample::new(draw.to_vec(), sigma)?;
    let est = ccmle(&obs, spec, opt)?;
    let labels = obs.permutation().to_vec();
    let errors_mle = labels
        .iter()
        .zip(obs.x())
        .map(|(&l, x)| mu_true[l] - x)
        .collect();
    let errors_ccmle = labels
        .iter()
        .zip(&est.mu_hat_ranked)
        .map(|(&l, m)| mu_true[l] - m)
        .collect();
    Ok(ExperimentRecord {
        draw: draw.to_vec(),
        selected_labels: labels,
        errors_mle,
        errors_ccmle,
        converged: est.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub config_id: usize,
    pub mu_true: Vec<f64>,
    pub rank: usize,
    pub estimator: Estimator,
    pub mse: f64,
    /// Monte Carlo standard error of `mse`.
    pub se: f64,
    pub n_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub rows: Vec<MseRow>,
    /// Replicates dropped because the solver returned an error.
    pub failures: usize,
    /// Replicates that hit the iteration limit (kept, best iterate).
    pub non_converged: usize,
}

impl MseSummary {
    /// Columns `config_id, mu_true_1..p, rank, estimator, mse, se, n_reps`.
    pub fn to_table(&self) -> ResultTable {
        let p = self.rows.first().map_or(0, |r| r.mu_true.len());
        let mut columns = vec!["config_id".to_string()];
        columns.extend((1..=p).map(|i| format!("mu_true_{i}")));
        columns.extend(["rank", "estimator", "mse", "se", "n_reps"].map(String::from));
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![Cell::Int(r.config_id as i64)];
                row.extend(r.mu_true.iter().map(|&m| Cell::Float(m)));
                row.extend([
                    Cell::Int(r.rank as i64),
                    Cell::Text(r.estimator.to_string()),
                    Cell::Float(r.mse),
                    Cell::Float(r.se),
                    Cell::Int(r.n_reps as i64),
                ]);
                row
            })
            .collect();
        ResultTable { columns, rows }
    }
}

/// Mean and standard error of the squared errors.
fn mse_and_se(errors: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let sq: Vec<f64> = errors.map(|e| e * e).collect();
    let n = sq.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = sq.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        sq.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, (var / n as f64).sqrt(), n)
}

fn simulate(
    cfg: &MseConfig,
    spec: &QuadratureSpec,
    opt: &OptimizerSettings,
) -> Vec<Result<ExperimentRecord>> {
    (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(cfg.seed, rep);
            let draw: Vec<f64> = cfg
                .mu_true
                .iter()
                .map(|m| m + cfg.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            score_replicate(&cfg.mu_true, &draw, cfg.sigma, spec, opt)
        })
        .collect()
}

/// Simulates `n_reps` datasets and reports per-rank MSE for the naive
/// estimator and the CCMLE.
pub fn run_mse(
    cfg: &MseConfig,
    spec: &QuadratureSpec,
    opt: &OptimizerSettings,
) -> Result<MseSummary> {
    run_mse_grid(std::slice::from_ref(cfg), spec, opt)
}

/// [`run_mse`] over several configurations sharing one `p`; rows carry the
/// configuration's index as `config_id`.
pub fn run_mse_grid(
    configs: &[MseConfig],
    spec: &QuadratureSpec,
    opt: &OptimizerSettings,
) -> Result<MseSummary> {
    let Some(first) = configs.first() else {
        return Err(Error::invalid("configs", "no configurations given"));
    };
    for cfg in configs {
        cfg.validate()?;
        if cfg.mu_true.len() != first.mu_true.len() {
            return Err(Error::invalid("mu_true", "all configurations must share p"));
        }
    }
    spec.validate()?;
    opt.validate()?;

    let mut summary = MseSummary {
        rows: Vec::new(),
        failures: 0,
        non_converged: 0,
    };
    for (config_id, cfg) in configs.iter().enumerate() {
        let results = simulate(cfg, spec, opt);
        let mut records = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(rec) => {
                    if !rec.converged {
                        summary.non_converged += 1;
                    }
                    records.push(rec);
                }
                Err(_) => summary.failures += 1,
            }
        }
        for &rank in &cfg.ranks {
            let r = rank - 1;
            for estimator in [Estimator::Mle, Estimator::Ccmle] {
                let errors = records.iter().map(|rec| match estimator {
                    Estimator::Mle => rec.errors_mle[r],
                    Estimator::Ccmle => rec.errors_ccmle[r],
                });
                let (mse, se, n_reps) = mse_and_se(errors);
                summary.rows.push(MseRow {
                    config_id,
                    mu_true: cfg.mu_true.clone(),
                    rank,
                    estimator,
                    mse,
                    se,
                    n_reps,
                });
            }
        }
    }
    Ok(summary)
}

fn steps_between(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || hi < lo {
        return Err(Error::invalid(
            "step",
            "must be positive with a nonempty range",
        ));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

/// Two-population grid: `μ₂ = 0`, `μ₁` from 0 to 5.
pub fn p2_grid(step: f64) -> Result<Vec<Vec<f64>>> {
    Ok(steps_between(0.0, 5.0, step)?
        .into_iter()
        .map(|m1| vec![m1, 0.0])
        .collect())
}

/// Three-population grid for fixed `μ₃`: `μ₁ ≥ μ₂` on `[μ₃, 5]`.
pub fn p3_grid(mu3: f64, step: f64) -> Result<Vec<Vec<f64>>> {
    let axis = steps_between(mu3, 5.0, step)?;
    let mut out = Vec::new();
    for (i, &m1) in axis.iter().enumerate() {
        for &m2 in &axis[..=i] {
            out.push(vec![m1, m2, mu3]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mu: &[f64], n_reps: usize, seed: u64) -> MseConfig {
        MseConfig {
            mu_true: mu.to_vec(),
            sigma: 1.0,
            n_reps,
            seed,
            ranks: vec![1, mu.len()],
        }
    }

    #[test]
    fn errors_follow_the_selected_population() {
        // A, B, C have true means 3, 2, 1; B draws the largest value.
        let rec = score_replicate(
            &[3.0, 2.0, 1.0],
            &[2.1, 2.2, 1.8],
            1.0,
            &QuadratureSpec::default(),
            &OptimizerSettings::default(),
        )
        .unwrap();
        assert_eq!(rec.selected_labels, vec![1, 0, 2]);
        assert!((rec.errors_mle[0] - -0.2).abs() < 1e-12);
        assert!((rec.errors_mle[1] - 0.9).abs() < 1e-12);
        assert!((rec.errors_mle[2] - -0.8).abs() < 1e-12);
    }

    #[test]
    fn validation_names_fields() {
        let mut c = cfg(&[0.0, 0.0], 0, 1);
        match c.validate() {
            Err(Error::InvalidArgument { field, .. }) => assert_eq!(field, "n_reps"),
            other => panic!("{other:?}"),
        }
        c.n_reps = 100;
        c.ranks.clear();
        assert!(matches!(
            c.validate(),
            Err(Error::InvalidArgument { field: "ranks", .. })
        ));
        c.ranks = vec![3];
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = QuadratureSpec::default();
        let opt = OptimizerSettings::default();
        let a = run_mse(&cfg(&[1.0, 0.0, 0.5], 120, 4), &spec, &opt).unwrap();
        let b = run_mse(&cfg(&[1.0, 0.0, 0.5], 120, 4), &spec, &opt).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.failures, 0);
        assert_eq!(a.rows.len(), 4);
        let c = run_mse(&cfg(&[1.0, 0.0, 0.5], 120, 5), &spec, &opt).unwrap();
        assert_ne!(a.rows[0].mse, c.rows[0].mse);
    }

    #[test]
    fn mse_of_the_maximum_for_iid_pair() {
        // E[max(Z₁, Z₂)²] = 1 for iid standard normals.
        let s = run_mse(
            &cfg(&[0.0, 0.0], 10_000, 7),
            &QuadratureSpec::default(),
            &OptimizerSettings::default(),
        )
        .unwrap();
        let mle = &s.rows[0];
        assert_eq!((mle.rank, mle.estimator), (1, Estimator::Mle));
        assert!((mle.mse - 1.0).abs() < 0.05, "{}", mle.mse);
        assert!(s.rows[1].mse < mle.mse);
    }

    #[test]
    fn grids() {
        let g = p2_grid(0.5).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[10], vec![5.0, 0.0]);
        let g = p3_grid(4.0, 0.5).unwrap();
        assert_eq!(
            g,
            vec![
                vec![4.0, 4.0, 4.0],
                vec![4.5, 4.0, 4.0],
                vec![4.5, 4.5, 4.0],
                vec![5.0, 4.0, 4.0],
                vec![5.0, 4.5, 4.0],
                vec![5.0, 5.0, 4.0]
            ]
        );
        assert_eq!(p3_grid(0.0, 0.5).unwrap().len(), 66);
        assert!(p2_grid(0.0).is_err());
    }

    #[test]
    fn table_layout() {
        let s = MseSummary {
            rows: vec![MseRow {
                config_id: 2,
                mu_true: vec![1.0, 0.0],
                rank: 1,
                estimator: Estimator::Ccmle,
                mse: 0.5,
                se: 0.01,
                n_reps: 100,
            }],
            failures: 0,
            non_converged: 0,
        };
        let t = s.to_table();
        assert_eq!(
            t.columns,
            [
                "config_id",
                "mu_true_1",
                "mu_true_2",
                "rank",
                "estimator",
                "mse",
                "se",
                "n_reps"
            ]
        );
        assert_eq!(t.rows[0][4], Cell::Text("ccmle".into()));
    }
}
