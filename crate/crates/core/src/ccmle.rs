//! The constrained conditional maximum likelihood estimator.
//!
//! Given observations ranked `x₁ > x₂ > … > x_p` with known `σ`, the
//! selection-conditioned log-likelihood is
//!
//! ```text
//! l(μ) = −‖x − μ‖² / (2σ²) − log P_μ(X₁ > … > X_p)
//! ```
//!
//! which is unbounded above on ℝᵖ; the estimator maximises it over the
//! monotone cone `Θ = {μ : μ₁ ≥ μ₂ ≥ … ≥ μ_p}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{inverse_mills, log_std_normal_sf, QuadratureSpec};
use crate::ordering::{grad_log_ordering_probability, log_ordering_probability, MeanConfig};

/// Observations ranked in descending order, with the permutation back to the
/// caller's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    x: Vec<f64>,
    sigma: f64,
    permutation: Vec<usize>,
    sorted: bool,
}

impl ObservedSample {
    /// Sorts `x` descending. Equal values keep their original relative
    /// order; the estimator pools them anyway.
    pub fn new(x: Vec<f64>, sigma: f64) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::invalid("x", "need at least two observations"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x", "observations must be finite"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be positive and finite"));
        }
        let mut permutation: Vec<usize> = (0..x.len()).collect();
        permutation.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
        let sorted = permutation.iter().enumerate().all(|(r, &i)| r == i);
        let ranked = permutation.iter().map(|&i| x[i]).collect();
        Ok(Self {
            x: ranked,
            sigma,
            permutation,
            sorted,
        })
    }

    /// Observations in rank order (largest first).
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn p(&self) -> usize {
        self.x.len()
    }

    /// `permutation()[r]` is the original label of the rank-`r` observation.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Whether the input already arrived in descending order.
    pub fn was_sorted(&self) -> bool {
        self.sorted
    }

    /// Maps a rank-ordered vector back to the original labels.
    pub fn to_original(&self, ranked: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; ranked.len()];
        for (r, &label) in self.permutation.iter().enumerate() {
            out[label] = ranked[r];
        }
        out
    }
}

/// `Θ = {μ : μ₁ ≥ μ₂ ≥ … ≥ μ_p}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonotoneCone {
    pub p: usize,
}

impl MonotoneCone {
    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.p && mu.windows(2).all(|w| w[0] >= w[1])
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        project_monotone(v)
    }
}

/// Euclidean projection onto the nonincreasing cone by pool-adjacent-violators.
///
/// Preserves the sum of `v`.
pub fn project_monotone(v: &[f64]) -> Vec<f64> {
    // (sum, count) per block; block means are nonincreasing left to right.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &value in v {
        blocks.push((value, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 >= s1 / n1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, n0 + n1);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s / n as f64, n))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    ClosedFormPooled,
    ClosedFormInterior,
    Numeric,
}

impl std::fmt::Display for SolverPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverPath::ClosedFormPooled => "closed_form_pooled",
            SolverPath::ClosedFormInterior => "closed_form_interior",
            SolverPath::Numeric => "numeric",
        })
    }
}

/// Settings for the projected ascent solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Stop once the projected-gradient norm drops to this.
    pub kkt_tol: f64,
    pub max_iterations: usize,
    /// First trial step; `σ²` when unset.
    pub initial_step: Option<f64>,
    pub backtrack: f64,
    /// Adjacent estimates closer than this are pooled; `1e-6·σ` when unset.
    pub tie_tol: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-7,
            max_iterations: 500,
            initial_step: None,
            backtrack: 0.5,
            tie_tol: None,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0) {
            return Err(Error::invalid("kkt_tol", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be at least 1"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::invalid("backtrack", "must lie in (0, 1)"));
        }
        if matches!(self.initial_step, Some(t) if !(t > 0.0)) {
            return Err(Error::invalid("initial_step", "must be positive"));
        }
        if matches!(self.tie_tol, Some(t) if !(t >= 0.0)) {
            return Err(Error::invalid("tie_tol", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Outcome of an estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmleResult {
    /// Estimates in the caller's original label order.
    pub mu_hat: Vec<f64>,
    /// Estimates in rank order; nonincreasing.
    pub mu_hat_ranked: Vec<f64>,
    /// Maximal runs of tied estimates, by rank, as original labels.
    pub groups: Vec<Vec<usize>>,
    pub path: SolverPath,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub log_likelihood: f64,
    /// `permutation[r]` is the original label of rank `r`.
    pub permutation: Vec<usize>,
    /// False when the iteration limit was hit; `mu_hat` is then the best
    /// iterate found.
    pub converged: bool,
}

/// `−‖x − μ‖²/(2σ²) − log P_μ(X₁ > … > X_p)`, additive constant dropped.
/// `mu` is in rank order.
pub fn conditional_log_likelihood(
    mu: &[f64],
    obs: &ObservedSample,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if mu.len() != obs.p() {
        return Err(Error::invalid("mu", "length differs from the sample"));
    }
    let cfg = MeanConfig::new(mu.to_vec(), obs.sigma)?;
    let log_p = log_ordering_probability(&cfg, spec)?;
    Ok(-0.5 * sum_sq_diff(&obs.x, mu) / (obs.sigma * obs.sigma) - log_p)
}

fn sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, m)| (x - m) * (x - m)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Pooling threshold `2σ/√π` for two populations.
pub fn pooling_threshold(sigma: f64) -> f64 {
    2.0 * sigma / std::f64::consts::PI.sqrt()
}

/// `h₁(μ₁) − h₂(μ₁)` for the two-population stationarity equation
/// `g(√(2/σ²)(x̄ − μ₁)) = √(2/σ²)(x₁ − μ₁)`.
pub fn stationarity_residual_p2(obs: &ObservedSample, mu1: f64) -> f64 {
    let scale = std::f64::consts::SQRT_2 / obs.sigma;
    let xbar = 0.5 * (obs.x[0] + obs.x[1]);
    inverse_mills(scale * (xbar - mu1)) - scale * (obs.x[0] - mu1)
}

/// Exact solution for two populations.
///
/// Pooled at `(x̄, x̄)` when `x₁ − x₂ ≤ 2σ/√π`; otherwise the unique interior
/// stationary point, found by bisection on the scaled offset from `x̄`.
pub fn ccmle_p2(obs: &ObservedSample) -> Result<CcmleResult> {
    if obs.p() != 2 {
        return Err(Error::invalid(
            "x",
            "closed form requires exactly two populations",
        ));
    }
    let (x1, x2, sigma) = (obs.x[0], obs.x[1], obs.sigma);
    let xbar = 0.5 * (x1 + x2);
    let gap = x1 - x2;
    // Absorb the rounding of x₁ − x₂ so the inclusive boundary stays pooled.
    let slack = 4.0 * f64::EPSILON * (x1.abs() + x2.abs() + pooling_threshold(sigma));

    let (ranked, path, iterations, residual) = if gap <= pooling_threshold(sigma) + slack {
        (vec![xbar, xbar], SolverPath::ClosedFormPooled, 0, 0.0)
    } else {
        // y = √2(μ₁ − x̄)/σ ∈ [0, D] solves D − y = g(−y), D = gap/(σ√2).
        let d = gap / (sigma * std::f64::consts::SQRT_2);
        let excess = |y: f64| d - y - inverse_mills(-y);
        let (mut lo, mut hi) = (0.0, d);
        if !(excess(lo) > 0.0 && excess(hi) <= 0.0) {
            return Err(Error::RootBracketFailure(format!(
                "no sign change on [0, {d}] for gap {gap}"
            )));
        }
        let mut iterations = 0;
        while iterations < 200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        let y = if excess(lo).abs() <= excess(hi).abs() {
            lo
        } else {
            hi
        };
        let offset = y * sigma / std::f64::consts::SQRT_2;
        let ranked = vec![xbar + offset, xbar - offset];
        let residual = stationarity_residual_p2(obs, ranked[0]).abs();
        (ranked, SolverPath::ClosedFormInterior, iterations, residual)
    };

    let u = (ranked[1] - ranked[0]) / (sigma * std::f64::consts::SQRT_2);
    let log_likelihood =
        -0.5 * sum_sq_diff(&obs.x, &ranked) / (sigma * sigma) - log_std_normal_sf(u);
    Ok(finish(
        obs,
        ranked,
        path,
        iterations,
        residual,
        log_likelihood,
        true,
    ))
}

fn finish(
    obs: &ObservedSample,
    ranked: Vec<f64>,
    path: SolverPath,
    iterations: usize,
    kkt_residual: f64,
    log_likelihood: f64,
    converged: bool,
) -> CcmleResult {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (r, &label) in obs.permutation.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if ranked[r - 1] == ranked[r] => g.push(label),
            _ => groups.push(vec![label]),
        }
    }
    CcmleResult {
        mu_hat: obs.to_original(&ranked),
        mu_hat_ranked: ranked,
        groups,
        path,
        iterations,
        kkt_residual,
        log_likelihood,
        permutation: obs.permutation.clone(),
        converged,
    }
}

/// `∇f(x)` where `f = log P`, projected onto the sum-zero subspace. The
/// probability depends on `μ` only through its differences, so the
/// projection removes finite-difference noise and nothing else.
fn grad_log_prob(mu: &[f64], sigma: f64, spec: &QuadratureSpec) -> Result<Vec<f64>> {
    let cfg = MeanConfig::new(mu.to_vec(), sigma)?;
    let mut g = grad_log_ordering_probability(&cfg, spec, None)?;
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter_mut().for_each(|v| *v -= mean);
    Ok(g)
}

/// Starting point: maximiser of the likelihood with `log P` linearised at
/// `x`, i.e. `x − σ²∇f(x)`, projected onto `Θ`.
pub fn taylor_start(obs: &ObservedSample, spec: &QuadratureSpec) -> Result<Vec<f64>> {
    let s2 = obs.sigma * obs.sigma;
    let g = grad_log_prob(&obs.x, obs.sigma, spec)?;
    let raw: Vec<f64> = obs.x.iter().zip(&g).map(|(x, d)| x - s2 * d).collect();
    Ok(project_monotone(&raw))
}

/// The estimator. Two populations take the exact path; otherwise
/// [`ccmle_numeric`].
pub fn ccmle(
    obs: &ObservedSample,
    spec: &QuadratureSpec,
    opt: &OptimizerSettings,
) -> Result<CcmleResult> {
    if obs.p() == 2 {
        ccmle_p2(obs)
    } else {
        ccmle_numeric(obs, spec, opt)
    }
}

/// Projected gradient ascent over `Θ` from [`taylor_start`], for any `p`.
///
/// Steps are `μ ← Π_Θ(μ + t∇l(μ))` with Armijo backtracking; the trial step
/// is the Barzilai-Borwein length from the previous iteration. On
/// convergence, adjacent estimates within `tie_tol` are merged into their
/// mean, provided this costs no more than `kkt_tol` in likelihood.
pub fn ccmle_numeric(
    obs: &ObservedSample,
    spec: &QuadratureSpec,
    opt: &OptimizerSettings,
) -> Result<CcmleResult> {
    opt.validate()?;
    spec.validate()?;
    let sigma = obs.sigma;
    let s2 = sigma * sigma;
    let (min_step, max_step) = (1e-12 * s2, 1e4 * s2);

    let loglik = |mu: &[f64]| conditional_log_likelihood(mu, obs, spec);
    let gradient = |mu: &[f64]| -> Result<Vec<f64>> {
        let g = grad_log_prob(mu, sigma, spec)?;
        Ok(obs
            .x
            .iter()
            .zip(mu)
            .zip(&g)
            .map(|((x, m), d)| (x - m) / s2 - d)
            .collect())
    };
    let kkt = |mu: &[f64], grad: &[f64]| -> f64 {
        let trial: Vec<f64> = mu.iter().zip(grad).map(|(m, g)| m + s2 * g).collect();
        let moved: Vec<f64> = project_monotone(&trial)
            .iter()
            .zip(mu)
            .map(|(p, m)| (p - m) / s2)
            .collect();
        norm(&moved)
    };

    let mut mu = taylor_start(obs, spec)?;
    let mut ll = loglik(&mu)?;
    let mut grad = gradient(&mu)?;
    let mut step = opt.initial_step.unwrap_or(s2);
    let mut residual = kkt(&mu, &grad);
    let mut iterations = 0;

    while residual > opt.kkt_tol && iterations < opt.max_iterations {
        iterations += 1;
        let mut t = step;
        let accepted = loop {
            let trial: Vec<f64> = mu.iter().zip(&grad).map(|(m, g)| m + t * g).collect();
            let cand = project_monotone(&trial);
            let delta: Vec<f64> = cand.iter().zip(&mu).map(|(c, m)| c - m).collect();
            let cand_ll = loglik(&cand)?;
            if cand_ll >= ll + 1e-4 * dot(&grad, &delta) {
                break Some((cand, cand_ll, delta));
            }
            t *= opt.backtrack;
            if t < min_step {
                break None;
            }
        };
        let Some((cand, cand_ll, delta)) = accepted else {
            // No ascent at any step length: the gradient is at noise level.
            break;
        };
        let cand_grad = gradient(&cand)?;
        let change: Vec<f64> = cand_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let curvature = dot(&delta, &change);
        step = if curvature < 0.0 {
            (dot(&delta, &delta) / -curvature).clamp(min_step, max_step)
        } else {
            (2.0 * t).min(max_step)
        };
        mu = cand;
        ll = cand_ll;
        grad = cand_grad;
        residual = kkt(&mu, &grad);
    }
    let converged = residual <= opt.kkt_tol;

    let tie_tol = opt.tie_tol.unwrap_or(1e-6 * sigma);
    let snapped = snap_ties(&mu, tie_tol);
    if snapped != mu {
        let snapped_ll = loglik(&snapped)?;
        if snapped_ll >= ll - opt.kkt_tol {
            mu = snapped;
            ll = snapped_ll;
        }
    }
    Ok(finish(
        obs,
        mu,
        SolverPath::Numeric,
        iterations,
        residual,
        ll,
        converged,
    ))
}

/// Replaces each maximal run of adjacent entries closer than `tol` by its
/// mean. The result is exactly nonincreasing when the input is.
fn snap_ties(mu: &[f64], tol: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(mu.len());
    let mut start = 0;
    for end in 1..=mu.len() {
        if end == mu.len() || mu[end - 1] - mu[end] >= tol {
            let run = &mu[start..end];
            if run.len() == 1 {
                out.push(run[0]);
            } else {
                let mean = run.iter().sum::<f64>() / run.len() as f64;
                out.extend(std::iter::repeat_n(mean, run.len()));
            }
            start = end;
        }
    }
    // Merged means can invert against a neighbour by rounding; PAVA repairs it.
    if out.windows(2).all(|w| w[0] >= w[1]) {
        out
    } else {
        project_monotone(&out)
    }
}
