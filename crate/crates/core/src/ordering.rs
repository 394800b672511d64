//! Probability of the ranking event `X₁ > X₂ > … > X_p` for independent
//! normals with means `μ` and a common standard deviation `σ`.
//!
//! For `p ≥ 3` the probability is evaluated by conditioning on one variable
//! at a time. With `Hₖ(t) = P(t > X_k > X_{k+1} > … > X_p)`,
//!
//! ```text
//! H_p(t) = Φ((t − μ_p)/σ)
//! H_k(t) = ∫_{−∞}^{t} σ⁻¹ φ((s − μ_k)/σ) H_{k+1}(s) ds
//! P      = ∫ σ⁻¹ φ((t − μ₁)/σ) H₂(t) dt
//! ```
//!
//! which reduces to the familiar middle-variable conditioning when `p = 3`.
//! Each `Hₖ` is tabulated on one shared set of Gauss-Legendre panels covering
//! `[min μ − Rσ, max μ + Rσ]`, with running integrals taken through the
//! panel's spectral integration matrix, so the cost is linear in `p`.
//!
//! A direct pass handles the usual case. When the probability is small
//! (the ranking contradicts the means) a second pass runs entirely in the
//! log domain on finer panels so that `log P` stays accurate after `P`
//! itself has underflowed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    inverse_mills, log_add_exp, log_std_normal_cdf, log_std_normal_pdf, log_std_normal_sf,
    std_normal_cdf, std_normal_pdf, std_normal_sf, PanelRule, QuadratureSpec, PANEL_NODES,
};

/// Population means and the common standard deviation of one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanConfig {
    mu: Vec<f64>,
    sigma: f64,
}

impl MeanConfig {
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::invalid("mu", "need at least two populations"));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mu", "entries must be finite"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be positive and finite"));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbMethod {
    ClosedFormP2,
    Quadrature,
    MonteCarlo,
}

impl std::fmt::Display for ProbMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProbMethod::ClosedFormP2 => "closed_form_p2",
            ProbMethod::Quadrature => "quadrature",
            ProbMethod::MonteCarlo => "monte_carlo",
        })
    }
}

/// An ordering probability together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingProb {
    pub value: f64,
    pub log_value: f64,
    pub method: ProbMethod,
    pub err_est: f64,
    /// `value` fell below 1e-300; only `log_value` is meaningful.
    pub underflow: bool,
    /// Monte Carlo fraction was exactly 0 or 1.
    pub degenerate: bool,
}

const UNDERFLOW_LIMIT: f64 = 1e-300;
/// Below this the direct pass hands over to the log-domain pass.
const DIRECT_PASS_FLOOR: f64 = 1e-6;
const DIRECT_PANEL_WIDTH: f64 = 0.5;

/// `P_μ(X₁ > … > X_p)`: closed form for `p = 2`, panel recursion otherwise.
pub fn ordering_probability(cfg: &MeanConfig, spec: &QuadratureSpec) -> Result<OrderingProb> {
    if cfg.p() == 2 {
        Ok(closed_form_p2(cfg))
    } else {
        quadrature_ordering_probability(cfg, spec)
    }
}

/// `log P_μ(X₁ > … > X_p)`.
pub fn log_ordering_probability(cfg: &MeanConfig, spec: &QuadratureSpec) -> Result<f64> {
    ordering_probability(cfg, spec).map(|p| p.log_value)
}

fn closed_form_p2(cfg: &MeanConfig) -> OrderingProb {
    let u = (cfg.mu[1] - cfg.mu[0]) / (cfg.sigma * std::f64::consts::SQRT_2);
    let value = std_normal_sf(u);
    OrderingProb {
        value,
        log_value: log_std_normal_sf(u),
        method: ProbMethod::ClosedFormP2,
        err_est: f64::EPSILON * value,
        underflow: value < UNDERFLOW_LIMIT,
        degenerate: false,
    }
}

/// Panel-recursion evaluation for any `p ≥ 2` (including `p = 2`, which
/// makes it checkable against the closed form).
pub fn quadrature_ordering_probability(
    cfg: &MeanConfig,
    spec: &QuadratureSpec,
) -> Result<OrderingProb> {
    spec.validate()?;
    let grid = StandardGrid::new(cfg, spec.truncation_radius);
    let truncation = 2.0 * cfg.p() as f64 * std_normal_sf(spec.truncation_radius);

    let direct = refine(&grid, DIRECT_PANEL_WIDTH, spec, |panels| {
        let (value, err) = grid.direct_pass(panels);
        let err = err + truncation;
        (value, err, err <= spec.tolerance(value))
    });
    if let Ok((value, err_est)) = direct {
        if value >= DIRECT_PASS_FLOOR {
            return Ok(OrderingProb {
                value,
                log_value: value.ln(),
                method: ProbMethod::Quadrature,
                err_est,
                underflow: false,
                degenerate: false,
            });
        }
    }

    // Small probability: integrand log-slopes can reach ~p·(span + R), so
    // the panels shrink until e^{slope·width} stays modest.
    let steep = (cfg.p() - 1) as f64 * (grid.span() + spec.truncation_radius) + 2.0;
    let width = DIRECT_PANEL_WIDTH.min(3.0 / steep);
    let (log_value, rel_err) = refine(&grid, width, spec, |panels| {
        let (log_value, rel_err) = grid.log_pass(panels);
        (log_value, rel_err, rel_err <= spec.rel_tol)
    })?;
    let value = log_value.exp();
    Ok(OrderingProb {
        value,
        log_value,
        method: ProbMethod::Quadrature,
        err_est: rel_err * value + truncation.min(value),
        underflow: value < UNDERFLOW_LIMIT,
        degenerate: false,
    })
}

/// Halves the panel width until `pass` reports success or the panel budget
/// (`max_subdivisions`) runs out.
fn refine<F>(grid: &StandardGrid, width: f64, spec: &QuadratureSpec, pass: F) -> Result<(f64, f64)>
where
    F: Fn(usize) -> (f64, f64, bool),
{
    let mut panels = ((grid.upper - grid.lower) / width).ceil().max(1.0) as usize;
    if panels > spec.max_subdivisions {
        return Err(Error::ConvergenceFailure {
            value: f64::NAN,
            err_est: f64::INFINITY,
            subdivisions: 0,
        });
    }
    loop {
        let (value, err, ok) = pass(panels);
        if ok {
            return Ok((value, err));
        }
        if panels * 2 > spec.max_subdivisions {
            return Err(Error::ConvergenceFailure {
                value,
                err_est: err,
                subdivisions: panels,
            });
        }
        panels *= 2;
    }
}

/// Means in standard-deviation units, shifted so the largest is zero.
struct StandardGrid {
    means: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl StandardGrid {
    fn new(cfg: &MeanConfig, radius: f64) -> Self {
        let top = cfg.mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let means: Vec<f64> = cfg.mu.iter().map(|m| (m - top) / cfg.sigma).collect();
        let bottom = means.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            means,
            lower: bottom - radius,
            upper: radius,
        }
    }

    fn span(&self) -> f64 {
        -self.means.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn nodes(&self, panels: usize) -> (Vec<f64>, f64) {
        let rule = PanelRule::get();
        let width = (self.upper - self.lower) / panels as f64;
        let mut out = Vec::with_capacity(panels * PANEL_NODES);
        for b in 0..panels {
            let left = self.lower + width * b as f64;
            out.extend(rule.nodes.iter().map(|x| left + 0.5 * width * (1.0 + x)));
        }
        (out, width)
    }

    /// Returns `(P, error proxy)`.
    fn direct_pass(&self, panels: usize) -> (f64, f64) {
        let rule = PanelRule::get();
        let p = self.means.len();
        let (nodes, width) = self.nodes(panels);
        let half = 0.5 * width;
        let mut h: Vec<f64> = nodes
            .iter()
            .map(|&s| std_normal_cdf(s - self.means[p - 1]))
            .collect();
        let mut next = vec![0.0; h.len()];
        let mut err = 0.0;
        let mut f = [0.0; PANEL_NODES];

        for k in (1..p - 1).rev() {
            let mut acc = 0.0;
            for b in 0..panels {
                let base = b * PANEL_NODES;
                for j in 0..PANEL_NODES {
                    f[j] = std_normal_pdf(nodes[base + j] - self.means[k]) * h[base + j];
                }
                for i in 0..PANEL_NODES {
                    let partial: f64 = rule.integ[i].iter().zip(&f).map(|(a, v)| a * v).sum();
                    next[base + i] = acc + half * partial;
                }
                acc += half * rule.weights.iter().zip(&f).map(|(a, v)| a * v).sum::<f64>();
                err += half * rule.tail_magnitude(&f);
            }
            std::mem::swap(&mut h, &mut next);
        }

        let mut total = 0.0;
        for b in 0..panels {
            let base = b * PANEL_NODES;
            for j in 0..PANEL_NODES {
                f[j] = std_normal_pdf(nodes[base + j] - self.means[0]) * h[base + j];
            }
            total += half * rule.weights.iter().zip(&f).map(|(a, v)| a * v).sum::<f64>();
            err += half * rule.tail_magnitude(&f);
        }
        (total, err)
    }

    /// Returns `(log P, relative error proxy)`.
    fn log_pass(&self, panels: usize) -> (f64, f64) {
        let rule = PanelRule::get();
        let p = self.means.len();
        let (nodes, width) = self.nodes(panels);
        let half = 0.5 * width;
        let mut logh: Vec<f64> = nodes
            .iter()
            .map(|&s| log_std_normal_cdf(s - self.means[p - 1]))
            .collect();
        let mut next = vec![0.0; logh.len()];
        let mut l = [0.0; PANEL_NODES];
        let mut e = [0.0; PANEL_NODES];

        for k in (1..p - 1).rev() {
            let mut acc = f64::NEG_INFINITY;
            for b in 0..panels {
                let base = b * PANEL_NODES;
                let peak =
                    scaled_integrand(&nodes[base..], &logh[base..], self.means[k], &mut l, &mut e);
                if peak == f64::NEG_INFINITY {
                    next[base..base + PANEL_NODES].fill(acc);
                    continue;
                }
                for i in 0..PANEL_NODES {
                    let partial: f64 = rule.integ[i].iter().zip(&e).map(|(a, v)| a * v).sum();
                    next[base + i] = if partial > 0.0 {
                        log_add_exp(acc, peak + (half * partial).ln())
                    } else {
                        acc
                    };
                }
                let total: f64 = rule.weights.iter().zip(&e).map(|(a, v)| a * v).sum();
                acc = log_add_exp(acc, peak + (half * total).ln());
            }
            std::mem::swap(&mut logh, &mut next);
        }

        let mut log_total = f64::NEG_INFINITY;
        let mut pieces = Vec::with_capacity(panels);
        for b in 0..panels {
            let base = b * PANEL_NODES;
            let peak =
                scaled_integrand(&nodes[base..], &logh[base..], self.means[0], &mut l, &mut e);
            if peak == f64::NEG_INFINITY {
                continue;
            }
            let total: f64 = rule.weights.iter().zip(&e).map(|(a, v)| a * v).sum();
            let log_piece = peak + (half * total).ln();
            log_total = log_add_exp(log_total, log_piece);
            pieces.push((peak, half * rule.tail_magnitude(&e)));
        }
        let rel_err = pieces
            .iter()
            .map(|(peak, tail)| (peak - log_total).exp() * tail)
            .sum();
        (log_total, rel_err)
    }
}

/// Fills `l` with the log integrand at one panel's nodes and `e` with
/// `exp(l − max l)`; returns `max l`.
fn scaled_integrand(
    nodes: &[f64],
    logh: &[f64],
    mean: f64,
    l: &mut [f64; PANEL_NODES],
    e: &mut [f64; PANEL_NODES],
) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    for j in 0..PANEL_NODES {
        l[j] = log_std_normal_pdf(nodes[j] - mean) + logh[j];
        peak = peak.max(l[j]);
    }
    if peak > f64::NEG_INFINITY {
        for j in 0..PANEL_NODES {
            e[j] = (l[j] - peak).exp();
        }
    }
    peak
}

const MC_BLOCK: usize = 1 << 16;

/// Monte Carlo estimate of the ordering probability.
///
/// Draws are split into fixed-size blocks; block `b` uses ChaCha stream `b`
/// under `seed`, so the result does not depend on how many threads run.
pub fn mc_ordering_probability(
    cfg: &MeanConfig,
    n_draws: usize,
    seed: u64,
) -> Result<OrderingProb> {
    if n_draws < 10_000 {
        return Err(Error::invalid("n_draws", "must be at least 10^4"));
    }
    let blocks = n_draws.div_ceil(MC_BLOCK);
    let hits: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let draws = MC_BLOCK.min(n_draws - b * MC_BLOCK);
            let mut count = 0u64;
            'draw: for _ in 0..draws {
                let mut prev = f64::INFINITY;
                for &m in &cfg.mu {
                    let z: f64 = rng.sample(StandardNormal);
                    let x = m + cfg.sigma * z;
                    if x >= prev {
                        continue 'draw;
                    }
                    prev = x;
                }
                count += 1;
            }
            count
        })
        .sum();

    let n = n_draws as f64;
    let value = hits as f64 / n;
    let degenerate = hits == 0 || hits == n_draws as u64;
    Ok(OrderingProb {
        value,
        log_value: value.ln(),
        method: ProbMethod::MonteCarlo,
        err_est: (value * (1.0 - value) / n).sqrt(),
        underflow: false,
        degenerate,
    })
}

/// Gradient of `log P` with respect to `μ`.
///
/// Analytic for `p = 2`; central differences with step `h` (default
/// `1e-5·σ`) otherwise.
pub fn grad_log_ordering_probability(
    cfg: &MeanConfig,
    spec: &QuadratureSpec,
    h: Option<f64>,
) -> Result<Vec<f64>> {
    if cfg.p() == 2 {
        let scale = cfg.sigma * std::f64::consts::SQRT_2;
        let g = inverse_mills((cfg.mu[1] - cfg.mu[0]) / scale) / scale;
        return Ok(vec![g, -g]);
    }
    fd_grad_log_ordering_probability(cfg, spec, h)
}

/// Central-difference gradient of `log P` through the quadrature path, for
/// any `p`.
pub fn fd_grad_log_ordering_probability(
    cfg: &MeanConfig,
    spec: &QuadratureSpec,
    h: Option<f64>,
) -> Result<Vec<f64>> {
    let h = h.unwrap_or(1e-5 * cfg.sigma);
    if !(h > 0.0) {
        return Err(Error::invalid(
            "h",
            "finite-difference step must be positive",
        ));
    }
    let mut shifted = cfg.clone();
    (0..cfg.p())
        .map(|i| {
            shifted.mu[i] = cfg.mu[i] + h;
            let up = quadrature_ordering_probability(&shifted, spec)?.log_value;
            shifted.mu[i] = cfg.mu[i] - h;
            let down = quadrature_ordering_probability(&shifted, spec)?.log_value;
            shifted.mu[i] = cfg.mu[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mu: &[f64], sigma: f64) -> MeanConfig {
        MeanConfig::new(mu.to_vec(), sigma).unwrap()
    }

    fn prob(mu: &[f64], sigma: f64) -> OrderingProb {
        ordering_probability(&cfg(mu, sigma), &QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(MeanConfig::new(vec![1.0], 1.0).is_err());
        assert!(MeanConfig::new(vec![1.0, f64::NAN], 1.0).is_err());
        assert!(MeanConfig::new(vec![1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn exchangeable_means() {
        assert_eq!(prob(&[0.0, 0.0], 1.0).value, 0.5);
        let p3 = prob(&[0.0, 0.0, 0.0], 1.0);
        assert_eq!(p3.method, ProbMethod::Quadrature);
        assert!((p3.value - 1.0 / 6.0).abs() < 1e-8, "{}", p3.value);
        assert!((prob(&[0.0; 4], 1.0).value - 1.0 / 24.0).abs() < 1e-8);
        assert!((prob(&[3.0; 5], 2.0).value - 1.0 / 120.0).abs() < 1e-8);
    }

    #[test]
    fn two_population_closed_form() {
        let p = prob(&[1.0, 0.0], 1.0);
        assert_eq!(p.method, ProbMethod::ClosedFormP2);
        assert!((p.value - 0.760_249_9).abs() < 1e-7);
        assert!((p.log_value - p.value.ln()).abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form_for_p2() {
        for mu in [[1.0, 0.0], [0.0, 0.0], [-2.0, 1.5], [4.0, -3.0]] {
            let c = cfg(&mu, 1.3);
            let exact = closed_form_p2(&c);
            let quad = quadrature_ordering_probability(&c, &QuadratureSpec::default()).unwrap();
            assert!((quad.value - exact.value).abs() < 1e-13, "{mu:?}");
            assert!((quad.log_value - exact.log_value).abs() < 1e-10, "{mu:?}");
        }
    }

    #[test]
    fn log_pass_tracks_underflowing_probabilities() {
        // p = 2 has a closed form to compare with even far into the tail.
        for gap in [8.0, 20.0, 45.0, 60.0] {
            let c = cfg(&[-gap, 0.0], 1.0);
            let exact = closed_form_p2(&c);
            let quad = quadrature_ordering_probability(&c, &QuadratureSpec::default()).unwrap();
            let tol = 1e-7 * exact.log_value.abs();
            assert!(
                (quad.log_value - exact.log_value).abs() < tol,
                "gap {gap}: {} vs {}",
                quad.log_value,
                exact.log_value
            );
        }
        let far =
            quadrature_ordering_probability(&cfg(&[-60.0, 0.0], 1.0), &QuadratureSpec::default())
                .unwrap();
        assert!(far.underflow);
        assert!(far.log_value.is_finite());
    }

    #[test]
    fn reversed_p3_is_small_but_finite() {
        let p = prob(&[-30.0, 0.0, 30.0], 1.0);
        assert!(p.underflow);
        assert!(p.log_value.is_finite() && p.log_value < -690.0);
        assert!((p.log_value - p.value.ln()).abs() < 1e-9 || p.value == 0.0);
    }

    #[test]
    fn monte_carlo_symmetric() {
        let p = mc_ordering_probability(&cfg(&[0.0, 0.0], 1.0), 1_000_000, 11).unwrap();
        assert!((p.value - 0.5).abs() < 0.0015);
        assert!(!p.degenerate);
    }

    #[test]
    fn monte_carlo_separated_p2() {
        let c = cfg(&[5.0, 0.0], 1.0);
        let exact = closed_form_p2(&c).value;
        assert!((exact - 0.99979).abs() < 1e-5);
        let p = mc_ordering_probability(&c, 1_000_000, 5).unwrap();
        assert!((p.value - exact).abs() <= 3.0 * p.err_est);
    }

    #[test]
    fn monte_carlo_deterministic_and_checked() {
        let c = cfg(&[0.3, 0.1, -0.2], 1.0);
        let a = mc_ordering_probability(&c, 50_000, 99).unwrap();
        let b = mc_ordering_probability(&c, 50_000, 99).unwrap();
        assert_eq!(a, b);
        assert!(mc_ordering_probability(&c, 9_999, 1).is_err());
        let d = mc_ordering_probability(&cfg(&[-50.0, 50.0], 1.0), 10_000, 1).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn analytic_gradient_p2() {
        let spec = QuadratureSpec::default();
        // g(−1/√2)/√2, evaluated in 40-digit arithmetic
        let want = 0.288_978_181_372_631_4;
        let g = grad_log_ordering_probability(&cfg(&[1.0, 0.0], 1.0), &spec, None).unwrap();
        assert!(
            (g[0] - want).abs() < 1e-12 && (g[1] + want).abs() < 1e-12,
            "{g:?}"
        );
        let g = grad_log_ordering_probability(&cfg(&[0.0, 0.0], 1.0), &spec, None).unwrap();
        assert!((g[0] - 0.5642).abs() < 1e-4);
        assert!((g[0] - inverse_mills(0.0) / std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(g[0], -g[1]);
    }

    #[test]
    fn fd_gradient_sums_to_zero() {
        let spec = QuadratureSpec::default();
        let g =
            grad_log_ordering_probability(&cfg(&[1.0, 0.4, 0.5, -1.0], 0.8), &spec, None).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-6, "{g:?}");
        assert!(g[0] > 0.0 && g[3] < 0.0);
    }

    #[test]
    fn budget_too_small_is_a_convergence_failure() {
        let spec = QuadratureSpec {
            max_subdivisions: 10,
            ..QuadratureSpec::default()
        };
        let err = quadrature_ordering_probability(&cfg(&[-40.0, 0.0, 40.0], 1.0), &spec);
        assert!(
            matches!(err, Err(Error::ConvergenceFailure { .. })),
            "{err:?}"
        );
    }
}
