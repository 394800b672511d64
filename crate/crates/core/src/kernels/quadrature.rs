use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances and limits for numerical integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Half-width of the integration window, in standard deviations.
    pub truncation_radius: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            truncation_radius: 8.0,
            max_subdivisions: 20_000,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(Error::invalid("abs_tol", "must be positive"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol", "must be positive"));
        }
        if !(self.truncation_radius >= 6.0) || !self.truncation_radius.is_finite() {
            return Err(Error::invalid("truncation_radius", "must be at least 6"));
        }
        if self.max_subdivisions < 10 {
            return Err(Error::invalid("max_subdivisions", "must be at least 10"));
        }
        Ok(())
    }

    pub(crate) fn tolerance(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut gauss = fc * WG[3];
    let mut kronrod = fc * WGK[7];
    let mut res_abs = kronrod.abs();
    let mut fv = [0.0; 14];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[2 * j] = f1;
        fv[2 * j + 1] = f2;
        kronrod += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv[2 * j] - mean).abs() + (fv[2 * j + 1] - mean).abs());
    }
    let value = kronrod * half;
    res_abs *= half.abs();
    res_asc *= half.abs();

    let mut err = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment { a, b, value, err }
}

/// Integrates `f` over `[-r, r]`, `r = spec.truncation_radius`.
///
/// Suitable for integrands already expressed in standard-deviation units
/// around their mass; see [`integrate_interval`] for an explicit window.
pub fn integrate<F: Fn(f64) -> f64>(f: F, spec: &QuadratureSpec) -> Result<(f64, f64)> {
    let r = spec.truncation_radius;
    integrate_interval(f, -r, r, spec)
}

/// Globally adaptive Gauss-Kronrod (7/15) quadrature over `[a, b]`.
///
/// Returns `(value, err_est)`. The segment with the largest error estimate
/// is bisected until the total estimate meets the tolerance.
pub fn integrate_interval<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    spec.validate()?;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("interval", "endpoints must be finite"));
    }
    if a == b {
        return Ok((0.0, 0.0));
    }

    let first = kronrod15(&f, a, b);
    let mut total = first.value;
    let mut total_err = first.err;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut subdivisions = 1;

    while total_err > spec.tolerance(total) {
        if subdivisions >= spec.max_subdivisions {
            return Err(Error::ConvergenceFailure {
                value: total,
                err_est: total_err,
                subdivisions,
            });
        }
        let worst = heap.pop().expect("heap holds every live segment");
        let mid = 0.5 * (worst.a + worst.b);
        let left = kronrod15(&f, worst.a, mid);
        let right = kronrod15(&f, mid, worst.b);
        total += left.value + right.value - worst.value;
        total_err += left.err + right.err - worst.err;
        heap.push(left);
        heap.push(right);
        subdivisions += 1;
    }

    // Re-sum to shed the drift of the running updates.
    let (value, err) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.err));
    Ok((value, err))
}

/// Gauss-Legendre panel with its spectral integration matrix.
///
/// `integ[i][j]` is the integral of the j-th Lagrange basis polynomial from
/// −1 to `nodes[i]`, so `integ · f` gives the running integral of the
/// interpolant at every node. `tail` projects node values onto the two
/// highest Legendre coefficients, a proxy for the resolution error.
pub(crate) struct PanelRule {
    pub nodes: [f64; PANEL_NODES],
    pub weights: [f64; PANEL_NODES],
    pub integ: [[f64; PANEL_NODES]; PANEL_NODES],
    pub tail: [[f64; PANEL_NODES]; 2],
}

pub(crate) const PANEL_NODES: usize = 16;

/// Legendre polynomials P_0..=P_n at x.
fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n > 0 {
        p[1] = x;
    }
    for k in 1..n {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
    }
    p
}

impl PanelRule {
    pub(crate) fn get() -> &'static PanelRule {
        static RULE: OnceLock<PanelRule> = OnceLock::new();
        RULE.get_or_init(PanelRule::build)
    }

    fn build() -> PanelRule {
        let n = PANEL_NODES;
        let mut nodes = [0.0; PANEL_NODES];
        let mut weights = [0.0; PANEL_NODES];
        for i in 0..n {
            // Newton iteration from the asymptotic root estimate; nodes come
            // out ascending.
            let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let p = legendre_all(n, x);
                let dp = n as f64 * (x * p[n] - p[n - 1]) / (x * x - 1.0);
                let step = p[n] / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let p = legendre_all(n, x);
            let dp = n as f64 * (x * p[n] - p[n - 1]) / (x * x - 1.0);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }

        // ℓ_j = Σ_k (2k+1)/2 · w_j P_k(x_j) P_k, exact for degree < n.
        let basis: Vec<Vec<f64>> = nodes.iter().map(|&x| legendre_all(n, x)).collect();
        let mut integ = [[0.0; PANEL_NODES]; PANEL_NODES];
        for i in 0..n {
            let p = &basis[i];
            // ∫_{-1}^{x} P_k = (P_{k+1} − P_{k−1}) / (2k+1), k ≥ 1
            let antideriv: Vec<f64> = (0..n)
                .map(|k| {
                    if k == 0 {
                        nodes[i] + 1.0
                    } else {
                        (p[k + 1] - p[k - 1]) / (2.0 * k as f64 + 1.0)
                    }
                })
                .collect();
            for j in 0..n {
                integ[i][j] = weights[j]
                    * (0..n)
                        .map(|k| (k as f64 + 0.5) * basis[j][k] * antideriv[k])
                        .sum::<f64>();
            }
        }
        let mut tail = [[0.0; PANEL_NODES]; 2];
        for (row, k) in [n - 2, n - 1].into_iter().enumerate() {
            for j in 0..n {
                tail[row][j] = (k as f64 + 0.5) * weights[j] * basis[j][k];
            }
        }
        PanelRule {
            nodes,
            weights,
            integ,
            tail,
        }
    }

    /// |c_{n−2}| + |c_{n−1}| for node values `f`.
    #[inline]
    pub(crate) fn tail_magnitude(&self, f: &[f64; PANEL_NODES]) -> f64 {
        self.tail
            .iter()
            .map(|row| row.iter().zip(f).map(|(t, v)| t * v).sum::<f64>().abs())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{std_normal_cdf, std_normal_pdf};

    #[test]
    fn density_integrates_to_one() {
        let (v, e) = integrate(std_normal_pdf, &QuadratureSpec::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-10, "{v}");
        assert!(e <= QuadratureSpec::default().tolerance(v));
    }

    #[test]
    fn odd_integrand_vanishes() {
        let (v, _) = integrate(|z| z * std_normal_pdf(z), &QuadratureSpec::default()).unwrap();
        assert!(v.abs() < 1e-10, "{v}");
    }

    #[test]
    fn probability_two_iid_normals_ordered() {
        let (v, _) = integrate(
            |z| std_normal_pdf(z) * std_normal_cdf(z),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!((v - 0.5).abs() < 1e-8, "{v}");
    }

    #[test]
    fn polynomial_exact_on_interval() {
        let (v, _) =
            integrate_interval(|x| 3.0 * x * x, 0.0, 2.0, &QuadratureSpec::default()).unwrap();
        assert!((v - 8.0).abs() < 1e-13);
    }

    #[test]
    fn budget_exhaustion_reports_best_value() {
        let spec = QuadratureSpec {
            abs_tol: 1e-14,
            rel_tol: 1e-14,
            max_subdivisions: 10,
            ..QuadratureSpec::default()
        };
        // |x|^0.1 has a derivative singularity at 0 that K15 cannot resolve
        // in ten panels.
        match integrate_interval(|x: f64| x.abs().powf(0.1), -1.0, 1.0, &spec) {
            Err(Error::ConvergenceFailure { value, err_est, .. }) => {
                assert!((value - 2.0 / 1.1).abs() < 1e-3);
                assert!(err_est > 0.0);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn spec_validation() {
        let bad = QuadratureSpec {
            truncation_radius: 5.0,
            ..QuadratureSpec::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(Error::InvalidArgument {
                field: "truncation_radius",
                ..
            })
        ));
        let bad = QuadratureSpec {
            max_subdivisions: 3,
            ..QuadratureSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn panel_rule_integrates_polynomials_cumulatively() {
        let rule = PanelRule::get();
        let w: f64 = rule.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
        // ∫_{-1}^{x} 5t^4 = x^5 + 1
        let f: [f64; PANEL_NODES] = std::array::from_fn(|j| 5.0 * rule.nodes[j].powi(4));
        for i in 0..PANEL_NODES {
            let got: f64 = (0..PANEL_NODES).map(|j| rule.integ[i][j] * f[j]).sum();
            assert!((got - (rule.nodes[i].powi(5) + 1.0)).abs() < 1e-13);
        }
        assert!(rule.tail_magnitude(&f) < 1e-13);
    }
}
