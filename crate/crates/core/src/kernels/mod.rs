//! Scalar normal-distribution kernels and one-dimensional quadrature.
//!
//! Everything here is a pure function of its arguments.

mod quadrature;

pub use quadrature::{integrate, integrate_interval, QuadratureSpec};
pub(crate) use quadrature::{PanelRule, PANEL_NODES};

use libm::erfc;

pub(crate) const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this point the inverse Mills ratio is evaluated from its continued
/// fraction rather than as a quotient of density and upper tail.
const MILLS_CF_SWITCH: f64 = 5.0;
/// Below this point `log Φ` is evaluated through the Mills ratio.
const LOG_CDF_TAIL_SWITCH: f64 = -5.0;

/// Standard normal density φ(z).
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// log φ(z).
#[inline]
pub fn log_std_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal distribution function Φ(z).
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(z), without cancellation for large positive `z`.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * std::f64::consts::FRAC_1_SQRT_2)
}

/// log Φ(z), accurate deep into the lower tail (z ≈ −1e150 still finite).
pub fn log_std_normal_cdf(z: f64) -> f64 {
    if z > LOG_CDF_TAIL_SWITCH {
        if z > 0.0 {
            (-std_normal_sf(z)).ln_1p()
        } else {
            std_normal_cdf(z).ln()
        }
    } else {
        // Φ(z) = φ(z) / g(−z)
        log_std_normal_pdf(z) - inverse_mills(-z).ln()
    }
}

/// log(1 − Φ(z)).
#[inline]
pub fn log_std_normal_sf(z: f64) -> f64 {
    log_std_normal_cdf(-z)
}

/// Standard normal quantile Φ⁻¹(p) for p in (0, 1).
///
/// Acklam's rational approximation (relative error ~1e-9) polished by one
/// Halley step against [`std_normal_cdf`].
pub fn std_normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    // Halley: e = Φ(x) − p, u = e/φ(x)
    let e = if x < 0.0 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - std_normal_sf(x)
    };
    let u = e / std_normal_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Inverse Mills ratio g(z) = φ(z) / (1 − Φ(z)), the standard normal hazard.
///
/// The direct quotient is used up to z = 5; beyond that the Laplace continued
/// fraction for the Mills ratio takes over, since the upper tail loses
/// relative accuracy long before the quotient overflows.
pub fn inverse_mills(z: f64) -> f64 {
    if z > MILLS_CF_SWITCH {
        inverse_mills_cf(z)
    } else {
        std_normal_pdf(z) / std_normal_sf(z)
    }
}

/// g(z) = z + 1/(z + 2/(z + 3/(z + ...))), evaluated with modified Lentz.
fn inverse_mills_cf(z: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..5000 {
        let a = k as f64;
        d = z + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = z + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    f
}

/// log(e^a + e^b) with −∞ as the additive identity.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pdf_values() {
        assert!(close(std_normal_pdf(0.0), 0.398_942_280_4, 1e-10));
        assert!(close(std_normal_pdf(1.0), 0.241_970_724_5, 1e-10));
        for z in [-3.2, -0.7, 0.1, 2.5, 9.0] {
            assert_eq!(std_normal_pdf(z), std_normal_pdf(-z));
            assert!(std_normal_pdf(z) > 0.0);
        }
    }

    #[test]
    fn cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!(close(std_normal_cdf(1.959_964), 0.975, 1e-6));
        let lower = std_normal_cdf(-8.0);
        assert!(lower > 0.0 && lower < 1e-14);
        // Mills bound: Φ(−8) < φ(8)/8
        assert!(lower < std_normal_pdf(8.0) / 8.0);
    }

    #[test]
    fn cdf_reflection() {
        let mut z = -10.0;
        while z <= 10.0 {
            let s = std_normal_cdf(z) + std_normal_cdf(-z);
            assert!((s - 1.0).abs() <= 1e-15, "z = {z}: {s}");
            z += 0.0137;
        }
    }

    #[test]
    fn cdf_derivative_is_pdf() {
        let h = 1e-5;
        let mut z = -6.0;
        while z <= 6.0 {
            let fd = (std_normal_cdf(z + h) - std_normal_cdf(z - h)) / (2.0 * h);
            assert!(close(fd, std_normal_pdf(z), 1e-6), "z = {z}");
            z += 0.01;
        }
    }

    #[test]
    fn mills_reference_points() {
        assert!(close(inverse_mills(0.0), 0.797_884_560_8, 1e-10));
        assert!(close(inverse_mills(30.0), 30.0333, 1e-3));
        let g = inverse_mills(-10.0);
        assert!(g > 0.0 && g <= 8e-23);
        assert!(close(g / std_normal_pdf(-10.0), 1.0, 1e-12));
    }

    #[test]
    fn mills_branches_agree_at_switch() {
        for z in [4.5, 4.9, 5.0, 5.1, 5.5] {
            let direct = std_normal_pdf(z) / std_normal_sf(z);
            let cf = inverse_mills_cf(z);
            assert!(close(direct, cf, 1e-12 * cf), "z = {z}: {direct} vs {cf}");
        }
    }

    #[test]
    fn mills_derivative_at_zero() {
        let h = 1e-5;
        let d = (inverse_mills(h) - inverse_mills(-h)) / (2.0 * h);
        assert!(close(d, 2.0 / std::f64::consts::PI, 1e-6));
        // slope constant of h₁ at the pooled point, ≈ 0.900
        assert!(close(d * std::f64::consts::SQRT_2, 0.9003, 1e-4));
    }

    #[test]
    fn log_cdf_tail() {
        assert!(close(
            log_std_normal_cdf(0.0),
            -std::f64::consts::LN_2,
            1e-15
        ));
        for z in [-4.0, -5.0, -6.0, -20.0] {
            let direct = std_normal_cdf(z).ln();
            assert!(close(log_std_normal_cdf(z), direct, 1e-12 * direct.abs()));
        }
        // Φ(−40) underflows f64 but its log does not.
        let l = log_std_normal_cdf(-40.0);
        let asymptotic = log_std_normal_pdf(40.0) - 40f64.ln();
        assert!(close(l, asymptotic, 1e-3));
        assert!(log_std_normal_cdf(40.0) > -1e-300);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-10, 0.025, 0.3, 0.5, 0.975] {
            assert!(close(
                std_normal_cdf(std_normal_quantile(p)),
                p,
                1e-12 * p.max(1e-3)
            ));
        }
    }

    #[test]
    fn log_add_exp_identity() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!(close(log_add_exp(0.0, 0.0), std::f64::consts::LN_2, 1e-15));
        assert!(close(
            log_add_exp(-1000.0, -1001.0),
            -1000.0 + (1.0 + (-1f64).exp()).ln(),
            1e-12
        ));
    }
}
