//! Deterministic numeric kernels shared by all estimators.

mod gamma;
mod matrix;
mod random;

pub use matrix::{dependent_columns, matrix_rank, pseudo_inverse, solve_least_squares, symmetric_inverse};
pub use matrix::{LeastSquares, Matrix};
pub use random::RandomSource;

use crate::error::{Error, Result};

/// Koenker-Bassett check function: `u * (tau - 1{u < 0})`, equivalently
/// `tau * max(u, 0) + (1 - tau) * max(-u, 0)`.
///
/// Panics if `tau` lies outside (0, 1).
pub fn check_loss(tau: f64, u: f64) -> f64 {
    assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1), got {tau}");
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Type-1 (inverse CDF) empirical quantile: the `ceil(n * tau)`-th order
/// statistic.
pub fn empirical_quantile(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput {
            context: "empirical_quantile".to_string(),
        });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau { tau });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((n as f64 * tau).ceil() as usize).clamp(1, n);
    Ok(sorted[k - 1])
}

/// Upper-tail probability of a chi-square distribution with `df` degrees of
/// freedom.
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64> {
    if df < 1 {
        return Err(Error::InvalidConfig {
            message: format!("chi-square degrees of freedom must be >= 1, got {df}"),
        });
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidConfig {
            message: format!("chi-square statistic must be nonnegative, got {x}"),
        });
    }
    Ok(gamma::gamma_q(df as f64 / 2.0, x / 2.0))
}

/// Standard normal quantile (Acklam's rational approximation, ~1e-9 absolute),
/// used to center simulated error distributions.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Quantile of the Student-t distribution with 3 degrees of freedom, by
/// bisection on its closed-form CDF.
pub fn student_t3_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    let cdf = |x: f64| {
        let u = x / 3.0_f64.sqrt();
        0.5 + (u.atan() + u / (1.0 + u * u)) / std::f64::consts::PI
    };
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
