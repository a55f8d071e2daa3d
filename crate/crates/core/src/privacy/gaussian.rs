//! Analytic Gaussian mechanism: the exact `(ε, δ)` condition
//! `Φ(Δ/2σ − εσ/Δ) − e^ε Φ(−Δ/2σ − εσ/Δ) ≤ δ`.
//!
//! The condition depends on `σ/Δ` only, so calibration solves for that ratio
//! and scales by `Δ` at the end; doubling `Δ` doubles `σ` exactly.

use crate::error::{Error, Result};
use crate::numerics::{log_std_normal_cdf, phi};

use super::PrivacyBudget;

/// Bisection stops once the bracket is this small relative to its upper end.
const REL_TOL: f64 = 1e-14;

/// Left-hand side in terms of the noise ratio `s = σ/Δ`.
fn lhs_ratio(s: f64, epsilon: f64) -> f64 {
    let a = 0.5 / s;
    let b = epsilon * s;
    // e^ε Φ(−a−b) in log space so that large ε never overflows.
    let tail = (epsilon + log_std_normal_cdf(-a - b)).exp();
    (phi(a - b) - tail).max(0.0)
}

/// The smallest δ for which `N(0, σ²)` noise on a `Δ`-sensitive query is
/// `(ε, δ)`-DP.
pub fn analytic_gaussian_delta(delta_sens: f64, sigma: f64, epsilon: f64) -> f64 {
    if sigma == 0.0 {
        return if delta_sens == 0.0 { 0.0 } else { 1.0 };
    }
    if delta_sens == 0.0 {
        return 0.0;
    }
    lhs_ratio(sigma / delta_sens, epsilon)
}

/// Smallest `σ` satisfying the analytic Gaussian condition.
///
/// The returned value is the upper end of the final bisection bracket, so the
/// condition holds at it.
pub fn calibrate_analytic_gaussian(delta_sens: f64, budget: &PrivacyBudget) -> Result<f64> {
    if !(delta_sens > 0.0) || !delta_sens.is_finite() {
        return Err(Error::domain(format!(
            "sensitivity must be positive and finite, got {delta_sens}"
        )));
    }
    let (eps, delta) = (budget.epsilon, budget.delta);
    let mut hi = 1.0f64;
    while lhs_ratio(hi, eps) > delta {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::BudgetUnreachable(format!(
                "no noise ratio below 1e12 reaches (ε={eps}, δ={delta})"
            )));
        }
    }
    let mut lo = hi / 2.0;
    while lhs_ratio(lo, eps) <= delta {
        hi = lo;
        lo /= 2.0;
        if lo < 1e-300 {
            return Ok(hi * delta_sens);
        }
    }
    while hi - lo > REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lhs_ratio(mid, eps) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // The bracket holds for the ratio; make sure it survives scaling by Δ.
    let mut sigma = hi * delta_sens;
    while analytic_gaussian_delta(delta_sens, sigma, eps) > delta {
        sigma = sigma.next_up();
    }
    Ok(sigma)
}

/// Smallest `ε ≥ 0` for which noise `σ` on a `Δ`-sensitive query is `(ε, δ)`-DP.
pub fn analytic_gaussian_epsilon(delta_sens: f64, sigma: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if delta_sens == 0.0 {
        return Ok(0.0);
    }
    if !(sigma > 0.0) {
        return Ok(f64::INFINITY);
    }
    let s = sigma / delta_sens;
    if lhs_ratio(s, 0.0) <= delta {
        return Ok(0.0);
    }
    let mut hi = 1.0f64;
    while lhs_ratio(s, hi) > delta {
        hi *= 2.0;
        if hi > 1e9 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = 0.0f64;
    while hi - lo > REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lhs_ratio(s, mid) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
