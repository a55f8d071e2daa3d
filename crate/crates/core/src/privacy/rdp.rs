//! Rényi accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Orders are integers, where the RDP of the subsampled mechanism has an exact
//! binomial expansion:
//! `A_α = Σ_k C(α,k) (1−q)^{α−k} q^k exp((k²−k)/(2σ²))`, `RDP(α) = ln A_α / (α−1)`.

use crate::error::{Error, Result};

use super::PrivacyBudget;

/// The noise search never returns a multiplier below this.
pub const SIGMA_SEARCH_FLOOR: f64 = 1e-2;

const SIGMA_SEARCH_CEILING: f64 = 1e6;
const SIGMA_SEARCH_REL_TOL: f64 = 1e-6;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln A_α` by log-sum-exp over the binomial expansion.
fn log_a_integer(q: f64, sigma: f64, alpha: u32) -> f64 {
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut log_binom = 0.0f64;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        if k > 0 {
            log_binom += ((alpha - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        let mut term = log_binom + (kf * kf - kf) * inv_two_var;
        if k > 0 {
            term += kf * log_q;
        }
        if k < alpha {
            term += (alpha - k) as f64 * log_1mq;
        }
        acc = log_add(acc, term);
    }
    acc
}

/// RDP of one Poisson-subsampled Gaussian step at integer order `alpha ≥ 2`.
///
/// `q = 0` costs nothing; `q = 1` is the plain Gaussian, `α / (2σ²)`.
pub fn subsampled_gaussian_rdp(q: f64, sigma: f64, alpha: u32) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q == 1.0 {
        return alpha as f64 / (2.0 * sigma * sigma);
    }
    (log_a_integer(q, sigma, alpha) / (alpha - 1) as f64).max(0.0)
}

/// Accumulated RDP over a fixed grid of orders.
#[derive(Clone, Debug, PartialEq)]
pub struct RdpLedger {
    orders: Vec<u32>,
    rdp: Vec<f64>,
    steps: u64,
}

impl Default for RdpLedger {
    fn default() -> Self {
        Self::with_orders((2..=256).collect()).expect("default order grid is valid")
    }
}

impl RdpLedger {
    /// Orders `2, 3, …, 256`.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_orders(orders: Vec<u32>) -> Result<Self> {
        if orders.is_empty() || orders.iter().any(|&a| a < 2) {
            return Err(Error::domain("RDP orders must be integers >= 2"));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("RDP orders must be strictly increasing"));
        }
        let len = orders.len();
        Ok(Self {
            orders,
            rdp: vec![0.0; len],
            steps: 0,
        })
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn rdp(&self) -> &[f64] {
        &self.rdp
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Records one subsampled Gaussian step.
    pub fn step(&mut self, q: f64, sigma: f64) -> Result<()> {
        self.step_many(q, sigma, 1)
    }

    /// Records `count` identical steps.
    pub fn step_many(&mut self, q: f64, sigma: f64, count: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::domain(format!("sampling rate must lie in [0, 1], got {q}")));
        }
        if !(sigma >= 0.0) {
            return Err(Error::domain(format!("noise multiplier must be >= 0, got {sigma}")));
        }
        if count == 0 {
            return Ok(());
        }
        for (acc, &alpha) in self.rdp.iter_mut().zip(&self.orders) {
            *acc += count as f64 * subsampled_gaussian_rdp(q, sigma, alpha);
        }
        self.steps += count;
        Ok(())
    }

    /// Converted `ε` at the given `δ`, minimized over the order grid.
    ///
    /// Uses `ε = RDP(α) + ln((α−1)/α) − (ln δ + ln α)/(α−1)`, clamped at 0.
    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        Ok(self.epsilon_and_order(delta)?.0)
    }

    /// Converted `ε` together with the order that attains it.
    pub fn epsilon_and_order(&self, delta: f64) -> Result<(f64, u32)> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
        }
        if self.rdp.iter().all(|&r| r == 0.0) {
            return Ok((0.0, self.orders[0]));
        }
        let log_delta = delta.ln();
        let mut best = (f64::INFINITY, self.orders[0]);
        for (&r, &alpha) in self.rdp.iter().zip(&self.orders) {
            let a = alpha as f64;
            let eps = r + ((a - 1.0) / a).ln() - (log_delta + a.ln()) / (a - 1.0);
            if eps < best.0 {
                best = (eps, alpha);
            }
        }
        Ok((best.0.max(0.0), best.1))
    }
}

/// Smallest noise multiplier whose `steps`-fold composition at rate `q`
/// stays within `budget`, to relative precision `1e-6`, never below
/// [`SIGMA_SEARCH_FLOOR`].
pub fn sigma_for_budget(q: f64, steps: u64, budget: &PrivacyBudget) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("sampling rate must lie in [0, 1], got {q}")));
    }
    if q == 0.0 || steps == 0 {
        return Ok(SIGMA_SEARCH_FLOOR);
    }
    let eps_at = |sigma: f64| -> Result<f64> {
        let mut ledger = RdpLedger::new();
        ledger.step_many(q, sigma, steps)?;
        ledger.epsilon(budget.delta)
    };
    if eps_at(SIGMA_SEARCH_FLOOR)? <= budget.epsilon {
        return Ok(SIGMA_SEARCH_FLOOR);
    }
    let mut hi = 1.0f64.max(SIGMA_SEARCH_FLOOR);
    while eps_at(hi)? > budget.epsilon {
        hi *= 2.0;
        if hi > SIGMA_SEARCH_CEILING {
            return Err(Error::BudgetUnreachable(format!(
                "no noise multiplier up to {SIGMA_SEARCH_CEILING:e} meets ε={} at δ={} (q={q}, T={steps})",
                budget.epsilon, budget.delta
            )));
        }
    }
    let mut lo = (hi / 2.0).max(SIGMA_SEARCH_FLOOR);
    if eps_at(lo)? <= budget.epsilon {
        lo = SIGMA_SEARCH_FLOOR;
    }
    while hi - lo > SIGMA_SEARCH_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= budget.epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::calibrate_analytic_gaussian;

    /// Direct summation of the binomial expansion in linear space, usable for
    /// moderate orders where nothing overflows.
    fn oracle_rdp(q: f64, sigma: f64, alpha: u32) -> f64 {
        let mut a = 0.0;
        let mut binom = 1.0f64;
        for k in 0..=alpha {
            if k > 0 {
                binom = binom * (alpha - k + 1) as f64 / k as f64;
            }
            let kf = k as f64;
            a += binom
                * q.powi(k as i32)
                * (1.0 - q).powi((alpha - k) as i32)
                * ((kf * kf - kf) / (2.0 * sigma * sigma)).exp();
        }
        a.ln() / (alpha - 1) as f64
    }

    #[test]
    fn matches_linear_space_oracle() {
        for &(q, sigma) in &[(0.01, 1.0), (0.1, 2.0), (0.5, 4.0), (0.001, 0.8)] {
            for alpha in [2u32, 3, 8, 16, 32] {
                let got = subsampled_gaussian_rdp(q, sigma, alpha);
                let want = oracle_rdp(q, sigma, alpha);
                assert!(
                    (got - want).abs() <= 1e-10 * want.abs().max(1e-12),
                    "q={q} σ={sigma} α={alpha}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn expansion_at_full_rate_is_closed_form() {
        for sigma in [0.5, 1.0, 3.0] {
            for alpha in [2u32, 5, 64, 256] {
                let expansion = log_a_integer(1.0, sigma, alpha) / (alpha - 1) as f64;
                let closed = alpha as f64 / (2.0 * sigma * sigma);
                assert!((expansion - closed).abs() <= 1e-9, "σ={sigma} α={alpha}");
            }
        }
    }

    #[test]
    fn subsampling_only_helps() {
        for alpha in [2u32, 10, 100] {
            let full = subsampled_gaussian_rdp(1.0, 1.0, alpha);
            let mut prev = 0.0;
            for q in [0.001, 0.01, 0.1, 0.5, 0.9] {
                let r = subsampled_gaussian_rdp(q, 1.0, alpha);
                assert!(r >= prev && r <= full + 1e-12, "α={alpha} q={q}");
                prev = r;
            }
        }
    }

    #[test]
    fn empty_ledger_is_free() {
        let ledger = RdpLedger::new();
        assert_eq!(ledger.epsilon(1e-5).unwrap(), 0.0);
        let mut zero_rate = RdpLedger::new();
        zero_rate.step_many(0.0, 1.0, 1000).unwrap();
        assert_eq!(zero_rate.epsilon(1e-5).unwrap(), 0.0);
    }

    #[test]
    fn epsilon_grows_with_steps() {
        let mut ledger = RdpLedger::new();
        let mut prev = 0.0;
        for _ in 0..5 {
            ledger.step_many(0.01, 1.1, 200).unwrap();
            let eps = ledger.epsilon(1e-5).unwrap();
            assert!(eps > prev);
            prev = eps;
        }
        assert_eq!(ledger.steps(), 1000);
    }

    #[test]
    fn accumulation_is_additive() {
        let mut a = RdpLedger::new();
        a.step_many(0.02, 1.3, 50).unwrap();
        a.step_many(0.02, 1.3, 50).unwrap();
        let mut b = RdpLedger::new();
        b.step_many(0.02, 1.3, 100).unwrap();
        for (x, y) in a.rdp().iter().zip(b.rdp()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut ledger = RdpLedger::new();
        assert!(ledger.step(1.5, 1.0).is_err());
        assert!(ledger.step(0.5, -1.0).is_err());
        assert!(ledger.epsilon(0.0).is_err());
        assert!(RdpLedger::with_orders(vec![1, 2]).is_err());
        assert!(RdpLedger::with_orders(vec![3, 2]).is_err());
    }

    #[test]
    fn sigma_search_meets_budget_tightly() {
        let budget = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let sigma = sigma_for_budget(0.01, 1000, &budget).unwrap();
        let mut ledger = RdpLedger::new();
        ledger.step_many(0.01, sigma, 1000).unwrap();
        assert!(ledger.epsilon(1e-5).unwrap() <= 1.0);
        let mut slightly_less = RdpLedger::new();
        slightly_less.step_many(0.01, sigma * (1.0 - 1e-4), 1000).unwrap();
        assert!(slightly_less.epsilon(1e-5).unwrap() > 1.0);
    }

    #[test]
    fn sigma_search_monotone_in_epsilon() {
        let mut prev = f64::INFINITY;
        for eps in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let s = sigma_for_budget(0.05, 500, &PrivacyBudget::new(eps, 1e-5).unwrap()).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn single_full_batch_step_is_close_to_analytic() {
        for eps in [0.5, 1.0, 4.0] {
            let budget = PrivacyBudget::new(eps, 1e-5).unwrap();
            let rdp = sigma_for_budget(1.0, 1, &budget).unwrap();
            let exact = calibrate_analytic_gaussian(1.0, &budget).unwrap();
            assert!(rdp >= exact * (1.0 - 1e-6), "RDP cannot beat the exact curve");
            assert!(rdp <= 1.1 * exact, "eps={eps}: rdp {rdp} exact {exact}");
        }
    }

    #[test]
    fn sigma_search_floor_and_zero_rate() {
        let huge = PrivacyBudget::new(1e4, 0.5).unwrap();
        assert_eq!(sigma_for_budget(0.01, 1, &huge).unwrap(), SIGMA_SEARCH_FLOOR);
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        assert_eq!(sigma_for_budget(0.0, 100, &b).unwrap(), SIGMA_SEARCH_FLOOR);
    }
}
