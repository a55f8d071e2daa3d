//! Privacy machinery: budgets and composition, weight sensitivity from the
//! class-encoding Gram matrix, analytic Gaussian calibration, Rényi accounting
//! for subsampled Gaussian steps, and noise injection.

mod encoding;
mod gaussian;
mod rdp;

pub use encoding::{lambda_max, ClassEncoding, EncodingPreset, EncodingScheme};
pub use gaussian::{analytic_gaussian_delta, analytic_gaussian_epsilon, calibrate_analytic_gaussian};
pub use rdp::{sigma_for_budget, subsampled_gaussian_rdp, RdpLedger, SIGMA_SEARCH_FLOOR};

use crate::error::{Error, Result};
use crate::model::LinearModel;
use crate::numerics::{compensated_sum, sample_gaussian, RandomSource};

/// An `(ε, δ)` guarantee.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    /// A usable target budget: `ε > 0` and `0 < δ < 1`.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || epsilon.is_nan() {
            return Err(Error::domain(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    /// The cost of a mechanism that never touches the data.
    pub const fn zero() -> Self {
        Self {
            epsilon: 0.0,
            delta: 0.0,
        }
    }

    /// True when `self` is no larger than `other` in both coordinates.
    pub fn within(&self, other: &PrivacyBudget) -> bool {
        self.epsilon <= other.epsilon && self.delta <= other.delta
    }
}

/// Basic composition: `(Σεᵢ, Σδᵢ)`, summed with compensation.
pub fn compose_budgets(budgets: &[PrivacyBudget]) -> Result<PrivacyBudget> {
    if budgets.is_empty() {
        return Err(Error::domain("cannot compose an empty list of budgets"));
    }
    Ok(PrivacyBudget {
        epsilon: compensated_sum(budgets.iter().map(|b| b.epsilon)),
        delta: compensated_sum(budgets.iter().map(|b| b.delta)),
    })
}

/// Per-classifier share `(ε/c, δ/c)` for one-vs-rest training.
///
/// The share is the largest float whose `c`-fold composition does not exceed
/// the total, found by walking ulps from `total / c`. Composition is monotone
/// in the share, so this recovers the total exactly whenever some share can.
pub fn split_budget_ovr(total: &PrivacyBudget, c: usize) -> Result<PrivacyBudget> {
    if c < 2 {
        return Err(Error::domain(format!("one-vs-rest needs c >= 2, got {c}")));
    }
    let fit = |total: f64| {
        let compose = |s: f64| compensated_sum(std::iter::repeat_n(s, c));
        let mut share = total / c as f64;
        while compose(share) > total {
            share = share.next_down();
        }
        while share < total && compose(share.next_up()) <= total {
            share = share.next_up();
        }
        share
    };
    Ok(PrivacyBudget {
        epsilon: fit(total.epsilon),
        delta: fit(total.delta),
    })
}

/// L2 sensitivity of the all-in-one SVM weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityBound {
    /// `Δ_w = 2 · (C/n) · √λ_max`.
    pub delta_w: f64,
    pub lambda_max: f64,
    pub c_over_n: f64,
}

/// `Δ_w = 2 (C/n) √λ_max(G)` for rows with `‖x‖₂ ≤ 1` under replacement adjacency.
pub fn weight_sensitivity(c_over_n: f64, lambda_max: f64) -> Result<SensitivityBound> {
    if !(c_over_n >= 0.0) || !(lambda_max >= 0.0) {
        return Err(Error::domain("C/n and lambda_max must be non-negative"));
    }
    Ok(SensitivityBound {
        delta_w: 2.0 * c_over_n * lambda_max.sqrt(),
        lambda_max,
        c_over_n,
    })
}

/// Adds i.i.d. `N(0, σ²)` noise to every weight. Bias-free models only.
pub fn perturb_weights(model: &LinearModel, sigma: f64, rng: &mut RandomSource) -> Result<LinearModel> {
    if model.with_bias() {
        return Err(Error::invalid(
            "weight perturbation covers W only; train the model without bias",
        ));
    }
    let noise = sample_gaussian(rng, sigma, model.weights().len())?;
    let mut out = model.clone();
    for (w, z) in out.weights_mut().iter_mut().zip(noise) {
        *w += z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 1e-5).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(f64::NAN, 0.5).is_err());
        assert!(PrivacyBudget::new(1.0, 1e-5).is_ok());
    }

    #[test]
    fn composition_examples() {
        let b = PrivacyBudget::new(0.5, 1e-6).unwrap();
        let c = compose_budgets(&[b, b, b]).unwrap();
        assert_eq!(c.epsilon, 1.5);
        assert_eq!(c.delta, 3e-6);
        assert_eq!(compose_budgets(&[b]).unwrap(), b);
        assert_eq!(compose_budgets(&[b, PrivacyBudget::zero()]).unwrap(), b);
        assert!(compose_budgets(&[]).is_err());
    }

    #[test]
    fn ovr_split_examples() {
        let total = PrivacyBudget::new(4.0, 1e-5).unwrap();
        let share = split_budget_ovr(&total, 10).unwrap();
        assert_eq!(share.epsilon, 0.4);
        assert!((share.delta - 1e-6).abs() <= 1e-21);
        let half = split_budget_ovr(&total, 2).unwrap();
        assert_eq!((half.epsilon, half.delta), (2.0, 5e-6));
        assert!(split_budget_ovr(&total, 1).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let s = weight_sensitivity(0.005, 2.0).unwrap();
        assert!((s.delta_w - 0.014_142_135_623_730_95).abs() < 1e-15);
        assert!((weight_sensitivity(0.005, 1.0).unwrap().delta_w - 0.01).abs() < 1e-18);
        assert_eq!(weight_sensitivity(0.0, 2.0).unwrap().delta_w, 0.0);
        assert!(weight_sensitivity(-1.0, 2.0).is_err());
    }

    #[test]
    fn perturbation_contract() {
        let model = LinearModel::zeros(50, 200, false);
        let mut rng = RandomSource::new(1);
        assert_eq!(perturb_weights(&model, 0.0, &mut rng).unwrap(), model);

        let a = perturb_weights(&model, 1.0, &mut RandomSource::new(4)).unwrap();
        let b = perturb_weights(&model, 1.0, &mut RandomSource::new(4)).unwrap();
        assert_eq!(a, b);
        let n = a.weights().len() as f64;
        let sd = (a.squared_norm() / n).sqrt();
        assert!((sd - 1.0).abs() < 0.03, "empirical sd {sd}");

        let biased = LinearModel::zeros(2, 2, true);
        assert!(perturb_weights(&biased, 1.0, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn split_then_compose_never_overspends(eps in 1e-3f64..20.0, delta in 1e-9f64..1e-2, c in 2usize..40) {
            let total = PrivacyBudget::new(eps, delta).unwrap();
            let share = split_budget_ovr(&total, c).unwrap();
            let back = compose_budgets(&vec![share; c]).unwrap();
            prop_assert!(back.within(&total));
            prop_assert!((total.epsilon - back.epsilon) <= 4.0 * f64::EPSILON * total.epsilon);
            prop_assert!((total.delta - back.delta) <= 4.0 * f64::EPSILON * total.delta);
        }
    }
}
