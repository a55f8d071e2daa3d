//! Noisy gradient descent shared by the gradient-perturbation trainers.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    binary_smoothed_grad_example, binary_smoothed_loss, ce_grad_example, ce_loss, smoothed_grad_example, smoothed_loss,
    LinearModel, LossParams,
};
use crate::numerics::{l2_norm, poisson_subsample, sample_gaussian, RandomSource};
use crate::privacy::RdpLedger;

use super::{Optimizer, Schedule};

/// Learning rate at step `t ≥ 1`.
///
/// `total_steps` is only read by the linear schedule.
pub fn schedule_step(kind: Schedule, base: f64, t: usize, lambda_strong: f64, total_steps: usize) -> f64 {
    debug_assert!(t >= 1);
    match kind {
        Schedule::Constant => base,
        Schedule::InverseDecay => 1.0 / (lambda_strong * t as f64),
        Schedule::LinearDecay => base * (1.0 - t as f64 / total_steps.max(1) as f64),
    }
}

/// A decomposable objective `Σᵢ fᵢ(θ)` over a flat parameter vector.
pub(crate) trait ExampleObjective: Sync {
    fn num_examples(&self) -> usize;

    fn num_params(&self) -> usize;

    /// `∇fᵢ(θ)` for every `i` in `batch`, in batch order.
    fn example_grads(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<Vec<f64>>>;

    /// Full objective `Σᵢ fᵢ(θ)`.
    fn loss(&self, theta: &[f64]) -> f64;
}

/// Smoothed all-in-one loss.
pub(crate) struct SmoothedObjective<'a> {
    pub data: &'a Dataset,
    pub params: LossParams,
    pub with_bias: bool,
}

impl SmoothedObjective<'_> {
    pub fn model(&self, theta: &[f64]) -> Result<LinearModel> {
        LinearModel::from_flat(self.data.dim(), self.data.num_classes(), self.with_bias, theta)
    }
}

impl ExampleObjective for SmoothedObjective<'_> {
    fn num_examples(&self) -> usize {
        self.data.len()
    }

    fn num_params(&self) -> usize {
        self.data.num_classes() * (self.data.dim() + usize::from(self.with_bias))
    }

    fn example_grads(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<Vec<f64>>> {
        let model = self.model(theta)?;
        let n = self.data.len();
        batch
            .iter()
            .map(|&i| {
                smoothed_grad_example(&model, self.data.row(i), self.data.labels()[i], &self.params, n)
                    .map(|g| g.to_flat())
            })
            .collect()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.model(theta)
            .map_or(f64::NAN, |m| smoothed_loss(&m, self.data, &self.params))
    }
}

/// Softmax cross-entropy with ridge `μ`.
pub(crate) struct CrossEntropyObjective<'a> {
    pub data: &'a Dataset,
    pub mu: f64,
    pub with_bias: bool,
}

impl CrossEntropyObjective<'_> {
    pub fn model(&self, theta: &[f64]) -> Result<LinearModel> {
        LinearModel::from_flat(self.data.dim(), self.data.num_classes(), self.with_bias, theta)
    }
}

impl ExampleObjective for CrossEntropyObjective<'_> {
    fn num_examples(&self) -> usize {
        self.data.len()
    }

    fn num_params(&self) -> usize {
        self.data.num_classes() * (self.data.dim() + usize::from(self.with_bias))
    }

    fn example_grads(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<Vec<f64>>> {
        let model = self.model(theta)?;
        let n = self.data.len();
        batch
            .iter()
            .map(|&i| ce_grad_example(&model, self.data.row(i), self.data.labels()[i], self.mu, n).map(|g| g.to_flat()))
            .collect()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.model(theta).map_or(f64::NAN, |m| ce_loss(&m, self.data, self.mu))
    }
}

/// Binary smoothed hinge for class `positive` against the rest. Parameters
/// are `[w; b]`, with `b` pinned to zero when bias is off.
pub(crate) struct BinarySmoothedObjective<'a> {
    pub data: &'a Dataset,
    pub signs: Vec<f64>,
    pub params: LossParams,
    pub with_bias: bool,
}

impl<'a> BinarySmoothedObjective<'a> {
    pub fn new(data: &'a Dataset, positive: usize, params: LossParams, with_bias: bool) -> Self {
        let signs = data
            .labels()
            .iter()
            .map(|&y| if y == positive { 1.0 } else { -1.0 })
            .collect();
        Self {
            data,
            signs,
            params,
            with_bias,
        }
    }

    fn split<'t>(&self, theta: &'t [f64]) -> (ndarray::ArrayView1<'t, f64>, f64) {
        let d = self.data.dim();
        let b = if self.with_bias { theta[d] } else { 0.0 };
        (ndarray::ArrayView1::from(&theta[..d]), b)
    }
}

impl ExampleObjective for BinarySmoothedObjective<'_> {
    fn num_examples(&self) -> usize {
        self.data.len()
    }

    fn num_params(&self) -> usize {
        self.data.dim() + usize::from(self.with_bias)
    }

    fn example_grads(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<Vec<f64>>> {
        let (w, b) = self.split(theta);
        let n = self.data.len();
        Ok(batch
            .iter()
            .map(|&i| {
                let (gw, gb) = binary_smoothed_grad_example(w, b, self.data.row(i), self.signs[i], &self.params, n);
                let mut g = gw.to_vec();
                if self.with_bias {
                    g.push(gb);
                }
                g
            })
            .collect())
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let (w, b) = self.split(theta);
        binary_smoothed_loss(w, b, self.data.features(), &self.signs, &self.params)
    }
}

/// Everything a noisy step needs apart from the objective.
#[derive(Clone, Debug)]
pub(crate) struct StepRule {
    pub clip: f64,
    pub q: f64,
    /// Noise multiplier: the noise on the summed clipped gradients has std `sigma · clip`.
    pub sigma: f64,
    pub schedule: Schedule,
    pub learning_rate: f64,
    pub lambda_strong: f64,
    pub total_steps: usize,
    pub optimizer: Optimizer,
}

/// Running state of one DP-SGD trajectory.
pub(crate) struct NoisyDescent {
    pub theta: Vec<f64>,
    pub ledger: RdpLedger,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    batch_rng: RandomSource,
    noise_rng: RandomSource,
    /// Largest clipped per-example norm seen so far.
    pub max_clipped_norm: f64,
}

impl NoisyDescent {
    pub fn new(num_params: usize, rng: &RandomSource) -> Self {
        Self {
            theta: vec![0.0; num_params],
            ledger: RdpLedger::new(),
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            batch_rng: rng.split("batches"),
            noise_rng: rng.split("noise"),
            max_clipped_norm: 0.0,
        }
    }

    /// Clipped sum `Σ_{i∈B} ∇fᵢ / max(1, ‖∇fᵢ‖/R)` plus `N(0, σ²R²)` noise,
    /// divided by the expected batch size `q·n`.
    pub fn noisy_gradient(&mut self, objective: &dyn ExampleObjective, rule: &StepRule) -> Result<Vec<f64>> {
        let n = objective.num_examples();
        let noise_std = if rule.sigma == 0.0 { 0.0 } else { rule.sigma * rule.clip };
        let batch = poisson_subsample(&mut self.batch_rng, n, rule.q)?;
        let mut sum = vec![0.0; self.theta.len()];
        for g in objective.example_grads(&self.theta, &batch)? {
            let norm = l2_norm(&g);
            let factor = (norm / rule.clip).max(1.0);
            self.max_clipped_norm = self.max_clipped_norm.max(norm / factor);
            for (s, gi) in sum.iter_mut().zip(&g) {
                *s += gi / factor;
            }
        }
        let noise = sample_gaussian(&mut self.noise_rng, noise_std, sum.len())?;
        let denom = rule.q * n as f64;
        Ok(sum.iter().zip(&noise).map(|(s, z)| (s + z) / denom).collect())
    }

    /// One noisy step; the ledger records it whether or not the batch was empty.
    pub fn step(&mut self, objective: &dyn ExampleObjective, rule: &StepRule) -> Result<()> {
        let g = self.noisy_gradient(objective, rule)?;
        self.t += 1;
        let eta = schedule_step(
            rule.schedule,
            rule.learning_rate,
            self.t,
            rule.lambda_strong,
            rule.total_steps,
        );
        match rule.optimizer {
            Optimizer::Plain => {
                for (w, gi) in self.theta.iter_mut().zip(&g) {
                    *w -= eta * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, gamma } => {
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..g.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    self.theta[i] -= eta * m_hat / (v_hat.sqrt() + gamma);
                }
            }
        }
        self.ledger.step(rule.q, rule.sigma)?;
        Ok(())
    }
}

pub(crate) fn validate_rule(rule: &StepRule) -> Result<()> {
    if !(rule.clip > 0.0) {
        return Err(Error::domain(format!(
            "clipping bound R must be > 0, got {}",
            rule.clip
        )));
    }
    if !(rule.q > 0.0 && rule.q <= 1.0) {
        return Err(Error::domain(format!(
            "sampling rate must lie in (0, 1], got {}",
            rule.q
        )));
    }
    if rule.total_steps == 0 {
        return Err(Error::domain("steps T must be >= 1"));
    }
    if let Optimizer::Adam { beta1, beta2, gamma } = rule.optimizer {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(gamma > 0.0) {
            return Err(Error::domain("adam needs beta1, beta2 in [0, 1) and gamma > 0"));
        }
    }
    if rule.schedule == Schedule::InverseDecay && !(rule.lambda_strong > 0.0) {
        return Err(Error::domain(
            "inverse-decay schedule needs a positive strong-convexity constant",
        ));
    }
    Ok(())
}
