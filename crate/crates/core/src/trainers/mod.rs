//! Private and non-private trainers.
//!
//! Weight perturbation ([`pmsvm_wp`], [`ovr_wp`]) trains exactly and adds
//! analytic-Gaussian noise to the weights. Gradient perturbation
//! ([`pmsvm_gp`], [`pmsvm_agp`], [`ovr_gp`], [`linear_ce_gp`]) runs DP-SGD
//! with Poisson batches, per-example clipping and Rényi accounting.
//!
//! Every trainer takes an optional held-out set used only for the test
//! accuracy column of the trace.

mod private;
mod report;
mod sgd;
mod solver;

pub use private::{linear_ce_gp, nonprivate_cs, nonprivate_ovr, ovr_gp, ovr_wp, pmsvm_agp, pmsvm_gp, pmsvm_wp};
pub use report::{TracePoint, TrainReport};
pub use sgd::schedule_step;
pub use solver::{
    solve_allinone, solve_binary_dual, solve_cs_dual, solve_smoothed, AllInOneLoss, CsMethod, SolveOutcome,
    SolverOptions,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::LossParams;
use crate::privacy::EncodingPreset;

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Schedule {
    /// `η_t = η`.
    #[default]
    Constant,
    /// `η_t = 1/(λ t)` with `λ` the strong-convexity constant.
    InverseDecay,
    /// `η_t = η (1 − t/T)`.
    LinearDecay,
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::InverseDecay => "inverse_decay",
            Schedule::LinearDecay => "linear_decay",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "inverse_decay" => Ok(Self::InverseDecay),
            "linear_decay" => Ok(Self::LinearDecay),
            other => Err(Error::Config(format!(
                "unknown schedule {other:?} (expected constant, inverse_decay or linear_decay)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Optimizer {
    #[default]
    Plain,
    /// Bias-corrected moments, update `η m̂/(√v̂ + γ)`.
    Adam { beta1: f64, beta2: f64, gamma: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            gamma: 1e-8,
        }
    }
}

/// Weight-perturbation hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WpConfig {
    /// Slack weight `C/n`.
    pub c_over_n: f64,
    /// Certified distance of the solver output to the exact minimizer.
    pub tol: f64,
    pub max_iter: usize,
    pub encoding: EncodingPreset,
}

impl Default for WpConfig {
    fn default() -> Self {
        Self {
            c_over_n: 0.005,
            tol: 1e-6,
            max_iter: 100_000,
            encoding: EncodingPreset::CrammerSinger,
        }
    }
}

impl WpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::domain(format!("solver tolerance must be > 0, got {}", self.tol)));
        }
        if !(self.c_over_n >= 0.0) || !self.c_over_n.is_finite() {
            return Err(Error::domain(format!(
                "C/n must be finite and >= 0, got {}",
                self.c_over_n
            )));
        }
        Ok(())
    }

    pub(crate) fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("c_over_n".into(), self.c_over_n.to_string()),
            ("tol".into(), self.tol.to_string()),
            ("max_iter".into(), self.max_iter.to_string()),
            ("encoding".into(), self.encoding.to_string()),
        ]
    }
}

/// Gradient-perturbation hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpConfig {
    pub loss: LossParams,
    /// Per-example clipping bound `R`.
    pub clip: f64,
    /// Number of noisy steps `T`.
    pub steps: usize,
    /// Poisson sampling rate `q`.
    pub q: f64,
    pub schedule: Schedule,
    pub learning_rate: f64,
    /// Strong-convexity constant for the inverse-decay schedule; defaults to
    /// `2μ/n`, the ridge curvature of the per-sample averaged objective.
    pub lambda_strong: Option<f64>,
    pub optimizer: Optimizer,
    pub with_bias: bool,
    /// Fixed noise multiplier in place of the accountant's. Runs with an
    /// override still report the budget the accountant assigns to that noise.
    pub noise_multiplier: Option<f64>,
    /// Record a trace point every this many steps (and at the last step);
    /// zero records the last step only.
    pub trace_every: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            loss: LossParams::default(),
            clip: 1.0,
            steps: 1000,
            q: 0.05,
            schedule: Schedule::Constant,
            learning_rate: 0.5,
            lambda_strong: None,
            optimizer: Optimizer::Plain,
            with_bias: true,
            noise_multiplier: None,
            trace_every: 1,
        }
    }
}

impl GpConfig {
    /// Sampling rate giving an expected batch of `batch` out of `n`.
    pub fn rate_for_batch(batch: usize, n: usize) -> f64 {
        (batch as f64 / n.max(1) as f64).min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(Error::domain(format!(
                "clipping bound R must be > 0, got {}",
                self.clip
            )));
        }
        if self.steps == 0 {
            return Err(Error::domain("steps T must be >= 1"));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::domain(format!(
                "sampling rate must lie in (0, 1], got {}",
                self.q
            )));
        }
        if !(self.loss.varsigma > 0.0) || !(self.loss.mu > 0.0) {
            return Err(Error::domain("gradient perturbation needs varsigma > 0 and mu > 0"));
        }
        if let Some(s) = self.noise_multiplier {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::domain(format!(
                    "noise multiplier must be finite and >= 0, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("c".into(), self.loss.c.to_string()),
            (
                "lambda".into(),
                self.loss.lambda.map_or("c_over_n".into(), |v| v.to_string()),
            ),
            ("mu".into(), self.loss.mu.to_string()),
            ("varsigma".into(), self.loss.varsigma.to_string()),
            ("clip".into(), self.clip.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("q".into(), self.q.to_string()),
            ("schedule".into(), self.schedule.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            (
                "lambda_strong".into(),
                self.lambda_strong.map_or("2mu_over_n".into(), |v| v.to_string()),
            ),
            ("with_bias".into(), self.with_bias.to_string()),
            ("batch_normalization".into(), "expected_batch_q_n".into()),
        ];
        match self.optimizer {
            Optimizer::Plain => out.push(("optimizer".into(), "plain".into())),
            Optimizer::Adam { beta1, beta2, gamma } => {
                out.push(("optimizer".into(), "adam".into()));
                out.push(("beta1".into(), beta1.to_string()));
                out.push(("beta2".into(), beta2.to_string()));
                out.push(("gamma".into(), gamma.to_string()));
            }
        }
        if let Some(s) = self.noise_multiplier {
            out.push(("noise_multiplier_override".into(), s.to_string()));
        }
        out
    }
}
