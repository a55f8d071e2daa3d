use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{cs_objective, LinearModel};
use crate::numerics::{compensated_sum, RandomSource};
use crate::privacy::{
    analytic_gaussian_delta, calibrate_analytic_gaussian, compose_budgets, perturb_weights, sigma_for_budget,
    split_budget_ovr, weight_sensitivity, PrivacyBudget,
};

use super::sgd::{
    validate_rule, BinarySmoothedObjective, CrossEntropyObjective, ExampleObjective, NoisyDescent, SmoothedObjective,
    StepRule,
};
use super::solver::{solve_binary_dual, solve_cs_dual};
use super::{GpConfig, Optimizer, TracePoint, TrainReport, WpConfig};

fn check_train(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    data.require_all_classes()
}

fn point(step: usize, loss: f64, model: &LinearModel, train: &Dataset, eval: Option<&Dataset>) -> TracePoint {
    TracePoint {
        step,
        train_loss: loss,
        train_accuracy: model.accuracy(train),
        test_accuracy: eval.map(|e| model.accuracy(e)),
    }
}

fn signs_for(data: &Dataset, positive: usize) -> Vec<f64> {
    data.labels()
        .iter()
        .map(|&y| if y == positive { 1.0 } else { -1.0 })
        .collect()
}

/// Stacks per-class binary `(w_k, b_k)` into one model so that its argmax is
/// the one-vs-rest decision.
fn stack_binary(d: usize, parts: &[(Array1<f64>, f64)], with_bias: bool) -> Result<LinearModel> {
    let c = parts.len();
    let mut w = Array2::zeros((d, c));
    for (k, (wk, _)) in parts.iter().enumerate() {
        w.column_mut(k).assign(wk);
    }
    let b = with_bias.then(|| Array1::from_iter(parts.iter().map(|p| p.1)));
    LinearModel::from_parts(w, b)
}

/// Confirms the analytic ε of noise `sigma` at `delta` is within `target.ε`.
/// Checks the analytic Gaussian condition itself at the target `ε`. Going
/// through the numerical inverse `ε(σ)` instead would trip on its bisection
/// tolerance.
fn verify_wp(sensitivity: f64, sigma: f64, target: &PrivacyBudget) -> Result<()> {
    let delta = analytic_gaussian_delta(sensitivity, sigma, target.epsilon);
    if delta > target.delta {
        return Err(Error::Verification(format!(
            "calibrated noise gives delta {delta} above the target {} at epsilon {}",
            target.delta, target.epsilon
        )));
    }
    Ok(())
}

/// All-in-one weight perturbation: exact Crammer–Singer training, then
/// `N(0, σ²)` on every weight with `σ` calibrated to `Δ_w = 2(C/n)√λ_max`.
pub fn pmsvm_wp(
    train: &Dataset,
    budget: &PrivacyBudget,
    cfg: &WpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    check_train(train)?;
    train.require_unit_ball()?;
    let solved = solve_cs_dual(train, cfg.c_over_n, cfg.tol, cfg.max_iter, &mut rng.split("solver"))?;
    let lambda = cfg.encoding.lambda_max(train.num_classes());
    let sens = weight_sensitivity(cfg.c_over_n, lambda)?;
    let (model, sigma) = if sens.delta_w == 0.0 {
        (solved.model, 0.0)
    } else {
        let sigma = calibrate_analytic_gaussian(sens.delta_w, budget)?;
        verify_wp(sens.delta_w, sigma, budget)?;
        (perturb_weights(&solved.model, sigma, &mut rng.split("noise"))?, sigma)
    };
    let loss = cs_objective(&model, train, cfg.c_over_n);
    let mut config = cfg.echo();
    config.push(("lambda_max".into(), lambda.to_string()));
    Ok(TrainReport {
        method: "pmsvm_wp".into(),
        seed: rng.seed(),
        trace: vec![point(solved.iterations, loss, &model, train, eval)],
        model,
        requested: Some(*budget),
        consumed: Some(if sens.delta_w == 0.0 {
            PrivacyBudget::zero()
        } else {
            *budget
        }),
        noise_sigma: sigma,
        sensitivity: Some(sens.delta_w),
        iterations: solved.iterations,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config,
    })
}

/// One-vs-rest weight perturbation: `c` binary SVMs, each perturbed at the
/// split budget `(ε/c, δ/c)` with `Δ = 2C/n`.
pub fn ovr_wp(
    train: &Dataset,
    total: &PrivacyBudget,
    cfg: &WpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    check_train(train)?;
    train.require_unit_ball()?;
    let c = train.num_classes();
    let share = split_budget_ovr(total, c)?;
    let sens = weight_sensitivity(cfg.c_over_n, 1.0)?;
    let sigma = if sens.delta_w == 0.0 {
        0.0
    } else {
        let s = calibrate_analytic_gaussian(sens.delta_w, &share)?;
        verify_wp(sens.delta_w, s, &share)?;
        s
    };
    let mut parts = Vec::with_capacity(c);
    for k in 0..c {
        let signs = signs_for(train, k);
        let w = solve_binary_dual(
            train.features(),
            &signs,
            cfg.c_over_n,
            cfg.tol,
            cfg.max_iter,
            &mut rng.split_indexed("solver", k as u64),
        )?;
        parts.push((w, 0.0));
    }
    let clean = stack_binary(train.dim(), &parts, false)?;
    let model = perturb_weights(&clean, sigma, &mut rng.split("noise"))?;
    let loss = binary_objective_sum(&model, train, cfg.c_over_n);
    let consumed = if sens.delta_w == 0.0 {
        PrivacyBudget::zero()
    } else {
        compose_budgets(&vec![share; c])?
    };
    let mut config = cfg.echo();
    config.push(("share_epsilon".into(), share.epsilon.to_string()));
    config.push(("share_delta".into(), share.delta.to_string()));
    Ok(TrainReport {
        method: "ovr_wp".into(),
        seed: rng.seed(),
        trace: vec![point(1, loss, &model, train, eval)],
        model,
        requested: Some(*total),
        consumed: Some(consumed),
        noise_sigma: sigma,
        sensitivity: Some(sens.delta_w),
        iterations: 1,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config,
    })
}

/// Sum over classes of the bias-free binary hinge objectives.
fn binary_objective_sum(model: &LinearModel, data: &Dataset, slack_weight: f64) -> f64 {
    let n = data.len() as f64;
    compensated_sum((0..model.num_classes()).map(|k| {
        let signs = signs_for(data, k);
        crate::model::binary_hinge_loss(
            model.weights().column(k),
            0.0,
            data.features(),
            &signs,
            slack_weight * n,
        )
    }))
}

/// Non-private all-in-one Crammer–Singer SVM.
pub fn nonprivate_cs(
    train: &Dataset,
    cfg: &WpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    check_train(train)?;
    let solved = solve_cs_dual(train, cfg.c_over_n, cfg.tol, cfg.max_iter, &mut rng.split("solver"))?;
    let loss = cs_objective(&solved.model, train, cfg.c_over_n);
    Ok(TrainReport {
        method: "nonprivate_cs".into(),
        seed: rng.seed(),
        trace: vec![point(solved.iterations, loss, &solved.model, train, eval)],
        model: solved.model,
        requested: None,
        consumed: None,
        noise_sigma: 0.0,
        sensitivity: None,
        iterations: solved.iterations,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.echo(),
    })
}

/// Non-private one-vs-rest binary SVMs.
pub fn nonprivate_ovr(
    train: &Dataset,
    cfg: &WpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    check_train(train)?;
    let mut parts = Vec::new();
    for k in 0..train.num_classes() {
        let signs = signs_for(train, k);
        let w = solve_binary_dual(
            train.features(),
            &signs,
            cfg.c_over_n,
            cfg.tol,
            cfg.max_iter,
            &mut rng.split_indexed("solver", k as u64),
        )?;
        parts.push((w, 0.0));
    }
    let model = stack_binary(train.dim(), &parts, false)?;
    let loss = binary_objective_sum(&model, train, cfg.c_over_n);
    Ok(TrainReport {
        method: "nonprivate_ovr".into(),
        seed: rng.seed(),
        trace: vec![point(1, loss, &model, train, eval)],
        model,
        requested: None,
        consumed: None,
        noise_sigma: 0.0,
        sensitivity: None,
        iterations: 1,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.echo(),
    })
}

fn step_rule(cfg: &GpConfig, sigma: f64, n: usize) -> Result<StepRule> {
    let rule = StepRule {
        clip: cfg.clip,
        q: cfg.q,
        sigma,
        schedule: cfg.schedule,
        learning_rate: cfg.learning_rate,
        lambda_strong: cfg.lambda_strong.unwrap_or(2.0 * cfg.loss.mu / n as f64),
        total_steps: cfg.steps,
        optimizer: cfg.optimizer,
    };
    validate_rule(&rule)?;
    Ok(rule)
}

fn noise_for(cfg: &GpConfig, budget: &PrivacyBudget) -> Result<f64> {
    match cfg.noise_multiplier {
        Some(s) => Ok(s),
        None => sigma_for_budget(cfg.q, cfg.steps as u64, budget),
    }
}

fn should_trace(cfg: &GpConfig, t: usize) -> bool {
    t == cfg.steps || (cfg.trace_every > 0 && t.is_multiple_of(cfg.trace_every))
}

/// Spent budget of a finished trajectory; with the accountant's own noise it
/// must lie within the target.
fn spent(ledger: &crate::privacy::RdpLedger, target: &PrivacyBudget, checked: bool) -> Result<PrivacyBudget> {
    let epsilon = ledger.epsilon(target.delta)?;
    if checked && epsilon > target.epsilon {
        return Err(Error::Verification(format!(
            "accountant reports epsilon {epsilon} above the target {}",
            target.epsilon
        )));
    }
    Ok(PrivacyBudget {
        epsilon,
        delta: target.delta,
    })
}

/// DP-SGD on a multi-class objective whose parameters flatten a [`LinearModel`].
#[allow(clippy::too_many_arguments)]
fn multiclass_gp(
    method: &str,
    objective: &dyn ExampleObjective,
    to_model: &dyn Fn(&[f64]) -> Result<LinearModel>,
    train: &Dataset,
    budget: &PrivacyBudget,
    cfg: &GpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    let start = Instant::now();
    let sigma = noise_for(cfg, budget)?;
    let rule = step_rule(cfg, sigma, train.len())?;
    let mut state = NoisyDescent::new(objective.num_params(), &rng.split("dpsgd"));
    let mut trace = Vec::new();
    for t in 1..=cfg.steps {
        state.step(objective, &rule)?;
        if should_trace(cfg, t) {
            let model = to_model(&state.theta)?;
            trace.push(point(t, objective.loss(&state.theta), &model, train, eval));
        }
    }
    if state.max_clipped_norm > cfg.clip + 1e-9 {
        return Err(Error::Verification(format!(
            "clipped gradient norm {} exceeds R = {}",
            state.max_clipped_norm, cfg.clip
        )));
    }
    let consumed = spent(&state.ledger, budget, cfg.noise_multiplier.is_none())?;
    let mut config = cfg.echo();
    config.push(("max_clipped_norm".into(), state.max_clipped_norm.to_string()));
    Ok(TrainReport {
        method: method.into(),
        seed: rng.seed(),
        model: to_model(&state.theta)?,
        requested: Some(*budget),
        consumed: Some(consumed),
        noise_sigma: sigma,
        sensitivity: None,
        iterations: cfg.steps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config,
        trace,
    })
}

fn gp_checks(train: &Dataset, cfg: &GpConfig) -> Result<()> {
    cfg.validate()?;
    check_train(train)
}

/// All-in-one gradient perturbation with plain noisy steps.
pub fn pmsvm_gp(
    train: &Dataset,
    budget: &PrivacyBudget,
    cfg: &GpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    gp_checks(train, cfg)?;
    if cfg.optimizer != Optimizer::Plain {
        return Err(Error::domain("pmsvm_gp takes plain steps; use pmsvm_agp for adam"));
    }
    smoothed_gp("pmsvm_gp", train, budget, cfg, rng, eval)
}

/// All-in-one gradient perturbation with bias-corrected adaptive moments.
/// Same noisy gradients and privacy cost as [`pmsvm_gp`].
pub fn pmsvm_agp(
    train: &Dataset,
    budget: &PrivacyBudget,
    cfg: &GpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    gp_checks(train, cfg)?;
    if !matches!(cfg.optimizer, Optimizer::Adam { .. }) {
        return Err(Error::domain("pmsvm_agp needs the adam optimizer"));
    }
    smoothed_gp("pmsvm_agp", train, budget, cfg, rng, eval)
}

fn smoothed_gp(
    method: &str,
    train: &Dataset,
    budget: &PrivacyBudget,
    cfg: &GpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    let objective = SmoothedObjective {
        data: train,
        params: cfg.loss,
        with_bias: cfg.with_bias,
    };
    multiclass_gp(
        method,
        &objective,
        &|t| objective.model(t),
        train,
        budget,
        cfg,
        rng,
        eval,
    )
}

/// Linear softmax layer trained by the same DP-SGD loop.
pub fn linear_ce_gp(
    train: &Dataset,
    budget: &PrivacyBudget,
    cfg: &GpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    gp_checks(train, cfg)?;
    let objective = CrossEntropyObjective {
        data: train,
        mu: cfg.loss.mu,
        with_bias: cfg.with_bias,
    };
    multiclass_gp(
        "linear_ce_gp",
        &objective,
        &|t| objective.model(t),
        train,
        budget,
        cfg,
        rng,
        eval,
    )
}

/// One-vs-rest gradient perturbation: `c` binary smoothed-hinge DP-SGD runs,
/// each at `(ε/c, δ/c)`, stepped in lockstep.
pub fn ovr_gp(
    train: &Dataset,
    total: &PrivacyBudget,
    cfg: &GpConfig,
    rng: &RandomSource,
    eval: Option<&Dataset>,
) -> Result<TrainReport> {
    let start = Instant::now();
    gp_checks(train, cfg)?;
    let c = train.num_classes();
    let share = split_budget_ovr(total, c)?;
    let sigma = noise_for(cfg, &share)?;
    let rule = step_rule(cfg, sigma, train.len())?;
    let objectives: Vec<BinarySmoothedObjective<'_>> = (0..c)
        .map(|k| BinarySmoothedObjective::new(train, k, cfg.loss, cfg.with_bias))
        .collect();
    let mut states: Vec<NoisyDescent> = (0..c)
        .map(|k| NoisyDescent::new(objectives[k].num_params(), &rng.split_indexed("class", k as u64)))
        .collect();
    let d = train.dim();
    let stack = |states: &[NoisyDescent]| {
        let parts: Vec<(Array1<f64>, f64)> = states
            .iter()
            .map(|s| {
                let b = if cfg.with_bias { s.theta[d] } else { 0.0 };
                (Array1::from(s.theta[..d].to_vec()), b)
            })
            .collect();
        stack_binary(d, &parts, cfg.with_bias)
    };
    let mut trace = Vec::new();
    for t in 1..=cfg.steps {
        for (state, objective) in states.iter_mut().zip(&objectives) {
            state.step(objective, &rule)?;
        }
        if should_trace(cfg, t) {
            let loss = compensated_sum(states.iter().zip(&objectives).map(|(s, o)| o.loss(&s.theta)));
            trace.push(point(t, loss, &stack(&states)?, train, eval));
        }
    }
    let max_clipped = states.iter().map(|s| s.max_clipped_norm).fold(0.0, f64::max);
    if max_clipped > cfg.clip + 1e-9 {
        return Err(Error::Verification(format!(
            "clipped gradient norm {max_clipped} exceeds R = {}",
            cfg.clip
        )));
    }
    let spent_each = states
        .iter()
        .map(|s| spent(&s.ledger, &share, cfg.noise_multiplier.is_none()))
        .collect::<Result<Vec<_>>>()?;
    let mut config = cfg.echo();
    config.push(("share_epsilon".into(), share.epsilon.to_string()));
    config.push(("share_delta".into(), share.delta.to_string()));
    config.push(("max_clipped_norm".into(), max_clipped.to_string()));
    Ok(TrainReport {
        method: "ovr_gp".into(),
        seed: rng.seed(),
        model: stack(&states)?,
        requested: Some(*total),
        consumed: Some(compose_budgets(&spent_each)?),
        noise_sigma: sigma,
        sensitivity: None,
        iterations: cfg.steps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config,
        trace,
    })
}
