//! Non-private solvers.
//!
//! The dual coordinate solvers stop on the duality gap. Both duals have the
//! form `½‖W(α)‖² + linear(α)`, so `½‖W(α) − W*‖² ≤ gap` and the tolerance
//! is a certified bound `√(2·gap) ≤ tol` on the Frobenius distance to the
//! exact minimizer.

use ndarray::{Array1, Array2, ArrayView1};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{cs_objective, cs_subgrad, smoothed_grad, smoothed_loss, LinearModel, LossParams};
use crate::numerics::RandomSource;

/// Consecutive sweeps in which the dual objective does not move before a
/// dual solver gives up. Coordinate descent decreases it strictly until
/// rounding takes over, so a flat run means the gap cannot shrink further;
/// tolerances below roughly `1e-8` end this way. Degenerate problems can
/// crawl for thousands of sweeps with a stagnant gap while the dual still
/// improves; those keep going.
const STALL_SWEEPS: usize = 200;

#[derive(Debug)]
struct StallGuard {
    last: f64,
    flat: usize,
}

impl StallGuard {
    fn new() -> Self {
        Self {
            last: f64::INFINITY,
            flat: 0,
        }
    }

    /// Records the dual objective (minimized); true once it has stalled.
    fn stalled(&mut self, dual: f64) -> bool {
        if dual < self.last - 4.0 * f64::EPSILON * self.last.abs().max(1.0) {
            self.flat = 0;
        } else {
            self.flat += 1;
        }
        self.last = self.last.min(dual);
        self.flat >= STALL_SWEEPS
    }
}

/// Objective minimized by [`solve_allinone`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllInOneLoss {
    /// `½‖W‖² + (C/n) Σᵢ max(0, max_{k≠yᵢ} 1 − (s_{yᵢ} − s_k))`.
    CsHinge,
    /// The smoothed pairwise objective of [`smoothed_loss`].
    Smoothed,
}

/// Algorithm for the Crammer–Singer hinge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CsMethod {
    /// Exact dual coordinate ascent; bias-free models only.
    #[default]
    DualCoordinate,
    /// Full-batch subgradient descent with step `1/t` and iterate averaging.
    Subgradient,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    /// Sweeps (dual), iterations (gradient) or steps (subgradient).
    pub max_iter: usize,
    pub with_bias: bool,
    pub cs_method: CsMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
            with_bias: false,
            cs_method: CsMethod::DualCoordinate,
        }
    }
}

/// Value and iteration count recorded by a converged solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub model: LinearModel,
    pub iterations: usize,
    /// Final value of the stopping criterion.
    pub criterion: f64,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
}

fn check_training_set(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    data.require_all_classes()
}

/// Non-private all-in-one minimizer.
pub fn solve_allinone(
    data: &Dataset,
    loss: AllInOneLoss,
    params: &LossParams,
    opts: &SolverOptions,
    rng: &mut RandomSource,
) -> Result<LinearModel> {
    check_training_set(data)?;
    let outcome = match loss {
        AllInOneLoss::CsHinge => {
            let slack_weight = params.c / data.len() as f64;
            match opts.cs_method {
                CsMethod::DualCoordinate => {
                    if opts.with_bias {
                        return Err(Error::domain(
                            "the Crammer-Singer dual solver fits bias-free models; use the subgradient method",
                        ));
                    }
                    solve_cs_dual(data, slack_weight, opts.tol, opts.max_iter, rng)?
                }
                CsMethod::Subgradient => solve_cs_subgradient(data, params.c, opts)?,
            }
        }
        AllInOneLoss::Smoothed => solve_smoothed(data, params, opts)?,
    };
    Ok(outcome.model)
}

/// Crammer–Singer dual coordinate solver for `½‖W‖² + slack_weight · Σ ξᵢ`.
///
/// Each step solves one sample's `c`-variable subproblem exactly; samples are
/// visited in a fresh random order every sweep.
pub fn solve_cs_dual(
    data: &Dataset,
    slack_weight: f64,
    tol: f64,
    max_sweeps: usize,
    rng: &mut RandomSource,
) -> Result<SolveOutcome> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("solver tolerance must be > 0, got {tol}")));
    }
    if !(slack_weight >= 0.0) {
        return Err(Error::domain(format!("slack weight must be >= 0, got {slack_weight}")));
    }
    let (n, d, c) = (data.len(), data.dim(), data.num_classes());
    let x = data.features();
    let y = data.labels();
    let sq_norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    // alpha[i][m] ≤ 0 for m ≠ yᵢ, alpha[i][yᵢ] ≤ slack_weight, Σ_m alpha[i][m] = 0.
    let mut alpha = Array2::<f64>::zeros((n, c));
    let mut w = Array2::<f64>::zeros((d, c));
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; c];
    let mut trace = Vec::new();
    let mut criterion = f64::INFINITY;
    let mut guard = StallGuard::new();
    let mut polish_at = POLISH_EVERY;

    for sweep in 1..=max_sweeps {
        rng.shuffle(&mut order);
        for &i in &order {
            let a_i = sq_norms[i];
            let xi = x.row(i);
            let yi = y[i];
            if a_i == 0.0 {
                // A zero row never moves W and every margin is 1; the linear
                // dual is maximized with the full cap on one rival class.
                alpha.row_mut(i).fill(0.0);
                alpha[[i, yi]] = slack_weight;
                alpha[[i, (yi + 1) % c]] = -slack_weight;
                continue;
            }
            for (m, g) in grad.iter_mut().enumerate() {
                *g = xi.dot(&w.column(m)) + if m == yi { 0.0 } else { 1.0 };
            }
            let mut max_g = f64::NEG_INFINITY;
            let mut min_g = f64::INFINITY;
            for m in 0..c {
                max_g = max_g.max(grad[m]);
                let movable = if m == yi {
                    alpha[[i, m]] < slack_weight
                } else {
                    alpha[[i, m]] < 0.0
                };
                if movable {
                    min_g = min_g.min(grad[m]);
                }
            }
            if max_g - min_g <= 1e-15 {
                continue;
            }
            let b: Vec<f64> = (0..c).map(|m| grad[m] - a_i * alpha[[i, m]]).collect();
            let new = cs_subproblem(a_i, yi, slack_weight, &b);
            for m in 0..c {
                let delta = new[m] - alpha[[i, m]];
                if delta != 0.0 {
                    w.column_mut(m).scaled_add(delta, &xi);
                    alpha[[i, m]] = new[m];
                }
            }
        }
        // Rebuild W = Σᵢ xᵢ αᵢᵀ so the gap below refers to W(α) exactly.
        w = x.t().dot(&alpha);
        let model = LinearModel::from_parts(w.clone(), None)?;
        let scores = model.score_matrix(x);
        let gap = cs_gap(&scores, y, &alpha, slack_weight);
        let primal = cs_objective(&model, data, slack_weight);
        criterion = (2.0 * gap).sqrt();
        trace.push(primal);
        if criterion <= tol {
            return Ok(SolveOutcome {
                model,
                iterations: sweep,
                criterion,
                objective_trace: trace,
            });
        }
        // Dual: ½‖W‖² + Σᵢ Σ_{m≠yᵢ} α_im.
        let rivals: f64 = alpha.sum() - (0..n).map(|i| alpha[[i, y[i]]]).sum::<f64>();
        let dual = 0.5 * model.squared_norm() + rivals;
        let stalled = guard.stalled(dual);
        if criterion > tol && (stalled || sweep >= polish_at) {
            polish_at = next_polish(sweep);
            let polished = polish_cs(data, &alpha, &w, slack_weight);
            let shift = (polished.weights() - &w).mapv(|v| v * v).sum();
            let gap = 0.5 * shift + cs_gap(&polished.score_matrix(x), y, &alpha, slack_weight);
            criterion = criterion.min((2.0 * gap.max(0.0)).sqrt());
            if criterion <= tol {
                return Ok(SolveOutcome {
                    model,
                    iterations: sweep,
                    criterion,
                    objective_trace: trace,
                });
            }
        }
        if stalled {
            return Err(Error::NotConverged {
                iterations: sweep,
                criterion,
                last: Box::new(model),
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_sweeps,
        criterion,
        last: Box::new(LinearModel::from_parts(w, None)?),
    })
}

/// Duality gap as `Σᵢ [C ξᵢ − Σ_{m≠yᵢ} |α_im| γ_im]` with margins
/// `γ_im = 1 − (s_{i,yᵢ} − s_im)`. Every term is non-negative, so the sum
/// stays accurate near the optimum, unlike `primal + dual`.
fn cs_gap(scores: &Array2<f64>, y: &[usize], alpha: &Array2<f64>, slack_weight: f64) -> f64 {
    let mut gap = 0.0;
    for (i, s) in scores.rows().into_iter().enumerate() {
        let yi = y[i];
        let mut xi = 0.0f64;
        let mut paired = 0.0;
        for m in (0..s.len()).filter(|&m| m != yi) {
            let margin = 1.0 - (s[yi] - s[m]);
            xi = xi.max(margin);
            paired += alpha[[i, m]] * margin;
        }
        gap += (slack_weight * xi + paired).max(0.0);
    }
    gap
}

/// Sweeps before the first attempt to tighten the gap certificate with a
/// polished primal point. Later attempts wait half the sweeps done so far,
/// which keeps their cost a bounded fraction of the solve.
const POLISH_EVERY: usize = 20;

fn next_polish(sweep: usize) -> usize {
    sweep + POLISH_EVERY.max(sweep / 2)
}

/// Minimum-norm `z` with `A z ≈ r` by conjugate gradients on the normal
/// equations (CGLS), started from zero. `apply` computes `A z` and
/// `apply_t` computes `Aᵀ y`.
fn min_norm_correction(
    r: &[f64],
    dim: usize,
    max_iter: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    apply_t: impl Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut z = vec![0.0; dim];
    let mut res = r.to_vec();
    let stop = 1e-15 * dot(r, r).sqrt();
    let mut s = apply_t(&res);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    for _ in 0..max_iter {
        if gamma == 0.0 || dot(&res, &res).sqrt() <= stop {
            break;
        }
        let q = apply(&p);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let step = gamma / qq;
        z.iter_mut().zip(&p).for_each(|(zi, pi)| *zi += step * pi);
        res.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= step * qi);
        s = apply_t(&res);
        let next = dot(&s, &s);
        let beta = next / gamma;
        gamma = next;
        p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + beta * *pi);
    }
    z
}

/// Projects `W` onto the face of the primal selected by `α`: rivals holding
/// the full cap of a sample share one score, and samples below the cap sit
/// exactly on the margin. Near a degenerate optimum (tied rivals) `P(W(α))`
/// exceeds `P*` to first order in `‖W − W*‖`; on the face the excess is
/// second order, so `P(W') − D(α)` certifies far tighter tolerances. That
/// gap is evaluated as `½‖W' − W(α)‖²` plus the per-sample terms of
/// [`cs_gap`] at `W'`, all non-negative, which avoids cancellation.
fn polish_cs(data: &Dataset, alpha: &Array2<f64>, w: &Array2<f64>, slack_weight: f64) -> LinearModel {
    let (x, y) = (data.features(), data.labels());
    let (d, c) = (data.dim(), data.num_classes());
    // Rows `s_j(xᵢ) − s_k(xᵢ) = rhs`.
    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (i, &yi) in y.iter().enumerate() {
        let active: Vec<usize> = (0..c).filter(|&m| m != yi && alpha[[i, m]] < 0.0).collect();
        if active.is_empty() {
            continue;
        }
        if alpha[[i, yi]] >= slack_weight {
            rows.extend(active.windows(2).map(|p| (i, p[0], p[1], 0.0)));
        } else {
            rows.extend(active.iter().map(|&m| (i, yi, m, 1.0)));
        }
    }
    if rows.is_empty() {
        return LinearModel::from_parts(w.clone(), None).expect("shape of w is unchanged");
    }
    let apply = |z: &[f64]| -> Vec<f64> {
        rows.iter()
            .map(|&(i, j, k, _)| (0..d).map(|f| x[[i, f]] * (z[f * c + j] - z[f * c + k])).sum())
            .collect()
    };
    let apply_t = |v: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; d * c];
        for (&(i, j, k, _), &vt) in rows.iter().zip(v) {
            for f in 0..d {
                z[f * c + j] += vt * x[[i, f]];
                z[f * c + k] -= vt * x[[i, f]];
            }
        }
        z
    };
    let flat: Vec<f64> = w.iter().copied().collect();
    let current = apply(&flat);
    let r: Vec<f64> = rows.iter().zip(&current).map(|(row, cur)| row.3 - cur).collect();
    let z = min_norm_correction(&r, d * c, 2 * d * c + 20, apply, apply_t);
    let wp = Array2::from_shape_vec((d, c), flat.iter().zip(&z).map(|(a, b)| a + b).collect()).expect("d × c entries");
    LinearModel::from_parts(wp, None).expect("shape of w is unchanged")
}

fn binary_gap(scores: &Array1<f64>, signs: &[f64], alpha: &[f64], slack_weight: f64) -> f64 {
    scores
        .iter()
        .zip(signs)
        .zip(alpha)
        .map(|((fi, si), ai)| {
            let h = 1.0 - si * fi;
            (slack_weight * h.max(0.0) - ai * h).max(0.0)
        })
        .sum()
}

/// Binary counterpart of [`polish_cs`]: samples strictly inside `(0, C)`
/// are put exactly on the margin.
fn polish_binary(
    features: &Array2<f64>,
    signs: &[f64],
    alpha: &[f64],
    w: &Array1<f64>,
    slack_weight: f64,
) -> Array1<f64> {
    let free: Vec<usize> = (0..alpha.len())
        .filter(|&i| alpha[i] > 0.0 && alpha[i] < slack_weight)
        .collect();
    if free.is_empty() {
        return w.clone();
    }
    let d = features.ncols();
    let apply = |z: &[f64]| -> Vec<f64> {
        free.iter()
            .map(|&i| signs[i] * (0..d).map(|f| features[[i, f]] * z[f]).sum::<f64>())
            .collect()
    };
    let apply_t = |v: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; d];
        for (&i, &vt) in free.iter().zip(v) {
            for (f, zf) in z.iter_mut().enumerate() {
                *zf += vt * signs[i] * features[[i, f]];
            }
        }
        z
    };
    let current = apply(w.as_slice().expect("contiguous"));
    let r: Vec<f64> = current.iter().map(|v| 1.0 - v).collect();
    let z = min_norm_correction(&r, d, 2 * d + 20, apply, apply_t);
    w + &Array1::from(z)
}

/// Exact minimizer of `½A Σ αₘ² + Σ Bₘ αₘ` subject to `Σ αₘ = 0`,
/// `α_y ≤ cap`, `αₘ ≤ 0` otherwise.
fn cs_subproblem(a: f64, y: usize, cap: f64, b: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = b.to_vec();
    d[y] += a * cap;
    d.sort_by(|p, q| q.total_cmp(p));
    let mut beta = d[0] - a * cap;
    let mut r = 1;
    while r < d.len() && beta < r as f64 * d[r] {
        beta += d[r];
        r += 1;
    }
    beta /= r as f64;
    let mut out: Vec<f64> = b
        .iter()
        .enumerate()
        .map(|(m, &bm)| {
            let v = (beta - bm) / a;
            if m == y {
                v.min(cap)
            } else {
                v.min(0.0)
            }
        })
        .collect();
    // Dividing by a small `a` amplifies rounding; restore `Σ αₘ = 0` exactly
    // or the gap certificate picks up the infeasibility.
    let clipped = (beta - b[y]) / a >= cap;
    let rivals: f64 = out.iter().enumerate().filter(|&(m, _)| m != y).map(|(_, v)| v).sum();
    if !clipped && -rivals < cap {
        out[y] = -rivals;
    } else {
        out[y] = cap;
        let active: Vec<usize> = (0..out.len()).filter(|&m| m != y && out[m] < 0.0).collect();
        let shift = (-cap - rivals) / active.len() as f64;
        for m in active {
            out[m] = (out[m] + shift).min(0.0);
        }
    }
    out
}

/// Full-batch subgradient descent on `½‖W‖² + (C/n) Σ ξᵢ` with step `1/t`
/// (the ridge term is 1-strongly convex) and running iterate averaging.
/// Stops once the averaged objective improves by less than `tol` over a
/// 50-step window.
fn solve_cs_subgradient(data: &Dataset, c_param: f64, opts: &SolverOptions) -> Result<SolveOutcome> {
    const WINDOW: usize = 50;
    let n = data.len();
    let slack_weight = c_param / n as f64;
    let mut w = LinearModel::zeros(data.dim(), data.num_classes(), opts.with_bias);
    let mut avg = w.clone();
    let mut trace = Vec::new();
    let mut window_start = cs_objective(&avg, data, slack_weight);
    let mut criterion = f64::INFINITY;
    for t in 1..=opts.max_iter {
        let mut g = LinearModel::zeros(data.dim(), data.num_classes(), opts.with_bias);
        for i in 0..n {
            g.axpy(1.0, &cs_subgrad(&w, data.row(i), data.labels()[i], c_param, n));
        }
        w.axpy(-1.0 / t as f64, &g);
        // avg ← avg + (w − avg)/t
        avg.scale(1.0 - 1.0 / t as f64);
        avg.axpy(1.0 / t as f64, &w);
        let obj = cs_objective(&avg, data, slack_weight);
        trace.push(obj);
        if t % WINDOW == 0 {
            criterion = window_start - obj;
            if criterion.abs() < opts.tol {
                return Ok(SolveOutcome {
                    model: avg,
                    iterations: t,
                    criterion: criterion.abs(),
                    objective_trace: trace,
                });
            }
            window_start = obj;
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        criterion,
        last: Box::new(avg),
    })
}

/// Gradient descent on the smoothed objective with Barzilai–Borwein trial
/// steps and backtracking, until `‖∇F‖ ≤ tol`.
///
/// A trial step is accepted under the Armijo condition, or when the gradient
/// at the trial point still has positive inner product with the current one;
/// by convexity the latter certifies a decrease even when the Armijo
/// difference is below rounding.
pub fn solve_smoothed(data: &Dataset, params: &LossParams, opts: &SolverOptions) -> Result<SolveOutcome> {
    check_training_set(data)?;
    if !(opts.tol > 0.0) {
        return Err(Error::domain(format!("solver tolerance must be > 0, got {}", opts.tol)));
    }
    let mut w = LinearModel::zeros(data.dim(), data.num_classes(), opts.with_bias);
    let mut f = smoothed_loss(&w, data, params);
    let mut g = smoothed_grad(&w, data, params)?;
    let mut step = 1.0 / data.len() as f64;
    let mut trace = vec![f];
    for it in 0..opts.max_iter {
        let gnorm2 = g.squared_norm();
        if gnorm2.sqrt() <= opts.tol {
            return Ok(SolveOutcome {
                model: w,
                iterations: it,
                criterion: gnorm2.sqrt(),
                objective_trace: trace,
            });
        }
        let mut accepted = None;
        for _ in 0..100 {
            let mut trial = w.clone();
            trial.axpy(-step, &g);
            let f_trial = smoothed_loss(&trial, data, params);
            let g_trial = smoothed_grad(&trial, data, params)?;
            let inner = dot(&g_trial, &g);
            if f_trial <= f - 1e-4 * step * gnorm2 || (inner > 0.0 && f_trial.is_finite()) {
                accepted = Some((trial, f_trial, g_trial));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f_next, g_next)) = accepted else {
            return Err(Error::NotConverged {
                iterations: it,
                criterion: gnorm2.sqrt(),
                last: Box::new(w),
            });
        };
        let s_norm2 = step * step * gnorm2;
        let mut y = g_next.clone();
        y.axpy(-1.0, &g);
        let sy = -step * dot(&g, &y);
        step = if sy > 0.0 { s_norm2 / sy } else { 2.0 * step };
        w = next;
        f = f_next;
        g = g_next;
        trace.push(f);
    }
    let criterion = g.norm();
    if criterion <= opts.tol {
        return Ok(SolveOutcome {
            model: w,
            iterations: opts.max_iter,
            criterion,
            objective_trace: trace,
        });
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        criterion,
        last: Box::new(w),
    })
}

fn dot(a: &LinearModel, b: &LinearModel) -> f64 {
    let mut s: f64 = a.weights().iter().zip(b.weights()).map(|(p, q)| p * q).sum();
    if let (Some(x), Some(y)) = (a.bias(), b.bias()) {
        s += x.dot(y);
    }
    s
}

/// Dual coordinate descent for the bias-free binary SVM
/// `½‖w‖² + slack_weight · Σ max(0, 1 − yᵢ wᵀxᵢ)` with `yᵢ ∈ {−1, +1}`.
pub fn solve_binary_dual(
    features: &Array2<f64>,
    signs: &[f64],
    slack_weight: f64,
    tol: f64,
    max_sweeps: usize,
    rng: &mut RandomSource,
) -> Result<Array1<f64>> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("solver tolerance must be > 0, got {tol}")));
    }
    let n = signs.len();
    if features.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            found: features.nrows(),
        });
    }
    let q_diag: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = Array1::<f64>::zeros(features.ncols());
    let mut order: Vec<usize> = (0..n).collect();
    let mut criterion = f64::INFINITY;
    let mut guard = StallGuard::new();
    let mut polish_at = POLISH_EVERY;
    let mut sweeps = 0;
    for sweep in 1..=max_sweeps {
        sweeps = sweep;
        rng.shuffle(&mut order);
        for &i in &order {
            if q_diag[i] == 0.0 {
                // Margin is always 1 and w does not depend on αᵢ.
                alpha[i] = slack_weight;
                continue;
            }
            let xi: ArrayView1<'_, f64> = features.row(i);
            let g = signs[i] * w.dot(&xi) - 1.0;
            let new = (alpha[i] - g / q_diag[i]).clamp(0.0, slack_weight);
            let delta = new - alpha[i];
            if delta != 0.0 {
                w.scaled_add(delta * signs[i], &xi);
                alpha[i] = new;
            }
        }
        // Rebuild w = Σᵢ αᵢ yᵢ xᵢ, then sum the non-negative gap terms
        // `C·max(0, hᵢ) − αᵢ hᵢ` with `hᵢ = 1 − yᵢ wᵀxᵢ`.
        let coef = Array1::from_iter(alpha.iter().zip(signs).map(|(a, s)| a * s));
        w = features.t().dot(&coef);
        let gap = binary_gap(&features.dot(&w), signs, &alpha, slack_weight);
        criterion = (2.0 * gap).sqrt();
        if criterion <= tol {
            return Ok(w);
        }
        let dual = 0.5 * w.dot(&w) - alpha.iter().sum::<f64>();
        let stalled = guard.stalled(dual);
        if stalled || sweep >= polish_at {
            polish_at = next_polish(sweep);
            let polished = polish_binary(features, signs, &alpha, &w, slack_weight);
            // P(w') − D(α) = ½‖w' − w‖² + Σᵢ [C·max(0, hᵢ) − αᵢ hᵢ] at w'.
            let shift = (&polished - &w).mapv(|v| v * v).sum();
            let gap = 0.5 * shift + binary_gap(&features.dot(&polished), signs, &alpha, slack_weight);
            criterion = criterion.min((2.0 * gap.max(0.0)).sqrt());
            if criterion <= tol {
                return Ok(w);
            }
        }
        if stalled {
            break;
        }
    }
    let (d, mut last) = (features.ncols(), LinearModel::zeros(features.ncols(), 1, false));
    last.weights_mut().column_mut(0).assign(&w);
    debug_assert_eq!(last.dim(), d);
    Err(Error::NotConverged {
        iterations: sweeps,
        criterion,
        last: Box::new(last),
    })
}
