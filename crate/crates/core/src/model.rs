//! Linear multi-class model, decision rule, and every loss the trainers use.
//!
//! Scores are `s = Wᵀx (+ b)` with `W` stored as a `d × c` matrix whose
//! columns are the class weight vectors. Gradients are returned in the same
//! shape as the model, so a [`LinearModel`] doubles as a gradient record.
//!
//! Per-example gradients carry a `1/n` share of every regularizer so that
//! summing them over the dataset reproduces the full-objective gradient.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Weight matrix `W ∈ R^{d×c}` and optional bias `b ∈ R^c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    weights: Array2<f64>,
    bias: Option<Array1<f64>>,
}

impl LinearModel {
    pub fn zeros(d: usize, c: usize, with_bias: bool) -> Self {
        Self {
            weights: Array2::zeros((d, c)),
            bias: with_bias.then(|| Array1::zeros(c)),
        }
    }

    pub fn from_parts(weights: Array2<f64>, bias: Option<Array1<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weights.ncols() {
                return Err(Error::Dimension {
                    expected: weights.ncols(),
                    found: b.len(),
                });
            }
        }
        let finite = weights.iter().chain(bias.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("model entries must be finite"));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&Array1<f64>> {
        self.bias.as_ref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Array1<f64>> {
        self.bias.as_mut()
    }

    pub fn with_bias(&self) -> bool {
        self.bias.is_some()
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    /// Number of scalar parameters (`d·c`, plus `c` with bias).
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    /// Row-major weights followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.weights.iter().copied().collect();
        if let Some(b) = &self.bias {
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn from_flat(d: usize, c: usize, with_bias: bool, flat: &[f64]) -> Result<Self> {
        let expected = d * c + if with_bias { c } else { 0 };
        if flat.len() != expected {
            return Err(Error::Dimension {
                expected,
                found: flat.len(),
            });
        }
        let weights =
            Array2::from_shape_vec((d, c), flat[..d * c].to_vec()).map_err(|e| Error::invalid(e.to_string()))?;
        let bias = with_bias.then(|| Array1::from(flat[d * c..].to_vec()));
        Ok(Self { weights, bias })
    }

    pub fn squared_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.bias.iter().flatten())
            .map(|v| v * v)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    /// `self += alpha · other` over every parameter.
    pub fn axpy(&mut self, alpha: f64, other: &LinearModel) {
        self.weights.scaled_add(alpha, &other.weights);
        if let (Some(b), Some(ob)) = (self.bias.as_mut(), other.bias.as_ref()) {
            b.scaled_add(alpha, ob);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.weights.mapv_inplace(|v| v * alpha);
        if let Some(b) = self.bias.as_mut() {
            b.mapv_inplace(|v| v * alpha);
        }
    }

    fn check_dim(&self, x: &ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Class scores `Wᵀx (+ b)`.
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut s = self.weights.t().dot(&x);
        if let Some(b) = &self.bias {
            s += b;
        }
        s
    }

    /// Score matrix for every row of `features` (`n × c`).
    pub fn score_matrix(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut s = features.dot(&self.weights);
        if let Some(b) = &self.bias {
            s += b;
        }
        s
    }

    /// Fraction of rows whose [`predict`] matches the label.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let scores = self.score_matrix(data.features());
        let correct = scores
            .rows()
            .into_iter()
            .zip(data.labels())
            .filter(|(s, &y)| argmax(s.as_slice().unwrap_or(&s.to_vec())) == y)
            .count();
        correct as f64 / data.len() as f64
    }

    /// Plain-text form: a `d c with_bias` header, `d` rows of `c` weights,
    /// then the bias row if present. Values use 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.dim(), self.num_classes(), u8::from(self.with_bias()));
        let write_row = |out: &mut String, row: &mut dyn Iterator<Item = &f64>| {
            let cells: Vec<String> = row.map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        };
        for row in self.weights.rows() {
            write_row(&mut out, &mut row.iter());
        }
        if let Some(b) = &self.bias {
            write_row(&mut out, &mut b.iter());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            source_name: "model".into(),
            line,
            column: 0,
            message: msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty model".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(1, format!("bad header: {e}")))?;
        let [d, c, flag] = head[..] else {
            return Err(bad(1, format!("header needs 3 fields, found {}", head.len())));
        };
        let with_bias = match flag {
            0 => false,
            1 => true,
            _ => return Err(bad(1, format!("with_bias must be 0 or 1, got {flag}"))),
        };
        let rows = d + usize::from(with_bias);
        let mut flat = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            let (i, line) = lines.next().ok_or_else(|| bad(rows + 1, "truncated model".into()))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(i + 1, format!("bad value: {e}")))?;
            if vals.len() != c {
                return Err(bad(i + 1, format!("expected {c} values, found {}", vals.len())));
            }
            flat.extend(vals);
        }
        let model = Self::from_flat(d, c, with_bias, &flat)?;
        Self::from_parts(model.weights, model.bias)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// `argmax_k (w_kᵀx + b_k)` with lowest-index tie-break.
pub fn predict(model: &LinearModel, x: ArrayView1<'_, f64>) -> Result<usize> {
    model.check_dim(&x)?;
    Ok(argmax(&model.scores(x).to_vec()))
}

/// Loss hyperparameters for the smoothed all-in-one objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParams {
    /// Slack weight `C`.
    pub c: f64,
    /// Pairwise regularizer weight; `None` means `C/n`.
    pub lambda: Option<f64>,
    /// Ridge weight `μ`.
    pub mu: f64,
    /// Smoothing `ς`; zero selects the exact hinge.
    pub varsigma: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            lambda: None,
            mu: 1e-4,
            varsigma: 0.5,
        }
    }
}

impl LossParams {
    /// Effective pairwise weight for a dataset of `n` samples.
    pub fn pairwise_weight(&self, n: usize) -> f64 {
        self.lambda.unwrap_or(self.c / n.max(1) as f64)
    }
}

/// `γ_k = 1 − (s_y − s_k)` for every `k ≠ y`, in increasing `k`.
pub fn margins(model: &LinearModel, x: ArrayView1<'_, f64>, y: usize) -> Vec<f64> {
    let s = model.scores(x);
    (0..s.len()).filter(|&k| k != y).map(|k| 1.0 - (s[y] - s[k])).collect()
}

/// `g_ς(γ) = (γ + √(γ² + ς²)) / 2`, evaluated without cancellation for `γ < 0`.
pub fn smooth_hinge(gamma: f64, varsigma: f64) -> f64 {
    if varsigma == 0.0 {
        return gamma.max(0.0);
    }
    let r = gamma.hypot(varsigma);
    if gamma >= 0.0 {
        0.5 * (gamma + r)
    } else {
        0.5 * varsigma * varsigma / (r - gamma)
    }
}

/// `g'_ς(γ) = (γ + √(γ² + ς²)) / (2√(γ² + ς²))`.
pub fn smooth_hinge_slope(gamma: f64, varsigma: f64) -> f64 {
    let r = gamma.hypot(varsigma);
    if gamma >= 0.0 {
        0.5 * (1.0 + gamma / r)
    } else {
        0.5 * varsigma * varsigma / (r * (r - gamma))
    }
}

fn regularizer_value(model: &LinearModel, pairwise: f64, mu: f64) -> f64 {
    let w = model.weights();
    let c = model.num_classes();
    let mut pair = 0.0;
    if pairwise != 0.0 {
        for k in 0..c {
            for l in k + 1..c {
                let diff = &w.column(k) - &w.column(l);
                pair += diff.dot(&diff);
            }
        }
    }
    pairwise * pair + mu * model.squared_norm()
}

/// Adds `scale ·` (gradient of `λ Σ_{k<l} ‖w_k − w_l‖² + μ(‖W‖² + ‖b‖²)`) into `grad`.
fn add_regularizer_grad(grad: &mut LinearModel, model: &LinearModel, pairwise: f64, mu: f64, scale: f64) {
    let w = model.weights();
    let c = model.num_classes() as f64;
    let col_sum = w.sum_axis(Axis(1));
    for (k, mut gcol) in grad.weights.columns_mut().into_iter().enumerate() {
        let wk = w.column(k);
        for j in 0..wk.len() {
            let pair = 2.0 * pairwise * (c * wk[j] - col_sum[j]);
            gcol[j] += scale * (pair + 2.0 * mu * wk[j]);
        }
    }
    if let (Some(gb), Some(b)) = (grad.bias.as_mut(), model.bias()) {
        gb.scaled_add(scale * 2.0 * mu, b);
    }
}

/// Full smoothed objective
/// `Σᵢ Σ_{k≠yᵢ} g_ς(γ_ik) + λ Σ_{k<l} ‖w_k − w_l‖² + μ(‖W‖²_F + ‖b‖²)`.
pub fn smoothed_loss(model: &LinearModel, data: &Dataset, params: &LossParams) -> f64 {
    let scores = model.score_matrix(data.features());
    let mut hinge = 0.0;
    for (s, &y) in scores.rows().into_iter().zip(data.labels()) {
        for k in (0..s.len()).filter(|&k| k != y) {
            hinge += smooth_hinge(1.0 - (s[y] - s[k]), params.varsigma);
        }
    }
    hinge + regularizer_value(model, params.pairwise_weight(data.len()), params.mu)
}

/// One example's term of [`smoothed_loss`], including a `1/n` share of the regularizers.
pub fn smoothed_example_loss(
    model: &LinearModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    params: &LossParams,
    n: usize,
) -> f64 {
    let hinge: f64 = margins(model, x, y)
        .iter()
        .map(|&g| smooth_hinge(g, params.varsigma))
        .sum();
    hinge + regularizer_value(model, params.pairwise_weight(n), params.mu) / n as f64
}

/// Gradient of [`smoothed_example_loss`].
pub fn smoothed_grad_example(
    model: &LinearModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    params: &LossParams,
    n: usize,
) -> Result<LinearModel> {
    if !(params.varsigma > 0.0) {
        return Err(Error::domain(
            "smoothed gradient needs varsigma > 0; use the subgradient path",
        ));
    }
    model.check_dim(&x)?;
    let s = model.scores(x);
    let c = s.len();
    let mut coef = Array1::<f64>::zeros(c);
    for k in (0..c).filter(|&k| k != y) {
        let slope = smooth_hinge_slope(1.0 - (s[y] - s[k]), params.varsigma);
        coef[k] += slope;
        coef[y] -= slope;
    }
    let mut grad = LinearModel::zeros(model.dim(), c, model.with_bias());
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            grad.weights.row_mut(j).scaled_add(xj, &coef);
        }
    }
    if let Some(gb) = grad.bias.as_mut() {
        gb.assign(&coef);
    }
    add_regularizer_grad(&mut grad, model, params.pairwise_weight(n), params.mu, 1.0 / n as f64);
    Ok(grad)
}

/// Full-objective gradient of [`smoothed_loss`], assembled in matrix form.
pub fn smoothed_grad(model: &LinearModel, data: &Dataset, params: &LossParams) -> Result<LinearModel> {
    if !(params.varsigma > 0.0) {
        return Err(Error::domain("smoothed gradient needs varsigma > 0"));
    }
    let scores = model.score_matrix(data.features());
    let c = model.num_classes();
    let mut coef = Array2::<f64>::zeros((data.len(), c));
    for (i, (s, &y)) in scores.rows().into_iter().zip(data.labels()).enumerate() {
        for k in (0..c).filter(|&k| k != y) {
            let slope = smooth_hinge_slope(1.0 - (s[y] - s[k]), params.varsigma);
            coef[[i, k]] += slope;
            coef[[i, y]] -= slope;
        }
    }
    let mut grad = LinearModel {
        weights: data.features().t().dot(&coef),
        bias: model.with_bias().then(|| coef.sum_axis(Axis(0))),
    };
    add_regularizer_grad(&mut grad, model, params.pairwise_weight(data.len()), params.mu, 1.0);
    Ok(grad)
}

/// Crammer–Singer slack `max(0, max_{k≠y} 1 − (s_y − s_k))` and the lowest
/// maximizing violator class, if any.
fn cs_violation(s: &[f64], y: usize) -> (f64, Option<usize>) {
    let mut best: Option<(usize, f64)> = None;
    for (k, &sk) in s.iter().enumerate() {
        if k == y {
            continue;
        }
        let v = 1.0 - (s[y] - sk);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    match best {
        Some((k, v)) if v > 0.0 => (v, Some(k)),
        _ => (0.0, None),
    }
}

/// `½ Σ_k ‖w_k‖² + slack_weight · Σᵢ ξᵢ` with the Crammer–Singer slack.
pub fn cs_objective(model: &LinearModel, data: &Dataset, slack_weight: f64) -> f64 {
    let scores = model.score_matrix(data.features());
    let slack: f64 = scores
        .rows()
        .into_iter()
        .zip(data.labels())
        .map(|(s, &y)| cs_violation(&s.to_vec(), y).0)
        .sum();
    0.5 * model.weights().iter().map(|v| v * v).sum::<f64>() + slack_weight * slack
}

/// [`cs_objective`] with slack weight `C/n`.
pub fn cs_hinge_loss(model: &LinearModel, data: &Dataset, c: f64) -> f64 {
    cs_objective(model, data, c / data.len().max(1) as f64)
}

/// Per-example subgradient of the Crammer–Singer objective: `±(C/n)x` on the
/// violator and true columns plus a `1/n` share of the ridge term.
pub fn cs_subgrad(model: &LinearModel, x: ArrayView1<'_, f64>, y: usize, c: f64, n: usize) -> LinearModel {
    let slack_weight = c / n as f64;
    let s = model.scores(x).to_vec();
    let mut grad = LinearModel::zeros(model.dim(), model.num_classes(), model.with_bias());
    grad.weights.scaled_add(1.0 / n as f64, model.weights());
    if let (_, Some(j)) = cs_violation(&s, y) {
        grad.weights.column_mut(j).scaled_add(slack_weight, &x);
        grad.weights.column_mut(y).scaled_add(-slack_weight, &x);
        if let Some(gb) = grad.bias.as_mut() {
            gb[j] += slack_weight;
            gb[y] -= slack_weight;
        }
    }
    grad
}

/// `½‖w‖² + (C/n) Σ max(0, 1 − yᵢ(wᵀxᵢ + b))` for labels in `{−1, +1}`.
pub fn binary_hinge_loss(w: ArrayView1<'_, f64>, b: f64, features: &Array2<f64>, signs: &[f64], c: f64) -> f64 {
    let n = signs.len().max(1) as f64;
    let f = features.dot(&w);
    let slack: f64 = f.iter().zip(signs).map(|(fi, yi)| (1.0 - yi * (fi + b)).max(0.0)).sum();
    0.5 * w.dot(&w) + c / n * slack
}

/// Full subgradient of [`binary_hinge_loss`]: `(∂w, ∂b)`.
pub fn binary_hinge_grad(
    w: ArrayView1<'_, f64>,
    b: f64,
    features: &Array2<f64>,
    signs: &[f64],
    c: f64,
) -> (Array1<f64>, f64) {
    let n = signs.len().max(1) as f64;
    let f = features.dot(&w);
    let mut gw = w.to_owned();
    let mut gb = 0.0;
    for (i, (&fi, &yi)) in f.iter().zip(signs).enumerate() {
        if 1.0 - yi * (fi + b) > 0.0 {
            gw.scaled_add(-c / n * yi, &features.row(i));
            gb -= c / n * yi;
        }
    }
    (gw, gb)
}

/// Binary analogue of the smoothed objective:
/// `Σᵢ g_ς(1 − yᵢ(wᵀxᵢ + b)) + μ(‖w‖² + b²)`.
pub fn binary_smoothed_loss(
    w: ArrayView1<'_, f64>,
    b: f64,
    features: &Array2<f64>,
    signs: &[f64],
    params: &LossParams,
) -> f64 {
    let f = features.dot(&w);
    let hinge: f64 = f
        .iter()
        .zip(signs)
        .map(|(fi, yi)| smooth_hinge(1.0 - yi * (fi + b), params.varsigma))
        .sum();
    hinge + params.mu * (w.dot(&w) + b * b)
}

/// Per-example gradient of [`binary_smoothed_loss`] with a `1/n` ridge share.
pub fn binary_smoothed_grad_example(
    w: ArrayView1<'_, f64>,
    b: f64,
    x: ArrayView1<'_, f64>,
    sign: f64,
    params: &LossParams,
    n: usize,
) -> (Array1<f64>, f64) {
    let gamma = 1.0 - sign * (w.dot(&x) + b);
    let slope = smooth_hinge_slope(gamma, params.varsigma);
    let ridge = 2.0 * params.mu / n as f64;
    let mut gw = x.mapv(|v| -slope * sign * v);
    gw.scaled_add(ridge, &w);
    (gw, -slope * sign + ridge * b)
}

fn log_softmax(s: &Array1<f64>) -> Array1<f64> {
    let m = s.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    s.mapv(|v| v - lse)
}

/// Softmax cross-entropy summed over the data plus `μ(‖W‖² + ‖b‖²)`.
pub fn ce_loss(model: &LinearModel, data: &Dataset, mu: f64) -> f64 {
    let scores = model.score_matrix(data.features());
    let nll: f64 = scores
        .rows()
        .into_iter()
        .zip(data.labels())
        .map(|(s, &y)| -log_softmax(&s.to_owned())[y])
        .sum();
    nll + mu * model.squared_norm()
}

/// One example's cross-entropy with a `1/n` ridge share.
pub fn ce_example_loss(model: &LinearModel, x: ArrayView1<'_, f64>, y: usize, mu: f64, n: usize) -> f64 {
    -log_softmax(&model.scores(x))[y] + mu * model.squared_norm() / n as f64
}

/// Gradient of [`ce_example_loss`].
pub fn ce_grad_example(
    model: &LinearModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    mu: f64,
    n: usize,
) -> Result<LinearModel> {
    model.check_dim(&x)?;
    let mut coef = log_softmax(&model.scores(x)).mapv(f64::exp);
    coef[y] -= 1.0;
    let mut grad = LinearModel::zeros(model.dim(), model.num_classes(), model.with_bias());
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            grad.weights.row_mut(j).scaled_add(xj, &coef);
        }
    }
    if let Some(gb) = grad.bias.as_mut() {
        gb.assign(&coef);
    }
    add_regularizer_grad(&mut grad, model, 0.0, mu, 1.0 / n as f64);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_model(rng: &mut RandomSource, d: usize, c: usize, with_bias: bool) -> LinearModel {
        let w = Array2::from_shape_fn((d, c), |_| rng.standard_normal());
        let b = with_bias.then(|| Array1::from_shape_fn(c, |_| rng.standard_normal()));
        LinearModel::from_parts(w, b).unwrap()
    }

    fn random_data(rng: &mut RandomSource, n: usize, d: usize, c: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, d), |_| rng.uniform() - 0.5);
        let y = (0..n).map(|i| if i < c { i } else { rng.below(c) }).collect();
        Dataset::new(x, y, c).unwrap()
    }

    #[test]
    fn predict_examples() {
        let zero = LinearModel::zeros(3, 3, false);
        assert_eq!(predict(&zero, array![1.0, 2.0, 3.0].view()).unwrap(), 0);

        let eye = LinearModel::from_parts(Array2::eye(3), None).unwrap();
        assert_eq!(predict(&eye, array![0.0, 0.0, 1.0].view()).unwrap(), 2);

        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert!(matches!(
            predict(&eye, array![1.0, 2.0].view()),
            Err(Error::Dimension { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn margin_examples() {
        let zero = LinearModel::zeros(2, 3, true);
        assert_eq!(margins(&zero, array![0.3, 0.1].view(), 1), vec![1.0, 1.0]);

        // Scores (2, 0): true class 0 beats class 1 by 2.
        let m = LinearModel::from_parts(array![[2.0, 0.0]], None).unwrap();
        assert_eq!(margins(&m, array![1.0].view(), 0), vec![-1.0]);
        let m = LinearModel::from_parts(array![[1.0, 0.0, 0.0]], None).unwrap();
        assert_eq!(margins(&m, array![1.0].view(), 0), vec![0.0, 0.0]);
    }

    #[test]
    fn smooth_hinge_values() {
        assert!((smooth_hinge(0.0, 0.1) - 0.05).abs() < 1e-15);
        assert!((smooth_hinge(1.0, 1e-9) - 1.0).abs() < 1e-12);
        assert!(smooth_hinge(-1.0, 1e-9) < 1e-12);
        assert!((smooth_hinge_slope(1.0, 1.0) - (1.0 + 2f64.sqrt()) / (2.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!((smooth_hinge_slope(1e8, 1.0) - 1.0).abs() < 1e-12);
        assert!(smooth_hinge_slope(-1e8, 1.0) < 1e-12);
        assert!(smooth_hinge(-1e10, 0.5) > 0.0);
    }

    #[test]
    fn smoothed_loss_at_zero_is_pure_hinge_count() {
        let mut rng = RandomSource::new(1);
        let data = random_data(&mut rng, 7, 3, 4);
        let params = LossParams {
            c: 1.0,
            lambda: None,
            mu: 0.0,
            varsigma: 0.0,
        };
        let zero = LinearModel::zeros(3, 4, true);
        assert_eq!(smoothed_loss(&zero, &data, &params), 7.0 * 3.0);
    }

    #[test]
    fn smoothed_grad_at_zero_model() {
        let params = LossParams {
            c: 0.0,
            lambda: Some(0.0),
            mu: 0.0,
            varsigma: 1.0,
        };
        let x = array![0.2, -0.4];
        let g = smoothed_grad_example(&LinearModel::zeros(2, 4, false), x.view(), 1, &params, 10).unwrap();
        let slope = (1.0 + 2f64.sqrt()) / (2.0 * 2f64.sqrt());
        for j in 0..2 {
            assert!((g.weights()[[j, 1]] + 3.0 * slope * x[j]).abs() < 1e-15);
            assert!((g.weights()[[j, 0]] - slope * x[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothed_grad_rejects_zero_smoothing() {
        let params = LossParams {
            varsigma: 0.0,
            ..LossParams::default()
        };
        let m = LinearModel::zeros(2, 3, false);
        assert!(smoothed_grad_example(&m, array![1.0, 0.0].view(), 0, &params, 1).is_err());
    }

    #[test]
    fn example_gradients_sum_to_full_gradient() {
        let mut rng = RandomSource::new(4);
        for &(c, with_bias) in &[(3, true), (5, false), (6, true)] {
            let data = random_data(&mut rng, 25, 4, c);
            let model = random_model(&mut rng, 4, c, with_bias);
            let params = LossParams {
                c: 2.0,
                lambda: None,
                mu: 0.3,
                varsigma: 0.5,
            };
            let full = smoothed_grad(&model, &data, &params).unwrap();
            let mut acc = LinearModel::zeros(4, c, with_bias);
            for i in 0..data.len() {
                let g = smoothed_grad_example(&model, data.row(i), data.labels()[i], &params, data.len()).unwrap();
                acc.axpy(1.0, &g);
            }
            let mut diff = acc.clone();
            diff.axpy(-1.0, &full);
            assert!(diff.norm() <= 1e-10 * full.norm().max(1.0), "diff {}", diff.norm());

            let per_example: f64 = (0..data.len())
                .map(|i| smoothed_example_loss(&model, data.row(i), data.labels()[i], &params, data.len()))
                .sum();
            assert!((per_example - smoothed_loss(&model, &data, &params)).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothing_gap_shrinks_monotonically() {
        let mut rng = RandomSource::new(6);
        for _ in 0..5 {
            let data = random_data(&mut rng, 20, 3, 3);
            let model = random_model(&mut rng, 3, 3, true);
            let exact = smoothed_loss(
                &model,
                &data,
                &LossParams {
                    varsigma: 0.0,
                    ..LossParams::default()
                },
            );
            let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3]
                .iter()
                .map(|&s| {
                    smoothed_loss(
                        &model,
                        &data,
                        &LossParams {
                            varsigma: s,
                            ..LossParams::default()
                        },
                    ) - exact
                })
                .collect();
            assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] > 0.0, "{gaps:?}");
        }
    }

    #[test]
    fn cs_examples() {
        // Separated with margin: class 0 at x=(1,0), class 1 at x=(0,1).
        let data = Dataset::new(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1], 2).unwrap();
        let w = LinearModel::from_parts(array![[2.0, 0.0], [0.0, 2.0]], None).unwrap();
        assert_eq!(cs_hinge_loss(&w, &data, 3.0), 0.5 * 8.0);
        assert_eq!(cs_hinge_loss(&LinearModel::zeros(2, 2, false), &data, 3.0), 3.0);

        let m = LinearModel::zeros(2, 3, false);
        let x = array![0.5, -1.0];
        let g = cs_subgrad(&m, x.view(), 2, 4.0, 2);
        // Ties: lowest-index violator is class 0.
        assert_eq!(g.weights().column(0).to_vec(), vec![1.0, -2.0]);
        assert_eq!(g.weights().column(2).to_vec(), vec![-1.0, 2.0]);
        assert_eq!(g.weights().column(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn binary_hinge_examples() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let signs = [1.0, -1.0];
        assert_eq!(binary_hinge_loss(array![0.0, 0.0].view(), 0.0, &x, &signs, 2.5), 2.5);
        let w = array![3.0, -3.0];
        assert_eq!(binary_hinge_loss(w.view(), 0.0, &x, &signs, 2.5), 9.0);
        let (gw, gb) = binary_hinge_grad(w.view(), 0.0, &x, &signs, 2.5);
        assert_eq!(gw, w);
        assert_eq!(gb, 0.0);
    }

    #[test]
    fn ce_at_zero_is_log_c() {
        let m = LinearModel::zeros(3, 5, true);
        let v = ce_example_loss(&m, array![0.1, 0.2, 0.3].view(), 2, 0.0, 1);
        assert!((v - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn model_text_round_trip() {
        let mut rng = RandomSource::new(2);
        for with_bias in [false, true] {
            let m = random_model(&mut rng, 4, 3, with_bias);
            assert_eq!(LinearModel::from_text(&m.to_text()).unwrap(), m);
        }
        assert!(LinearModel::from_text("2 2 0\n1 2\n").is_err());
        assert!(LinearModel::from_text("1 2 3\n1 2\n").is_err());
    }

    proptest! {
        #[test]
        fn predict_shift_invariant(ws in proptest::collection::vec(-3.0f64..3.0, 12),
                                   xs in proptest::collection::vec(-1.0f64..1.0, 4),
                                   shift in -10.0f64..10.0) {
            let w = Array2::from_shape_vec((4, 3), ws).unwrap();
            let base = LinearModel::from_parts(w.clone(), Some(Array1::zeros(3))).unwrap();
            let shifted = LinearModel::from_parts(w, Some(Array1::from_elem(3, shift))).unwrap();
            let x = Array1::from(xs);
            let a = predict(&base, x.view()).unwrap();
            let b = predict(&shifted, x.view()).unwrap();
            // A common shift can only flip exact near-ties through rounding.
            let s = base.scores(x.view());
            prop_assume!(s.iter().filter(|&&v| (v - s[a]).abs() < 1e-9).count() == 1);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn cs_objective_convex_on_segments(seed in any::<u64>(), theta in 0.0f64..1.0) {
            let mut rng = RandomSource::new(seed);
            let data = random_data(&mut rng, 12, 3, 4);
            let a = random_model(&mut rng, 3, 4, false);
            let b = random_model(&mut rng, 3, 4, false);
            let mut mid = a.clone();
            mid.scale(theta);
            mid.axpy(1.0 - theta, &b);
            let f = |m: &LinearModel| cs_hinge_loss(m, &data, 5.0);
            prop_assert!(f(&mid) <= theta * f(&a) + (1.0 - theta) * f(&b) + 1e-9);
        }

        #[test]
        fn smoothed_objective_strongly_convex(seed in any::<u64>(), theta in 0.0f64..1.0) {
            let mut rng = RandomSource::new(seed);
            let data = random_data(&mut rng, 12, 3, 3);
            let params = LossParams { c: 1.0, lambda: None, mu: 0.2, varsigma: 0.5 };
            let a = random_model(&mut rng, 3, 3, true);
            let b = random_model(&mut rng, 3, 3, true);
            let mut mid = a.clone();
            mid.scale(theta);
            mid.axpy(1.0 - theta, &b);
            let mut diff = a.clone();
            diff.axpy(-1.0, &b);
            let f = |m: &LinearModel| smoothed_loss(m, &data, &params);
            // 2μ-strong convexity: f(θa+(1−θ)b) ≤ θf(a)+(1−θ)f(b) − μθ(1−θ)‖a−b‖².
            let bound = theta * f(&a) + (1.0 - theta) * f(&b)
                - params.mu * theta * (1.0 - theta) * diff.squared_norm();
            prop_assert!(f(&mid) <= bound + 1e-9);
        }
    }
}
