use std::fmt::Write as _;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::RandomSource;
use crate::privacy::EncodingPreset;
use crate::trainers::solve_cs_dual;

/// Largest training set the leave-one-out check retrains on.
pub const MAX_LOO_SAMPLES: usize = 200;

/// Instance grid for [`verify_sensitivity`]. `None` fields are drawn per trial.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityOptions {
    /// Largest `n`; each trial draws `n` uniformly from `c + 2 ..= n`.
    pub max_n: usize,
    /// Largest `d`; each trial draws `d` from `1 ..= d`.
    pub max_d: usize,
    /// Class count; drawn from {3, 4} when absent.
    pub classes: Option<usize>,
    pub trials: usize,
    /// Slack weight; drawn from {0.01, 0.1} when absent.
    pub c_over_n: Option<f64>,
    /// Solver certificate: each trained `W` is within `tol` of the exact one.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            max_n: 40,
            max_d: 5,
            classes: None,
            trials: 200,
            c_over_n: None,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LooTrial {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub c_over_n: f64,
    /// `‖x_n‖` of the removed sample.
    pub x_norm: f64,
    /// `‖W − W^{[n]}‖_F`.
    pub diff: f64,
    /// `(C/n) √λ_max ‖x_n‖`.
    pub bound: f64,
    /// Absolute allowance for solver inexactness, `10 · tol`.
    pub slack: f64,
}

impl LooTrial {
    /// `diff / bound`. A zero bound gives 0 when the difference is within the
    /// solver slack (the two solutions agree) and infinity otherwise.
    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.diff / self.bound
        } else if self.diff <= self.slack {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn violated(&self) -> bool {
        self.diff > self.bound + self.slack
    }
}

/// Retrains Crammer–Singer without the last sample and compares the weights
/// against the leave-one-out bound.
pub fn loo_trial(data: &Dataset, c_over_n: f64, tol: f64, rng: &RandomSource) -> Result<LooTrial> {
    let n = data.len();
    if n < 2 {
        return Err(Error::domain("leave-one-out needs at least 2 samples"));
    }
    if n > MAX_LOO_SAMPLES {
        return Err(Error::domain(format!(
            "leave-one-out retraining is limited to n <= {MAX_LOO_SAMPLES}, got {n}"
        )));
    }
    let max_sweeps = 1_000_000;
    let full = solve_cs_dual(data, c_over_n, tol, max_sweeps, &mut rng.split("full"))?;
    let kept: Vec<usize> = (0..n - 1).collect();
    let loo = solve_cs_dual(&data.subset(&kept), c_over_n, tol, max_sweeps, &mut rng.split("loo"))?;
    let diff = (full.model.weights() - loo.model.weights())
        .mapv(|v| v * v)
        .sum()
        .sqrt();
    let x_norm = data.row(n - 1).dot(&data.row(n - 1)).sqrt();
    let lambda_max = EncodingPreset::CrammerSinger.lambda_max(data.num_classes());
    Ok(LooTrial {
        n,
        d: data.dim(),
        c: data.num_classes(),
        c_over_n,
        x_norm,
        diff,
        bound: c_over_n * lambda_max.sqrt() * x_norm,
        slack: 10.0 * tol,
    })
}

/// Random instance inside the unit ball. The first `c` rows cover every
/// class, so removing the last row never empties one.
pub fn random_instance(n: usize, d: usize, c: usize, rng: &mut RandomSource) -> Result<Dataset> {
    if n < c + 1 || c < 2 || d == 0 {
        return Err(Error::domain(format!(
            "need n > c >= 2 and d >= 1, got n={n}, c={c}, d={d}"
        )));
    }
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i < c { i } else { rng.below(c) };
        labels.push(y);
        // A class-dependent offset keeps the problem from being pure noise.
        let mut row: Vec<f64> = (0..d)
            .map(|j| rng.standard_normal() + if j == y % d { 1.5 } else { 0.0 })
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = rng.uniform();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v *= radius / norm);
        }
        x.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    Dataset::new(x, labels, c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport {
    pub trials: Vec<LooTrial>,
}

impl SensitivityReport {
    pub fn worst_ratio(&self) -> f64 {
        self.trials.iter().map(LooTrial::ratio).fold(0.0, f64::max)
    }

    pub fn violations(&self) -> usize {
        self.trials.iter().filter(|t| t.violated()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,n,d,c,c_over_n,x_norm,diff,bound,ratio,violated\n");
        for (i, t) in self.trials.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{},{}",
                t.n,
                t.d,
                t.c,
                t.c_over_n,
                t.x_norm,
                t.diff,
                t.bound,
                t.ratio(),
                t.violated()
            );
        }
        out
    }
}

pub fn verify_sensitivity(opts: &SensitivityOptions) -> Result<SensitivityReport> {
    if opts.max_n > MAX_LOO_SAMPLES {
        return Err(Error::domain(format!(
            "n must be <= {MAX_LOO_SAMPLES}, got {}",
            opts.max_n
        )));
    }
    if opts.max_d == 0 || opts.trials == 0 {
        return Err(Error::domain("d and trials must be >= 1"));
    }
    if let Some(c) = opts.classes {
        if c < 2 || opts.max_n < c + 2 {
            return Err(Error::domain(format!(
                "need c >= 2 and n >= c + 2, got c={c}, n={}",
                opts.max_n
            )));
        }
    } else if opts.max_n < 6 {
        return Err(Error::domain(format!(
            "n must be >= 6 for c in {{3, 4}}, got {}",
            opts.max_n
        )));
    }
    if let Some(cn) = opts.c_over_n {
        if !(cn >= 0.0) || !cn.is_finite() {
            return Err(Error::domain(format!("C/n must be finite and >= 0, got {cn}")));
        }
    }
    let root = RandomSource::new(opts.seed);
    let mut trials = Vec::with_capacity(opts.trials);
    for t in 0..opts.trials {
        let mut rng = root.split_indexed("loo", t as u64);
        let c = opts.classes.unwrap_or(3 + rng.below(2));
        let n = c + 2 + rng.below(opts.max_n - c - 1);
        let d = 1 + rng.below(opts.max_d);
        let cn = opts.c_over_n.unwrap_or(if rng.below(2) == 0 { 0.01 } else { 0.1 });
        let data = random_instance(n, d, c, &mut rng)?;
        let trial = loo_trial(&data, cn, opts.tol, &rng.split("solve"))
            .map_err(|e| Error::Verification(format!("trial {t}: {e}")))?;
        trials.push(trial);
    }
    Ok(SensitivityReport { trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_slack_weight_gives_zero_ratio() {
        let mut rng = RandomSource::new(3);
        let data = random_instance(12, 3, 3, &mut rng).unwrap();
        let t = loo_trial(&data, 0.0, 1e-6, &rng).unwrap();
        assert_eq!(t.diff, 0.0);
        assert_eq!(t.ratio(), 0.0);
        assert!(!t.violated());
    }

    #[test]
    fn removing_a_zero_row_changes_nothing() {
        let x = array![
            [0.6, 0.1],
            [-0.5, 0.2],
            [0.1, -0.7],
            [0.4, 0.3],
            [-0.2, -0.4],
            [0.0, 0.0]
        ];
        let data = Dataset::new(x, vec![0, 1, 2, 0, 1, 2], 3).unwrap();
        let t = loo_trial(&data, 0.1, 1e-8, &RandomSource::new(1)).unwrap();
        assert_eq!(t.bound, 0.0);
        assert!(t.diff <= 2e-8, "{}", t.diff);
        assert_eq!(t.ratio(), 0.0);
    }

    #[test]
    fn small_grid_within_bound() {
        let report = verify_sensitivity(&SensitivityOptions {
            trials: 20,
            ..SensitivityOptions::default()
        })
        .unwrap();
        assert_eq!(report.violations(), 0, "{}", report.to_csv());
        assert!(report
            .trials
            .iter()
            .all(|t| t.n <= 40 && t.d <= 5 && (3..=4).contains(&t.c)));
    }

    #[test]
    fn rejects_large_n() {
        let opts = SensitivityOptions {
            max_n: 500,
            ..SensitivityOptions::default()
        };
        assert!(verify_sensitivity(&opts).is_err());
    }
}
