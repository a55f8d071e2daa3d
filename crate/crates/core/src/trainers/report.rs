use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::LinearModel;
use crate::privacy::PrivacyBudget;

const MAGIC: &str = "pmsvm-report v1";

/// One row of a convergence trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub method: String,
    pub seed: u64,
    pub model: LinearModel,
    /// `None` for non-private baselines.
    pub requested: Option<PrivacyBudget>,
    /// Guarantee the released model satisfies, as verified by the accountant.
    pub consumed: Option<PrivacyBudget>,
    /// Weight-noise std (weight perturbation) or noise multiplier (gradient
    /// perturbation); per classifier for one-vs-rest.
    pub noise_sigma: f64,
    /// Weight sensitivity `Δ_w` for weight perturbation.
    pub sensitivity: Option<f64>,
    /// Solver sweeps or noisy steps.
    pub iterations: usize,
    pub wall_clock_secs: f64,
    pub config: Vec<(String, String)>,
    pub trace: Vec<TracePoint>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl TrainReport {
    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.trace.last().map(|p| p.train_accuracy)
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.trace.last().and_then(|p| p.test_accuracy)
    }

    /// Mean wall-clock per iteration in milliseconds.
    pub fn ms_per_iteration(&self) -> f64 {
        1e3 * self.wall_clock_secs / self.iterations.max(1) as f64
    }

    /// Key-value header, then a `[trace]` CSV block and a `[model]` block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "method={}", self.method);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "requested_epsilon={}", opt(self.requested.map(|b| b.epsilon)));
        let _ = writeln!(out, "requested_delta={}", opt(self.requested.map(|b| b.delta)));
        let _ = writeln!(out, "consumed_epsilon={}", opt(self.consumed.map(|b| b.epsilon)));
        let _ = writeln!(out, "consumed_delta={}", opt(self.consumed.map(|b| b.delta)));
        let _ = writeln!(out, "noise_sigma={}", self.noise_sigma);
        let _ = writeln!(out, "sensitivity={}", opt(self.sensitivity));
        let _ = writeln!(out, "iterations={}", self.iterations);
        let _ = writeln!(out, "wall_clock_secs={}", self.wall_clock_secs);
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k}={v}");
        }
        let _ = writeln!(out, "[trace]");
        let _ = writeln!(out, "step,train_loss,train_accuracy,test_accuracy");
        for p in &self.trace {
            let test = p.test_accuracy.map_or_else(String::new, |v| v.to_string());
            let _ = writeln!(out, "{},{},{},{}", p.step, p.train_loss, p.train_accuracy, test);
        }
        let _ = writeln!(out, "[model]");
        out.push_str(&self.model.to_text());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::parse(text).map_err(|message| Error::Report {
            path: PathBuf::from("<text>"),
            message,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Report {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|message| Error::Report {
            path: path.to_path_buf(),
            message,
        })
    }

    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(format!("missing {MAGIC:?} header")),
        }
        let mut header: Vec<(String, String)> = Vec::new();
        let mut in_trace = false;
        for (i, line) in lines.by_ref() {
            if line == "[trace]" {
                in_trace = true;
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
            header.push((k.to_string(), v.to_string()));
        }
        if !in_trace {
            return Err("missing [trace] block".into());
        }
        let get = |key: &str| -> std::result::Result<&str, String> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| format!("missing key {key}"))
        };
        let num = |key: &str| -> std::result::Result<f64, String> {
            get(key)?.parse::<f64>().map_err(|e| format!("{key}: {e}"))
        };
        let opt_num = |key: &str| -> std::result::Result<Option<f64>, String> {
            match get(key)? {
                "none" => Ok(None),
                v => v.parse::<f64>().map(Some).map_err(|e| format!("{key}: {e}")),
            }
        };
        let budget = |eps: &str, delta: &str| -> std::result::Result<Option<PrivacyBudget>, String> {
            Ok(match (opt_num(eps)?, opt_num(delta)?) {
                (Some(epsilon), Some(delta)) => Some(PrivacyBudget { epsilon, delta }),
                _ => None,
            })
        };

        let mut trace = Vec::new();
        let mut saw_columns = false;
        let mut in_model = false;
        for (i, line) in lines.by_ref() {
            if line == "[model]" {
                in_model = true;
                break;
            }
            if !saw_columns {
                saw_columns = true;
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(format!("line {}: trace rows need 4 cells", i + 1));
            }
            let f = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1));
            trace.push(TracePoint {
                step: cells[0].parse().map_err(|e| format!("line {}: {e}", i + 1))?,
                train_loss: f(cells[1])?,
                train_accuracy: f(cells[2])?,
                test_accuracy: if cells[3].is_empty() { None } else { Some(f(cells[3])?) },
            });
        }
        if !in_model {
            return Err("missing [model] block".into());
        }
        let model_text: Vec<&str> = lines.map(|(_, l)| l).collect();
        let model = LinearModel::from_text(&model_text.join("\n")).map_err(|e| format!("model: {e}"))?;

        Ok(Self {
            method: get("method")?.to_string(),
            seed: get("seed")?.parse().map_err(|e| format!("seed: {e}"))?,
            model,
            requested: budget("requested_epsilon", "requested_delta")?,
            consumed: budget("consumed_epsilon", "consumed_delta")?,
            noise_sigma: num("noise_sigma")?,
            sensitivity: opt_num("sensitivity")?,
            iterations: get("iterations")?.parse().map_err(|e| format!("iterations: {e}"))?,
            wall_clock_secs: num("wall_clock_secs")?,
            config: header
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
                .collect(),
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> TrainReport {
        TrainReport {
            method: "pmsvm_gp".into(),
            seed: 7,
            model: LinearModel::from_parts(array![[0.1, -0.2], [1.0 / 3.0, 4.0]], Some(array![0.5, -0.5])).unwrap(),
            requested: Some(PrivacyBudget::new(1.0, 1e-5).unwrap()),
            consumed: Some(PrivacyBudget {
                epsilon: 0.987_654_321_012_345_6,
                delta: 1e-5,
            }),
            noise_sigma: 1.234_567_890_123,
            sensitivity: None,
            iterations: 2,
            wall_clock_secs: 0.25,
            config: vec![("clip".into(), "1".into()), ("schedule".into(), "constant".into())],
            trace: vec![
                TracePoint {
                    step: 1,
                    train_loss: 10.0 / 3.0,
                    train_accuracy: 0.5,
                    test_accuracy: Some(0.25),
                },
                TracePoint {
                    step: 2,
                    train_loss: 2.0,
                    train_accuracy: 0.75,
                    test_accuracy: None,
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let r = sample();
        let back = TrainReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn nonprivate_round_trip() {
        let mut r = sample();
        r.requested = None;
        r.consumed = None;
        r.sensitivity = Some(0.014);
        assert_eq!(TrainReport::from_text(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn missing_trace_is_an_error() {
        let text = sample().to_text().replace("[trace]", "[tracks]");
        assert!(matches!(TrainReport::from_text(&text), Err(Error::Report { .. })));
        assert!(TrainReport::from_text("hello").is_err());
    }
}
