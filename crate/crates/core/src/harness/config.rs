use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{load_csv, load_libsvm, synth_blobs, Dataset};
use crate::error::{Error, Result};
use crate::model::LossParams;
use crate::numerics::RandomSource;
use crate::privacy::{EncodingPreset, PrivacyBudget};
use crate::trainers::{GpConfig, Optimizer, Schedule, WpConfig};

/// One experiment: a dataset, a grid of budgets, methods and seeds.
///
/// Parsed from TOML; unknown keys are rejected so typos surface with their
/// line and column instead of silently falling back to defaults.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset label used in tables.
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Concurrent cells; `None` uses every core.
    #[serde(default)]
    pub workers: Option<usize>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub preprocess: Preprocess,
    pub budget: BudgetGrid,
    #[serde(default)]
    pub seeds: SeedPlan,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: usize,
        #[serde(default = "yes")]
        has_header: bool,
    },
    Libsvm {
        path: PathBuf,
    },
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    /// Min-max scale with statistics from the training split.
    #[serde(default = "yes")]
    pub minmax: bool,
    #[serde(default = "yes")]
    pub unit_ball: bool,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            minmax: true,
            unit_ball: true,
            test_fraction: default_test_fraction(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BudgetGrid {
    pub epsilons: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1e-5
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SeedPlan {
    /// Runs per (method, ε) unless a method overrides it.
    #[serde(default = "default_seed_count")]
    pub count: usize,
    #[serde(default)]
    pub base: u64,
}

fn default_seed_count() -> usize {
    5
}

impl Default for SeedPlan {
    fn default() -> Self {
        Self {
            count: default_seed_count(),
            base: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    PmsvmWp,
    OvrWp,
    PmsvmGp,
    PmsvmAgp,
    OvrGp,
    LinearCeGp,
    NonprivateCs,
    NonprivateOvr,
}

impl TrainerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrainerKind::PmsvmWp => "pmsvm_wp",
            TrainerKind::OvrWp => "ovr_wp",
            TrainerKind::PmsvmGp => "pmsvm_gp",
            TrainerKind::PmsvmAgp => "pmsvm_agp",
            TrainerKind::OvrGp => "ovr_gp",
            TrainerKind::LinearCeGp => "linear_ce_gp",
            TrainerKind::NonprivateCs => "nonprivate_cs",
            TrainerKind::NonprivateOvr => "nonprivate_ovr",
        }
    }

    pub fn is_private(&self) -> bool {
        !matches!(self, TrainerKind::NonprivateCs | TrainerKind::NonprivateOvr)
    }

    /// Solver-based trainers read [`WpConfig`]; the rest run DP-SGD.
    pub fn uses_solver(&self) -> bool {
        matches!(
            self,
            TrainerKind::PmsvmWp | TrainerKind::OvrWp | TrainerKind::NonprivateCs | TrainerKind::NonprivateOvr
        )
    }
}

/// A `[[method]]` table. Every hyperparameter is optional and falls back to
/// the trainer's default; keys that the trainer does not read are rejected.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub trainer: TrainerKind,
    /// Name in tables and report files; defaults to the trainer name.
    pub label: Option<String>,
    /// Overrides the global seed count.
    pub seeds: Option<usize>,

    pub c_over_n: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub encoding: Option<String>,

    pub c: Option<f64>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub varsigma: Option<f64>,
    pub clip: Option<f64>,
    pub steps: Option<usize>,
    /// Expected batch size; converted to `q = batch / n_train`.
    pub batch: Option<usize>,
    pub q: Option<f64>,
    pub schedule: Option<String>,
    pub learning_rate: Option<f64>,
    pub lambda_strong: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub gamma: Option<f64>,
    pub with_bias: Option<bool>,
    pub noise_multiplier: Option<f64>,
    pub trace_every: Option<usize>,
}

const DEFAULT_BATCH: usize = 128;

impl MethodSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.trainer.name().to_string())
    }

    fn solver_keys(&self) -> Vec<&'static str> {
        let mut set = Vec::new();
        if self.c_over_n.is_some() {
            set.push("c_over_n");
        }
        if self.tol.is_some() {
            set.push("tol");
        }
        if self.max_iter.is_some() {
            set.push("max_iter");
        }
        if self.encoding.is_some() {
            set.push("encoding");
        }
        set
    }

    fn sgd_keys(&self) -> Vec<&'static str> {
        let flags = [
            ("c", self.c.is_some()),
            ("lambda", self.lambda.is_some()),
            ("mu", self.mu.is_some()),
            ("varsigma", self.varsigma.is_some()),
            ("clip", self.clip.is_some()),
            ("steps", self.steps.is_some()),
            ("batch", self.batch.is_some()),
            ("q", self.q.is_some()),
            ("schedule", self.schedule.is_some()),
            ("learning_rate", self.learning_rate.is_some()),
            ("lambda_strong", self.lambda_strong.is_some()),
            ("beta1", self.beta1.is_some()),
            ("beta2", self.beta2.is_some()),
            ("gamma", self.gamma.is_some()),
            ("with_bias", self.with_bias.is_some()),
            ("noise_multiplier", self.noise_multiplier.is_some()),
            ("trace_every", self.trace_every.is_some()),
        ];
        flags.iter().filter(|f| f.1).map(|f| f.0).collect()
    }

    fn check_keys(&self) -> Result<()> {
        let kind = self.trainer;
        let stray = if kind.uses_solver() {
            self.sgd_keys()
        } else {
            self.solver_keys()
        };
        if !stray.is_empty() {
            return Err(Error::Config(format!(
                "method {:?}: trainer {} does not take {}",
                self.label(),
                kind.name(),
                stray.join(", ")
            )));
        }
        let adam_only = self.beta1.is_some() || self.beta2.is_some() || self.gamma.is_some();
        if adam_only && kind != TrainerKind::PmsvmAgp {
            return Err(Error::Config(format!(
                "method {:?}: beta1/beta2/gamma only apply to pmsvm_agp",
                self.label()
            )));
        }
        if self.batch.is_some() && self.q.is_some() {
            return Err(Error::Config(format!(
                "method {:?}: give either batch or q, not both",
                self.label()
            )));
        }
        Ok(())
    }

    pub fn wp_config(&self) -> Result<WpConfig> {
        let d = WpConfig::default();
        let cfg = WpConfig {
            c_over_n: self.c_over_n.unwrap_or(d.c_over_n),
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            encoding: match &self.encoding {
                Some(s) => s.parse::<EncodingPreset>()?,
                None => d.encoding,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves the gradient-perturbation config for a training split of size `n_train`.
    pub fn gp_config(&self, n_train: usize) -> Result<GpConfig> {
        let d = GpConfig::default();
        let kind = self.trainer;
        let loss = LossParams {
            c: self.c.unwrap_or(d.loss.c),
            lambda: self.lambda.or(d.loss.lambda),
            mu: self.mu.unwrap_or(d.loss.mu),
            varsigma: self.varsigma.unwrap_or(d.loss.varsigma),
        };
        let optimizer = if kind == TrainerKind::PmsvmAgp {
            let Optimizer::Adam { beta1, beta2, gamma } = Optimizer::adam() else {
                unreachable!()
            };
            Optimizer::Adam {
                beta1: self.beta1.unwrap_or(beta1),
                beta2: self.beta2.unwrap_or(beta2),
                gamma: self.gamma.unwrap_or(gamma),
            }
        } else {
            Optimizer::Plain
        };
        let q = match self.q {
            Some(q) => q,
            None => GpConfig::rate_for_batch(self.batch.unwrap_or(DEFAULT_BATCH), n_train),
        };
        let cfg = GpConfig {
            loss,
            clip: self.clip.unwrap_or(d.clip),
            steps: self.steps.unwrap_or(d.steps),
            q,
            schedule: match &self.schedule {
                Some(s) => s.parse::<Schedule>()?,
                None => d.schedule,
            },
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            lambda_strong: self.lambda_strong.or(d.lambda_strong),
            optimizer,
            with_bias: self.with_bias.unwrap_or(d.with_bias),
            noise_multiplier: self.noise_multiplier.or(d.noise_multiplier),
            trace_every: self.trace_every.unwrap_or(d.trace_every),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{source_name}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.dataset {
            DatasetSource::Csv { path, .. } | DatasetSource::Libsvm { path } => rebase(path),
            DatasetSource::Synthetic { .. } => {}
        }
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("name must not be empty".into()));
        }
        if self.budget.epsilons.is_empty() {
            return Err(Error::Config("budget.epsilons must not be empty".into()));
        }
        for &eps in &self.budget.epsilons {
            PrivacyBudget::new(eps, self.budget.delta).map_err(|e| Error::Config(format!("budget: {e}")))?;
        }
        if self.seeds.count == 0 {
            return Err(Error::Config("seeds.count must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        let tf = self.preprocess.test_fraction;
        if !(tf > 0.0 && tf < 1.0) {
            return Err(Error::Config(format!(
                "preprocess.test_fraction must lie in (0, 1), got {tf}"
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one [[method]] is required".into()));
        }
        let mut labels = Vec::new();
        for m in &self.methods {
            m.check_keys()?;
            let label = m.label();
            if label.is_empty() || !label.chars().all(|ch| ch.is_ascii_alphanumeric() || "_-.".contains(ch)) {
                return Err(Error::Config(format!(
                    "method label {label:?} must be non-empty and use only letters, digits, '_', '-' or '.'"
                )));
            }
            if labels.contains(&label) {
                return Err(Error::Config(format!("duplicate method label {label:?}")));
            }
            if m.seeds == Some(0) {
                return Err(Error::Config(format!("method {label:?}: seeds must be >= 1")));
            }
            if m.trainer.uses_solver() {
                m.wp_config()
                    .map_err(|e| Error::Config(format!("method {label:?}: {e}")))?;
            } else {
                // n is unknown before loading; any n gives a valid batch-derived q.
                m.gp_config(usize::MAX)
                    .map_err(|e| Error::Config(format!("method {label:?}: {e}")))?;
            }
            labels.push(label);
        }
        if let DatasetSource::Synthetic {
            classes,
            per_class,
            dim,
            separation,
            ..
        } = self.dataset
        {
            if classes < 2 || per_class < 2 || dim < 2 || !(separation >= 0.0) {
                return Err(Error::Config(
                    "synthetic dataset needs classes >= 2, per_class >= 2, dim >= 2 and separation >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn seed_count(&self, method: &MethodSpec) -> usize {
        method.seeds.unwrap_or(self.seeds.count)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Csv {
                path,
                label_column,
                has_header,
            } => load_csv(path, *label_column, *has_header),
            DatasetSource::Libsvm { path } => load_libsvm(path),
            DatasetSource::Synthetic {
                classes,
                per_class,
                dim,
                separation,
                seed,
            } => synth_blobs(*classes, *per_class, *dim, *separation, &mut RandomSource::new(*seed)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "blobs"

[dataset]
source = "synthetic"
classes = 3
per_class = 20
dim = 4
separation = 5.0

[budget]
epsilons = [1.0, 4.0]

[[method]]
trainer = "pmsvm_wp"
c_over_n = 0.01

[[method]]
trainer = "pmsvm_agp"
label = "agp"
batch = 16
steps = 10
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, "t").unwrap();
        assert_eq!(cfg.budget.delta, 1e-5);
        assert_eq!(cfg.seeds.count, 5);
        assert_eq!(cfg.methods.len(), 2);
        assert_eq!(cfg.methods[0].label(), "pmsvm_wp");
        assert_eq!(cfg.methods[0].wp_config().unwrap().c_over_n, 0.01);
        let gp = cfg.methods[1].gp_config(48).unwrap();
        assert!((gp.q - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(gp.optimizer, Optimizer::Adam { .. }));
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = MINIMAL.replace("c_over_n = 0.01", "c_over_m = 0.01");
        let err = ExperimentConfig::from_toml(&text, "exp.toml").unwrap_err().to_string();
        assert!(err.contains("exp.toml"), "{err}");
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("c_over_m"), "{err}");
    }

    #[test]
    fn rejects_keys_the_trainer_ignores() {
        let text = MINIMAL.replace("c_over_n = 0.01", "steps = 3");
        assert!(matches!(ExperimentConfig::from_toml(&text, "t"), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_grids() {
        for (from, to) in [
            ("epsilons = [1.0, 4.0]", "epsilons = []"),
            ("epsilons = [1.0, 4.0]", "epsilons = [1.0, -2.0]"),
            ("name = \"blobs\"", "name = \"blobs\"\n[seeds]\ncount = 0"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(ExperimentConfig::from_toml(&text, "t").is_err(), "{to}");
        }
    }

    #[test]
    fn duplicate_labels_rejected() {
        let text = format!("{MINIMAL}\n[[method]]\ntrainer = \"pmsvm_wp\"\n");
        assert!(ExperimentConfig::from_toml(&text, "t").is_err());
    }
}
