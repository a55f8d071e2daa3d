use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{apply_minmax, fit_minmax, project_unit_ball, stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{compensated_sum, RandomSource};
use crate::privacy::PrivacyBudget;
use crate::trainers::{
    linear_ce_gp, nonprivate_cs, nonprivate_ovr, ovr_gp, ovr_wp, pmsvm_agp, pmsvm_gp, pmsvm_wp, TrainReport,
};

use super::config::{ExperimentConfig, MethodSpec, TrainerKind};

/// Seed of one (method, ε, seed index) cell. Depends on nothing else, so
/// adding or removing methods leaves every other cell unchanged.
pub fn cell_seed(base_seed: u64, method: &str, epsilon: Option<f64>, seed_index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(b"pmsvm.cell");
    h.update(base_seed.to_le_bytes());
    h.update((method.len() as u64).to_le_bytes());
    h.update(method.as_bytes());
    match epsilon {
        Some(e) => {
            h.update([1u8]);
            h.update(e.to_bits().to_le_bytes());
        }
        None => h.update([0u8]),
    }
    h.update((seed_index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Split and preprocessing for one seed index; shared by every method.
pub fn prepare_split(data: &Dataset, cfg: &ExperimentConfig, seed_index: usize) -> Result<(Dataset, Dataset)> {
    let mut rng = RandomSource::new(cfg.seeds.base).split_indexed("split", seed_index as u64);
    let (mut train, mut test) = stratified_split(data, cfg.preprocess.test_fraction, &mut rng)?;
    if cfg.preprocess.minmax {
        let scaler = fit_minmax(&train);
        train = apply_minmax(&scaler, &train)?;
        test = apply_minmax(&scaler, &test)?;
    }
    if cfg.preprocess.unit_ball {
        train = project_unit_ball(&train);
        test = project_unit_ball(&test);
    }
    Ok((train, test))
}

pub fn train_method(
    method: &MethodSpec,
    epsilon: Option<f64>,
    delta: f64,
    train: &Dataset,
    test: &Dataset,
    rng: &RandomSource,
) -> Result<TrainReport> {
    let kind = method.trainer;
    let budget = match (kind.is_private(), epsilon) {
        (true, Some(eps)) => Some(PrivacyBudget::new(eps, delta)?),
        (false, None) => None,
        _ => return Err(Error::Config(format!("{} given a mismatched budget", kind.name()))),
    };
    let eval = Some(test);
    if kind.uses_solver() {
        let cfg = method.wp_config()?;
        return match (kind, budget) {
            (TrainerKind::PmsvmWp, Some(b)) => pmsvm_wp(train, &b, &cfg, rng, eval),
            (TrainerKind::OvrWp, Some(b)) => ovr_wp(train, &b, &cfg, rng, eval),
            (TrainerKind::NonprivateCs, None) => nonprivate_cs(train, &cfg, rng, eval),
            (TrainerKind::NonprivateOvr, None) => nonprivate_ovr(train, &cfg, rng, eval),
            _ => unreachable!("budget presence checked above"),
        };
    }
    let cfg = method.gp_config(train.len())?;
    let b = budget.expect("gradient trainers are private");
    match kind {
        TrainerKind::PmsvmGp => pmsvm_gp(train, &b, &cfg, rng, eval),
        TrainerKind::PmsvmAgp => pmsvm_agp(train, &b, &cfg, rng, eval),
        TrainerKind::OvrGp => ovr_gp(train, &b, &cfg, rng, eval),
        TrainerKind::LinearCeGp => linear_ce_gp(train, &b, &cfg, rng, eval),
        _ => unreachable!("solver trainers handled above"),
    }
}

/// Overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub base_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
struct Cell {
    method: usize,
    epsilon: Option<f64>,
    seed_index: usize,
}

/// One (dataset, ε, method) row of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub trainer: TrainerKind,
    /// `None` for non-private methods.
    pub epsilon: Option<f64>,
    pub delta: f64,
    /// Final test accuracy of each successful run, in seed order.
    pub accuracies: Vec<f64>,
    /// `(seed index, reason)` for every failed run.
    pub failures: Vec<(usize, String)>,
    pub wall_clock_secs: Vec<f64>,
    pub ms_per_iteration: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| compensated_sum(v.iter().copied()) / v.len() as f64)
}

impl ResultRow {
    pub fn runs(&self) -> usize {
        self.accuracies.len()
    }

    pub fn mean_accuracy(&self) -> Option<f64> {
        mean(&self.accuracies)
    }

    /// Sample standard deviation (`n − 1` denominator); absent below two runs.
    pub fn std_accuracy(&self) -> Option<f64> {
        let n = self.accuracies.len();
        if n < 2 {
            return None;
        }
        let m = self.mean_accuracy()?;
        let ss = compensated_sum(self.accuracies.iter().map(|a| (a - m) * (a - m)));
        Some((ss / (n - 1) as f64).sqrt())
    }

    pub fn mean_wall_clock_secs(&self) -> Option<f64> {
        mean(&self.wall_clock_secs)
    }

    pub fn mean_ms_per_iteration(&self) -> Option<f64> {
        mean(&self.ms_per_iteration)
    }
}

fn eps_text(e: Option<f64>) -> String {
    e.map_or_else(|| "none".into(), |v| v.to_string())
}

fn opt_text(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultsTable {
    pub dataset: String,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn row(&self, method: &str, epsilon: Option<f64>) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.epsilon == epsilon)
    }

    /// Accuracy table without timing columns, so reruns match byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,method,trainer,epsilon,delta,runs,failed,mean_accuracy,std_accuracy\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.dataset,
                r.method,
                r.trainer.name(),
                eps_text(r.epsilon),
                r.delta,
                r.runs(),
                r.failures.len(),
                opt_text(r.mean_accuracy()),
                opt_text(r.std_accuracy()),
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("dataset,method,epsilon,runs,mean_wall_clock_secs,mean_ms_per_iteration\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.dataset,
                r.method,
                eps_text(r.epsilon),
                r.runs(),
                opt_text(r.mean_wall_clock_secs()),
                opt_text(r.mean_ms_per_iteration()),
            );
        }
        out
    }

    pub fn failures_csv(&self) -> String {
        let mut out = String::from("method,epsilon,seed_index,reason\n");
        for r in &self.rows {
            for (idx, reason) in &r.failures {
                let reason = reason.replace(['\n', ','], " ");
                let _ = writeln!(out, "{},{},{},{}", r.method, eps_text(r.epsilon), idx, reason);
            }
        }
        out
    }

    /// Methods down, budgets across, `mean ± std` cells, padded to align.
    pub fn to_markdown(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        let mut columns: Vec<Option<f64>> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
            if !columns.contains(&r.epsilon) {
                columns.push(r.epsilon);
            }
        }
        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut header = vec![format!("{} (accuracy)", self.dataset)];
        header.extend(columns.iter().map(|c| match c {
            Some(e) => format!("ε={e}"),
            None => "non-private".to_string(),
        }));
        header.push("ms/iter".into());
        grid.push(header);
        for m in &methods {
            let mut line = vec![m.to_string()];
            let mut timing = Vec::new();
            for c in &columns {
                line.push(match self.row(m, *c) {
                    None => "-".into(),
                    Some(r) => {
                        timing.extend(r.ms_per_iteration.iter().copied());
                        let mut cell = match (r.mean_accuracy(), r.std_accuracy()) {
                            (Some(a), Some(s)) => format!("{a:.4} ± {s:.4}"),
                            (Some(a), None) => format!("{a:.4}"),
                            (None, _) => "failed".into(),
                        };
                        if !r.failures.is_empty() && r.runs() > 0 {
                            let _ = write!(cell, " ({} failed)", r.failures.len());
                        }
                        cell
                    }
                });
            }
            line.push(mean(&timing).map_or_else(|| "-".into(), |t| format!("{t:.3}")));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|row| row[j].chars().count()).max().unwrap_or(0))
            .collect();
        let render = |row: &[String]| {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            format!("| {} |\n", cells.join(" | "))
        };
        let mut out = render(&grid[0]);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        for row in &grid[1..] {
            out.push_str(&render(row));
        }
        out
    }
}

/// Report file name of a cell.
pub fn report_file_name(method: &str, epsilon: Option<f64>, seed_index: usize) -> String {
    match epsilon {
        Some(e) => format!("{method}_eps{e}_seed{seed_index:03}.txt"),
        None => format!("{method}_nonprivate_seed{seed_index:03}.txt"),
    }
}

/// Trains every (method, ε, seed) cell, writes one report per successful run
/// and the aggregated tables under the output directory.
///
/// A failing cell is recorded with its reason; its siblings still run.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ResultsTable> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.base_seed {
        cfg.seeds.base = seed;
    }
    if let Some(w) = opts.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    let out_dir = opts.output_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let report_dir = out_dir.join("reports");
    fs::create_dir_all(&report_dir)?;

    let data = cfg.load_dataset()?;
    let mut cells = Vec::new();
    for (m, spec) in cfg.methods.iter().enumerate() {
        let eps_list: Vec<Option<f64>> = if spec.trainer.is_private() {
            cfg.budget.epsilons.iter().map(|&e| Some(e)).collect()
        } else {
            vec![None]
        };
        for epsilon in eps_list {
            for seed_index in 0..cfg.seed_count(spec) {
                cells.push(Cell {
                    method: m,
                    epsilon,
                    seed_index,
                });
            }
        }
    }
    let max_seeds = cfg.methods.iter().map(|m| cfg.seed_count(m)).max().unwrap_or(0);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let (splits, outcomes) = pool.install(|| {
        let splits: Vec<std::result::Result<(Dataset, Dataset), String>> = (0..max_seeds)
            .into_par_iter()
            .map(|i| prepare_split(&data, &cfg, i).map_err(|e| e.to_string()))
            .collect();
        let outcomes: Vec<std::result::Result<TrainReport, String>> = cells
            .par_iter()
            .map(|cell| run_cell(&cfg, cell, &splits, &report_dir))
            .collect();
        (splits, outcomes)
    });
    drop(splits);

    let mut rows: Vec<ResultRow> = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        let spec = &cfg.methods[cell.method];
        let label = spec.label();
        let pos = match rows.iter().position(|r| r.method == label && r.epsilon == cell.epsilon) {
            Some(p) => p,
            None => {
                rows.push(ResultRow {
                    method: label,
                    trainer: spec.trainer,
                    epsilon: cell.epsilon,
                    delta: cfg.budget.delta,
                    accuracies: Vec::new(),
                    failures: Vec::new(),
                    wall_clock_secs: Vec::new(),
                    ms_per_iteration: Vec::new(),
                });
                rows.len() - 1
            }
        };
        let row = &mut rows[pos];
        match outcome {
            Ok(report) => {
                row.accuracies
                    .push(report.final_test_accuracy().expect("checked in run_cell"));
                row.wall_clock_secs.push(report.wall_clock_secs);
                row.ms_per_iteration.push(report.ms_per_iteration());
            }
            Err(reason) => row.failures.push((cell.seed_index, reason)),
        }
    }
    let table = ResultsTable {
        dataset: cfg.name.clone(),
        rows,
    };
    write_outputs(&table, &out_dir)?;
    Ok(table)
}

fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    splits: &[std::result::Result<(Dataset, Dataset), String>],
    report_dir: &Path,
) -> std::result::Result<TrainReport, String> {
    let (train, test) = splits[cell.seed_index].as_ref().map_err(|e| format!("split: {e}"))?;
    let spec = &cfg.methods[cell.method];
    let label = spec.label();
    let seed = cell_seed(cfg.seeds.base, &label, cell.epsilon, cell.seed_index);
    let rng = RandomSource::new(seed);
    let trained = catch_unwind(AssertUnwindSafe(|| {
        train_method(spec, cell.epsilon, cfg.budget.delta, train, test, &rng)
    }));
    let mut report = match trained {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => return Err(e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "trainer panicked".into());
            return Err(format!("panic: {msg}"));
        }
    };
    if report.final_test_accuracy().is_none() {
        return Err("report has no test accuracy".into());
    }
    report.method = label.clone();
    report.seed = seed;
    report.config.extend([
        ("dataset".to_string(), cfg.name.clone()),
        ("trainer".to_string(), spec.trainer.name().to_string()),
        ("epsilon".to_string(), eps_text(cell.epsilon)),
        ("seed_index".to_string(), cell.seed_index.to_string()),
        ("n_train".to_string(), train.len().to_string()),
        ("n_test".to_string(), test.len().to_string()),
    ]);
    let path = report_dir.join(report_file_name(&label, cell.epsilon, cell.seed_index));
    report
        .save(&path)
        .map_err(|e| format!("writing {}: {e}", path.display()))?;
    Ok(report)
}

fn write_outputs(table: &ResultsTable, dir: &Path) -> Result<()> {
    fs::write(dir.join("table.csv"), table.to_csv())?;
    fs::write(dir.join("table.md"), table.to_markdown())?;
    fs::write(dir.join("timing.csv"), table.timing_csv())?;
    fs::write(dir.join("failures.csv"), table.failures_csv())?;
    Ok(())
}
