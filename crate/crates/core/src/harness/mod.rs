//! Experiment harness behind the `pmsvm` CLI.
//!
//! An experiment is a TOML file naming a dataset, a budget grid, methods and
//! a seed plan. [`run_experiment`] trains every (method, ε, seed) cell on a
//! worker pool and writes `table.csv`, `table.md`, `timing.csv`,
//! `failures.csv` and one report per run under `reports/`.

mod commands;
mod config;
mod run;
mod sensitivity;

pub use commands::{accountant_cmd, accountant_trace, calibrate_cmd, curves_cmd, format_significant};
pub use config::{BudgetGrid, DatasetSource, ExperimentConfig, MethodSpec, Preprocess, SeedPlan, TrainerKind};
pub use run::{
    cell_seed, prepare_split, report_file_name, run_experiment, train_method, ResultRow, ResultsTable, RunOptions,
};
pub use sensitivity::{
    loo_trial, random_instance, verify_sensitivity, LooTrial, SensitivityOptions, SensitivityReport, MAX_LOO_SAMPLES,
};
