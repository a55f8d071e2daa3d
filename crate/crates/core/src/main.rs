use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmsvm::harness::{
    accountant_cmd, calibrate_cmd, curves_cmd, format_significant, run_experiment, verify_sensitivity,
    ExperimentConfig, RunOptions, SensitivityOptions,
};
use pmsvm::Error;

/// Differentially private multi-class linear SVMs.
#[derive(Parser, Debug)]
#[command(name = "pmsvm", version)]
struct Cli {
    /// Base seed (overrides the config's `seeds.base` for `run`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent cells for `run`.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Retrain without one sample and check the leave-one-out weight bound.
    VerifySensitivity {
        /// Largest training set size.
        #[arg(long, default_value_t = 40)]
        n: usize,
        /// Largest feature dimension.
        #[arg(long, default_value_t = 5)]
        d: usize,
        /// Class count (default: drawn from {3, 4}).
        #[arg(long)]
        c: Option<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Slack weight C/n (default: drawn from {0.01, 0.1}).
        #[arg(long)]
        cn: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Analytic Gaussian noise level for a sensitivity and budget.
    Calibrate {
        #[arg(long)]
        delta_sens: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Epsilon after each step of the subsampled Gaussian mechanism.
    Accountant {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        delta: f64,
    },
    /// Merge report traces into one long-format CSV.
    Curves {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Verification(_) => 2,
        Error::BudgetUnreachable(_) => 3,
        _ => 1,
    }
}

/// Writes `text` to `dir/name` when `--out` is given, else to stdout.
fn emit(out: &Option<PathBuf>, name: &str, text: &str) -> pmsvm::Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(name);
            fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn execute(cli: Cli) -> pmsvm::Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                workers: cli.workers,
                output_dir: cli.out.clone(),
                base_seed: cli.seed,
            };
            let table = run_experiment(&cfg, &opts)?;
            print!("{}", table.to_markdown());
            let out_dir = cli.out.unwrap_or(cfg.output_dir);
            let failed: usize = table.rows.iter().map(|r| r.failures.len()).sum();
            if failed > 0 {
                eprintln!("{failed} run(s) failed; see {}", out_dir.join("failures.csv").display());
            }
            eprintln!("results in {}", out_dir.display());
        }
        Command::VerifySensitivity {
            n,
            d,
            c,
            trials,
            cn,
            tol,
        } => {
            let report = verify_sensitivity(&SensitivityOptions {
                max_n: n,
                max_d: d,
                classes: c,
                trials,
                c_over_n: cn,
                tol,
                seed: cli.seed.unwrap_or(0),
            })?;
            if let Some(dir) = &cli.out {
                emit(&Some(dir.clone()), "sensitivity.csv", &report.to_csv())?;
            }
            println!("trials {}", report.trials.len());
            println!("worst_ratio {}", format_significant(report.worst_ratio(), 12));
            println!("violations {}", report.violations());
            if report.violations() > 0 {
                return Err(Error::Verification(format!(
                    "{} trial(s) exceed the leave-one-out bound plus slack",
                    report.violations()
                )));
            }
        }
        Command::Calibrate { delta_sens, eps, delta } => {
            emit(&cli.out, "sigma.txt", &calibrate_cmd(delta_sens, eps, delta)?)?;
        }
        Command::Accountant { q, sigma, steps, delta } => {
            emit(&cli.out, "accountant.csv", &accountant_cmd(q, sigma, steps, delta)?)?;
        }
        Command::Curves { reports } => {
            emit(&cli.out, "curves.csv", &curves_cmd(&reports)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
