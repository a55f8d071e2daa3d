use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::privacy::{calibrate_analytic_gaussian, PrivacyBudget, RdpLedger};
use crate::trainers::TrainReport;

/// Plain decimal with `digits` significant digits (no exponent).
pub fn format_significant(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return format!("{:.*}", digits.saturating_sub(1), 0.0);
    }
    let exponent = x.abs().log10().floor() as i64;
    let mut decimals = (digits as i64 - 1 - exponent).max(0) as usize;
    let mut text = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit (9.99… → 10.0).
    let significant = text
        .trim_start_matches(['-', '0', '.'])
        .chars()
        .filter(char::is_ascii_digit)
        .count();
    if significant > digits && decimals > 0 {
        decimals -= 1;
        text = format!("{x:.decimals$}");
    }
    text
}

/// Noise standard deviation for sensitivity `delta_sens` at `(ε, δ)`.
pub fn calibrate_cmd(delta_sens: f64, epsilon: f64, delta: f64) -> Result<String> {
    let budget = PrivacyBudget::new(epsilon, delta)?;
    let sigma = calibrate_analytic_gaussian(delta_sens, &budget)?;
    Ok(format!("{}\n", format_significant(sigma, 12)))
}

/// `ε(δ)` after each of `steps` subsampled Gaussian steps.
pub fn accountant_trace(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("sampling rate must lie in [0, 1], got {q}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!(
            "noise multiplier must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 && q > 0.0 && steps > 0 {
        return Err(Error::BudgetUnreachable(
            "noise multiplier 0 gives no finite epsilon".into(),
        ));
    }
    let mut ledger = RdpLedger::new();
    let mut trace = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        ledger.step(q, sigma)?;
        let eps = ledger.epsilon(delta)?;
        if !eps.is_finite() {
            return Err(Error::BudgetUnreachable(format!(
                "epsilon is unbounded after {} steps",
                ledger.steps()
            )));
        }
        trace.push(eps);
    }
    Ok(trace)
}

/// `step,epsilon` CSV; a zero-step run prints the header alone (ε = 0).
pub fn accountant_cmd(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<String> {
    let trace = accountant_trace(q, sigma, steps, delta)?;
    let mut out = String::from("step,epsilon\n");
    for (t, eps) in trace.iter().enumerate() {
        let _ = writeln!(out, "{},{}", t + 1, format_significant(*eps, 12));
    }
    Ok(out)
}

/// Long-format convergence CSV over several reports, tagged by run id
/// (the file stem, suffixed when two stems collide).
pub fn curves_cmd(paths: &[PathBuf]) -> Result<String> {
    if paths.is_empty() {
        return Err(Error::Config("curves needs at least one report".into()));
    }
    let mut out = String::from("run,method,step,train_loss,train_accuracy,test_accuracy\n");
    let mut seen = HashSet::new();
    for (i, path) in paths.iter().enumerate() {
        let report = TrainReport::load(path)?;
        if report.trace.is_empty() {
            return Err(Error::Report {
                path: path.clone(),
                message: "report has no trace".into(),
            });
        }
        let mut run = run_id(path);
        if !seen.insert(run.clone()) {
            run = format!("{run}#{i}");
            seen.insert(run.clone());
        }
        for p in &report.trace {
            let test = p.test_accuracy.map_or_else(String::new, |v| v.to_string());
            let _ = writeln!(
                out,
                "{run},{},{},{},{},{test}",
                report.method, p.step, p.train_loss, p.train_accuracy
            );
        }
    }
    Ok(out)
}

fn run_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().replace(',', "_"))
        .unwrap_or_else(|| path.display().to_string())
}
