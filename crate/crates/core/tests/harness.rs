use std::fs;
use std::path::Path;
use std::process::Command;

use pmsvm::harness::{report_file_name, run_experiment, ExperimentConfig, RunOptions};
use pmsvm::trainers::TrainReport;

const BASE: &str = r#"
name = "blobs"

[dataset]
source = "synthetic"
classes = 3
per_class = 40
dim = 4
separation = 6.0
seed = 7

[budget]
epsilons = [1.0, 4.0]

[seeds]
count = 3
base = 11

[[method]]
trainer = "pmsvm_wp"
c_over_n = 0.01
tol = 1e-4

[[method]]
trainer = "pmsvm_gp"
steps = 30
batch = 32
learning_rate = 1.0
trace_every = 10

[[method]]
trainer = "nonprivate_cs"
tol = 1e-4
"#;

fn run(text: &str, out: &Path) -> pmsvm::harness::ResultsTable {
    let cfg = ExperimentConfig::from_toml(text, "test.toml").unwrap();
    let opts = RunOptions {
        workers: Some(2),
        output_dir: Some(out.to_path_buf()),
        base_seed: None,
    };
    run_experiment(&cfg, &opts).unwrap()
}

#[test]
fn three_seeds_give_three_reports_and_a_spread() {
    let dir = tempfile::tempdir().unwrap();
    let table = run(BASE, dir.path());
    let row = table.row("pmsvm_wp", Some(1.0)).unwrap();
    assert_eq!(row.runs(), 3);
    assert!(row.std_accuracy().is_some());
    for idx in 0..3 {
        let path = dir
            .path()
            .join("reports")
            .join(report_file_name("pmsvm_wp", Some(1.0), idx));
        assert!(path.exists(), "{}", path.display());
    }
    let nonprivate = table.row("nonprivate_cs", None).unwrap();
    assert_eq!(nonprivate.runs(), 3);
    for name in ["table.csv", "table.md", "timing.csv", "failures.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let csv = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(!csv.contains("wall"), "timing must stay out of table.csv");
}

#[test]
fn rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(BASE, a.path());
    run(BASE, b.path());
    let ta = fs::read(a.path().join("table.csv")).unwrap();
    let tb = fs::read(b.path().join("table.csv")).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn dropping_a_method_leaves_the_others_unchanged() {
    let full = tempfile::tempdir().unwrap();
    let reduced = tempfile::tempdir().unwrap();
    let t_full = run(BASE, full.path());
    let without_gp = BASE.replace(
        "[[method]]\ntrainer = \"pmsvm_gp\"\nsteps = 30\nbatch = 32\nlearning_rate = 1.0\ntrace_every = 10\n",
        "",
    );
    assert_ne!(without_gp, BASE);
    let t_reduced = run(&without_gp, reduced.path());
    assert!(t_reduced.row("pmsvm_gp", Some(1.0)).is_none());
    for eps in [Some(1.0), Some(4.0)] {
        let a = t_full.row("pmsvm_wp", eps).unwrap();
        let b = t_reduced.row("pmsvm_wp", eps).unwrap();
        assert_eq!(a.accuracies, b.accuracies);
    }
}

#[test]
fn table_cells_recompute_from_reports() {
    let dir = tempfile::tempdir().unwrap();
    let table = run(BASE, dir.path());
    for (method, eps) in [
        ("pmsvm_wp", Some(4.0)),
        ("pmsvm_gp", Some(1.0)),
        ("nonprivate_cs", None),
    ] {
        let row = table.row(method, eps).unwrap();
        let accs: Vec<f64> = (0..3)
            .map(|i| {
                let report =
                    TrainReport::load(dir.path().join("reports").join(report_file_name(method, eps, i))).unwrap();
                report.final_test_accuracy().unwrap()
            })
            .collect();
        let mean = accs.iter().sum::<f64>() / 3.0;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0;
        assert!((row.mean_accuracy().unwrap() - mean).abs() <= 1e-12);
        assert!((row.std_accuracy().unwrap() - var.sqrt()).abs() <= 1e-12);
    }
}

#[test]
fn failed_cells_do_not_stop_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{BASE}\n[[method]]\ntrainer = \"ovr_wp\"\nlabel = \"starved\"\ntol = 1e-12\nc_over_n = 50.0\nmax_iter = 1\n"
    );
    let table = run(&text, dir.path());
    let starved = table.row("starved", Some(1.0)).unwrap();
    assert_eq!(starved.runs(), 0);
    assert_eq!(starved.failures.len(), 3);
    assert_eq!(table.row("pmsvm_wp", Some(1.0)).unwrap().runs(), 3);
    let failures = fs::read_to_string(dir.path().join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 1 + 6);
}

fn pmsvm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pmsvm"))
}

#[test]
fn curves_concatenates_traces() {
    let dir = tempfile::tempdir().unwrap();
    run(BASE, dir.path());
    let reports: Vec<_> = (0..2)
        .map(|i| {
            dir.path()
                .join("reports")
                .join(report_file_name("pmsvm_gp", Some(1.0), i))
        })
        .collect();
    let out = pmsvm().arg("curves").args(&reports).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // trace_every = 10 over 30 steps: steps 10, 20, 30 per run.
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert!(text.starts_with("run,method,step,train_loss,train_accuracy,test_accuracy\n"));
}

#[test]
fn cli_exit_codes() {
    let ok = pmsvm()
        .args(["calibrate", "--delta-sens", "1", "--eps", "1", "--delta", "1e-5"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let sigma: f64 = String::from_utf8(ok.stdout).unwrap().trim().parse().unwrap();
    assert!((sigma - 3.73063163482).abs() < 1e-10);

    let unreachable = pmsvm()
        .args([
            "accountant",
            "--q",
            "0.1",
            "--sigma",
            "0",
            "--steps",
            "5",
            "--delta",
            "1e-5",
        ])
        .output()
        .unwrap();
    assert_eq!(unreachable.status.code(), Some(3));

    let bogus = pmsvm().arg("frobnicate").output().unwrap();
    assert_eq!(bogus.status.code(), Some(1));

    let bad_domain = pmsvm()
        .args(["calibrate", "--delta-sens", "1", "--eps", "-1", "--delta", "1e-5"])
        .output()
        .unwrap();
    assert_eq!(bad_domain.status.code(), Some(1));

    let help = pmsvm().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn cli_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(&config, BASE.replace("count = 3", "count = 2")).unwrap();
    let out_dir = dir.path().join("out");
    let out = pmsvm()
        .args(["--workers", "1", "--out"])
        .arg(&out_dir)
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("pmsvm_wp"));
    assert!(out_dir.join("table.csv").exists());
}

#[test]
fn accountant_output_is_monotone() {
    let out = pmsvm()
        .args([
            "accountant",
            "--q",
            "0.02",
            "--sigma",
            "1.2",
            "--steps",
            "200",
            "--delta",
            "1e-5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let eps: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(eps.len(), 200);
    assert!(eps.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn sensitivity_cli_passes_on_a_small_grid() {
    let out = pmsvm()
        .args(["verify-sensitivity", "--n", "12", "--d", "3", "--trials", "10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("violations 0"));
}
