use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use qlasso::calibration::BoundReport;
use qlasso::cli::{Diagnostics, ExampleReport};
use qlasso::io::{from_json, read_json_lines, to_json, Table};
use qlasso::simulation::{RunRecord, Summary};
use qlasso::solver::FitResult;

fn qlasso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlasso"))
        .args(args)
        .env_remove("QLASSO_THREADS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_problem(dir: &Path, n: usize, p: usize, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::<f64>::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let y: Vec<f64> = (0..n)
        .map(|i| 2.0 * x[(i, 0)] - x[(i, 2)] + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let xp = dir.join("x.csv");
    let yp = dir.join("y.csv");
    std::fs::write(&xp, Table::from_matrix(&x, "x").to_csv().unwrap()).unwrap();
    std::fs::write(&yp, Table::from_column("y", &y).to_csv().unwrap()).unwrap();
    (xp, yp)
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("error JSON on stderr");
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn example_reports_the_worked_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("example.json");
    let o = qlasso(&["example-sec4", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: ExampleReport = from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((report.first.phi_sq - 2.0 / 13.0).abs() <= 1e-8);
    assert!((report.first.gamma_eff.unwrap() - 6.5).abs() <= 1e-8);
    assert!((report.first.theta - 5.0 / 13.0).abs() <= 1e-10);
    assert!(report.second.phi_sq <= 1e-6);
    assert!(report.second.gamma_eff.is_none());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("first matrix") && text.contains("second matrix"));
}

#[test]
fn fit_above_lambda_max_writes_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_problem(dir.path(), 30, 8, 1);
    let out = dir.path().join("beta.csv");
    let o = qlasso(&["fit", "--design", path(&x), "--response", path(&y), "--lambda", "1e6", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = Table::read(&out).unwrap();
    assert_eq!(table.header, vec!["beta"]);
    let beta = table.column().unwrap();
    assert_eq!(beta.len(), 8);
    assert!(beta.iter().all(|&b| b == 0.0));
}

#[test]
fn fit_json_round_trips_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_problem(dir.path(), 40, 12, 2);
    let config = dir.path().join("solver.toml");
    std::fs::write(&config, "kkt_tolerance = 1e-9\n").unwrap();
    let runs: Vec<String> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("fit{k}.json"));
            let args = ["fit", "--design", path(&x), "--response", path(&y), "--lambda", "0.05", "--family", "huber:1.345", "--config", path(&config), "--out", path(&out)];
            let o = qlasso(&args);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read_to_string(out).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let fit: FitResult = from_json(&runs[0]).unwrap();
    assert!(fit.kkt_sup_violation <= 1e-9 && fit.sign_consistency_ok);
    assert!(fit.beta[0] > 1.0);
    assert_eq!(to_json(&fit).unwrap() + "\n", runs[0]);
}

#[test]
fn diagnose_orthonormal_design() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = DMatrix::<f64>::from_fn(16, 5, |_, _| rng.sample(StandardNormal));
    let x = a.qr().q() * 4.0;
    let xp = dir.path().join("x.csv");
    std::fs::write(&xp, Table::from_matrix(&x, "x").to_csv().unwrap()).unwrap();
    let out = dir.path().join("d.json");
    let o = qlasso(&["diagnose", "--design", path(&xp), "--set", "1,3", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let d: Diagnostics = from_json(&text).unwrap();
    assert!((d.phi_sq - 1.0).abs() <= 1e-8, "phi^2 = {}", d.phi_sq);
    assert!(d.theta.unwrap().abs() <= 1e-12);
    assert!((d.gamma_eff.unwrap() - 2.0).abs() <= 1e-7);
    assert!(d.lambda_x <= 1e-12);
    assert!(d.phi_sq_exact);
    assert_eq!(to_json(&d).unwrap() + "\n", text);
}

#[test]
fn calibrate_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cal.toml");
    std::fs::write(
        &config,
        "kind = \"thm1\"\nn = 100\np = 30.0\nlambda = 0.4\ngamma_eff = 3.0\n\n[constants]\nsigma = 0.5\nkappa = 0.6\nk_x = 3.0\nk_0 = 2.0\nc_h = 1.0\nc_v = 2.0\nl_h = 0.0\nl_g = 0.0\n",
    )
    .unwrap();
    let outs: Vec<(String, String)> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("report{k}.json"));
            let o = qlasso(&["calibrate", "--config", path(&config), "--lambda", "0.5", "--t", "2", "--out", path(&out)]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            (std::fs::read_to_string(out).unwrap(), String::from_utf8(o.stdout).unwrap())
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let report: BoundReport = from_json(&outs[0].0).unwrap();
    assert_eq!(report.inputs.lambda, 0.5);
    assert_eq!(report.inputs.t, 2.0);
    assert_eq!(report.combined_bound, Some(4.0 * 0.25 * 3.0));
    assert_eq!(to_json(&report).unwrap() + "\n", outs[0].0);
    let table = &outs[0].1;
    assert!(table.lines().skip(1).all(|l| l.ends_with("PASS") || l.ends_with("FAIL")));
    assert!(table.contains("(s0)"));
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scenario.toml");
    std::fs::write(
        &config,
        r#"n = 60
p = 15
s0 = 2
replications = 12
master_seed = 99
checks = ["thm1", "thm5"]
family = { kind = "gaussian" }
design = { law = "gaussian" }
beta0 = { kind = "sparse", magnitude = { kind = "fixed", value = 1.0 } }
error = { kind = "gaussian", sigma = 0.5 }
lambda = { kind = "noise_event", factor = 2.0, margin = 0.01 }
"#,
    )
    .unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = qlasso(&["simulate", "--config", path(&config), "--out", path(&out), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("one", "1");
    let b = run("four", "4");
    for file in ["records.jsonl", "summary.json", "summary.txt"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let records: Vec<RunRecord> = read_json_lines(&std::fs::read_to_string(a.join("records.jsonl")).unwrap()).unwrap();
    assert_eq!(records.len(), 12);
    assert!(records.iter().enumerate().all(|(i, r)| r.replication == i));
    let text = std::fs::read_to_string(a.join("summary.json")).unwrap();
    let summary: Summary = from_json(&text).unwrap();
    assert_eq!(to_json(&summary).unwrap() + "\n", text);
    let thm1 = summary.theorems.iter().find(|t| t.theorem == qlasso::simulation::TheoremKind::Thm1).unwrap();
    assert_eq!(thm1.passed, Some(true));

    let reseeded = dir.path().join("reseeded");
    let o = qlasso(&["simulate", "--config", path(&config), "--out", path(&reseeded), "--seed", "100"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(a.join("records.jsonl")).unwrap(), std::fs::read(reseeded.join("records.jsonl")).unwrap());
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_problem(dir.path(), 20, 4, 4);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y\n1.0\nnot-a-number\n").unwrap();
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["fit", "--design", path(&x), "--response", path(&y), "--lambda", "-1"], "invalid_parameter"),
        (vec!["fit", "--design", path(&x), "--response", path(&y), "--lambda", "0.1", "--family", "poisson"], "unknown_family"),
        (vec!["fit", "--design", path(&x), "--response", path(&y), "--lambda", "0.1", "--family", "logistic"], "domain_violation"),
        (vec!["fit", "--design", path(&x), "--response", path(&x), "--lambda", "0.1"], "shape_mismatch"),
        (vec!["fit", "--design", path(&x), "--response", path(&bad), "--lambda", "0.1"], "parse"),
        (vec!["fit", "--design", "/nonexistent/x.csv", "--response", path(&y), "--lambda", "0.1"], "io"),
        (vec!["diagnose", "--design", path(&x), "--set", "0,9"], "invalid_parameter"),
        (vec!["diagnose", "--design", path(&x), "--set", "a"], "invalid_parameter"),
        (vec!["frobnicate"], "invalid_parameter"),
    ];
    for (args, kind) in cases {
        let o = qlasso(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(error_kind(&o), kind, "{args:?}");
    }
}

#[test]
fn numerical_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cal.toml");
    std::fs::write(
        &config,
        "kind = \"thm2\"\nn = 100\np = 10.0\nlambda = 0.1\ngamma_eff = 1.0\nfamily = { kind = \"logistic\" }\nsigma = 0.5\nkappa = 0.5\nk_x = 800.0\nk_0 = 0.0\n",
    )
    .unwrap();
    let o = qlasso(&["calibrate", "--config", path(&config)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_kind(&o), "condition_failure");
}
