use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_perceived-returns"));
    c.env_remove("LR_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_of(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1));
    serde_json::from_slice(&out.stderr).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn check<'a>(report: &'a Value, method: &str, param: &str) -> &'a Value {
    report["checks"].as_array().unwrap().iter().find(|c| c["method"] == method && c["param"] == param).unwrap()
}

fn summary_row(csv: &str, method: &str, param: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.split(',').map(String::from).collect::<Vec<_>>())
        .find(|f| f[0] == method && f[1] == param)
        .unwrap()
}

#[test]
fn reproduce_table_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["reproduce", "--table", "1", "--n", "10000", "--seed", "7", "--out", out]);
    assert!(stdout.contains("table 1: ok"));
    let report = read_json(&dir.path().join("checks_1.json"));
    assert_eq!(report["ok"], true);
    for (m, p) in [("probit", "Constant"), ("probit", "sigma"), ("cf", "Constant"), ("cf", "sigma_zeta"), ("cf", "rho")] {
        assert_eq!(check(&report, m, p)["status"], "pass", "{m} {p}");
    }
    let table = std::fs::read_to_string(dir.path().join("table_1.csv")).unwrap();
    assert!(table.starts_with("param,target,probit,probit_se,cf,cf_se,mi_lo,mi_hi\n"));
    for f in ["density_1_probit.dat", "density_1_cf.dat", "density_1_latent.dat", "timing_1.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    // same config and seed, same table
    let again = tempfile::tempdir().unwrap();
    ok(&["reproduce", "--table", "1", "--n", "10000", "--seed", "7", "--out", again.path().to_str().unwrap()]);
    assert_eq!(table, std::fs::read_to_string(again.path().join("table_1.csv")).unwrap());
}

#[test]
fn reproduce_table_2_flags_invalid_instrument() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["reproduce", "--table", "2", "--n", "10000", "--out", dir.path().to_str().unwrap()]);
    let report = read_json(&dir.path().join("checks_2.json"));
    assert_eq!(report["ok"], true);
    assert_eq!(check(&report, "cf_z1", "Constant")["status"], "expected_miss");
    assert_eq!(check(&report, "cf_z1", "Constant")["expected"], false);
    for p in ["Constant", "sigma_zeta", "rho"] {
        assert_eq!(check(&report, "cf_z2", p)["status"], "pass");
    }
    assert_eq!(check(&report, "probit", "sigma")["expected"], false);
}

#[test]
fn reproduce_a4_marks_mi_miss_as_expected() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["reproduce", "--table", "A4", "--n", "10000", "--out", dir.path().to_str().unwrap()]);
    let report = read_json(&dir.path().join("checks_A4.json"));
    let sigma = check(&report, "mi", "sigma_eps");
    assert_eq!(sigma["within"], false);
    assert_eq!(sigma["status"], "expected_miss");
    assert_eq!(report["ok"], true);
    for f in ["density_A4_mi_lo.dat", "density_A4_mi_hi.dat", "table_A4.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let timing = std::fs::read_to_string(dir.path().join("timing_A4.csv")).unwrap();
    assert!(timing.lines().any(|l| l.starts_with("A4,mi,")));
}

#[test]
fn sweep_sim1_is_consistent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let summary = ok(&["sweep", "--scenario", "sim1", "--replications", "200", "--n", "2000", "--seed", "11", "--out", d]);
    let mean: f64 = summary_row(&summary, "probit", "Constant")[3].parse().unwrap();
    assert!((mean - 1.0).abs() <= 0.05, "{mean}");
    let reps = std::fs::read_to_string(dir.path().join("replications.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 200 * 5);

    // thread count does not change anything
    let other = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--scenario", "sim1", "--replications", "200", "--n", "2000", "--seed", "11", "--out"])
        .arg(other.path())
        .env("LR_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(reps, std::fs::read_to_string(other.path().join("replications.csv")).unwrap());
}

#[test]
fn two_replications_same_seed_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["sweep", "--scenario", "sim2", "--replications", "2", "--n", "500", "--seed", "3", "--out", d.path().to_str().unwrap()]);
    }
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("replications.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let one = run(&["sweep", "--scenario", "sim2", "--replications", "1", "--seed", "3", "--out", a.path().to_str().unwrap()]);
    assert_eq!(error_of(&one)["error"]["kind"], "domain");
}

fn mi_coverage(scenario: &str) -> f64 {
    let dir = tempfile::tempdir().unwrap();
    let summary = ok(&[
        "sweep", "--scenario", scenario, "--replications", "50", "--n", "2000", "--seed", "1234", "--methods", "mi", "--out",
        dir.path().to_str().unwrap(),
    ]);
    summary_row(&summary, "mi", "psi")[6].parse().unwrap()
}

#[test]
fn sweep_mi_coverage() {
    for s in ["A2", "A3", "A5"] {
        let c = mi_coverage(s);
        assert!((0.8..=1.0).contains(&c), "{s}: {c}");
    }
}

/// The odds-ratio moments have infinite variance in A1, so coverage hovers
/// around 0.8 and dips below it for some seeds.
#[test]
#[ignore = "A1 coverage is about 0.8 and not reliably above it"]
fn sweep_mi_coverage_a1() {
    let c = mi_coverage("A1");
    assert!((0.8..=1.0).contains(&c), "{c}");
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let printed = ok(&["simulate", "--scenario", "A2", "--out", d.to_str().unwrap(), "--seed", "4", "--n", "2000"]);
    let data = d.join("A2.csv");
    assert_eq!(printed.trim(), data.to_str().unwrap());
    assert!(d.join("A2.hidden.csv").exists());
    let targets = read_json(&d.join("A2.targets.json"));
    assert_eq!(targets["sigma_true"], 4.0);

    let probit: Value = serde_json::from_str(&ok(&["estimate", "probit", "--data", data.to_str().unwrap()])).unwrap();
    assert_eq!(probit["converged"], true);
    assert_eq!(probit["params"][1]["name"], "sigma");

    let cf_path = d.join("cf.json");
    ok(&["estimate", "cf", "--data", data.to_str().unwrap(), "--instruments", "z_2", "--out", cf_path.to_str().unwrap()]);
    let cf = read_json(&cf_path);
    assert_eq!(cf["first_stage"]["instruments"], serde_json::json!(["z_1", "z_2"]));
    assert_eq!(cf["params"][2]["name"], "rho");

    let mi_path = d.join("mi.json");
    ok(&[
        "estimate", "mi", "--data", data.to_str().unwrap(), "--alpha", "0.05", "--min-points", "50", "--seed", "9", "--out",
        mi_path.to_str().unwrap(),
    ]);
    let mi = read_json(&mi_path);
    assert!(mi["accepted"].as_array().unwrap().len() >= 50);
    assert_eq!(mi["bounds"][1]["name"], "sigma_eps");
    assert!(mi["runtime_seconds"].as_f64().unwrap() > 0.0);
    assert!(mi["diagnostics"]["dropped_moments"].is_array());
}

#[test]
fn scenario_file_via_config() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("custom.toml");
    std::fs::write(
        &file,
        "label = \"custom\"\nn = 500\nseed = 1\nbeta = [1.0]\ndelta = [0.0, 1.0]\n\
         sigma = [[4.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 4.0]]\n",
    )
    .unwrap();
    ok(&["simulate", "--config", file.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", "2"]);
    assert!(dir.path().join("custom.csv").exists());
}

#[test]
fn errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let e = error_of(&run(&["reproduce", "--table", "A9", "--out", d]));
    assert_eq!(e["error"]["kind"], "domain");
    let e = error_of(&run(&["simulate", "--scenario", "sim1", "--out", d]));
    assert_eq!(e["error"]["kind"], "usage");
    let e = error_of(&run(&["simulate", "--scenario", "nope", "--out", d, "--seed", "1"]));
    assert_eq!(e["error"]["kind"], "unknown_scenario");

    ok(&["simulate", "--scenario", "sim2", "--out", d, "--seed", "1", "--n", "300"]);
    let data = dir.path().join("sim2.csv");
    let e = error_of(&run(&["estimate", "mi", "--data", data.to_str().unwrap()]));
    assert!(e["error"]["message"].as_str().unwrap().contains("--seed"));
    let e = error_of(&run(&["estimate", "cf", "--data", data.to_str().unwrap(), "--instruments", "z_1"]));
    assert!(e["error"]["message"].as_str().unwrap().contains("covariate"));
    let e = error_of(&run(&["estimate", "probit", "--data", dir.path().join("missing.csv").to_str().unwrap()]));
    assert_eq!(e["error"]["kind"], "csv");
    let e = error_of(&run(&["--threads", "0", "estimate", "probit", "--data", data.to_str().unwrap()]));
    assert!(e["error"]["message"].as_str().unwrap().contains("threads"));
}
