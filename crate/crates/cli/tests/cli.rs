use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file)
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partsec")).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("artifact exists")).expect("valid json")
}

fn employee_args<'a>(csv: &'a str, policy: &'a str) -> Vec<&'a str> {
    vec!["--csv", csv, "--policy", policy]
}

#[test]
fn demos_pass_and_are_reproducible() {
    for name in ["employee", "rst-join", "sixteen"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (ra, rb) = (run(a.path(), &["demo", name]), run(b.path(), &["demo", name]));
        assert_eq!(code(&ra), 0, "{name}: {}", String::from_utf8_lossy(&ra.stderr));
        assert_eq!(ra.stdout, rb.stdout);
        let file = format!("demo-{name}.json");
        assert_eq!(std::fs::read(a.path().join(&file)).unwrap(), std::fs::read(b.path().join(&file)).unwrap());
        assert_eq!(json(&a.path().join(&file))["passed"], Value::Bool(true));
    }
}

#[test]
fn query_then_audit_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, policy) = (data("employee.csv"), data("employee-policy.toml"));
    let (csv, policy) = (csv.to_str().unwrap(), policy.to_str().unwrap());
    let mut args = vec!["query"];
    args.extend(employee_args(csv, policy));
    args.extend(["--attr", "EId", "--keyword", "E259", "--keyword", "E101", "--keyword", "E199", "--naive"]);
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = dir.path().join("trace.json");
    let audit = run(dir.path(), &["audit", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&audit), 3, "naive trace must be reported as leaking");

    let binned = tempfile::tempdir().unwrap();
    args.pop();
    let o = run(binned.path(), &args);
    assert_eq!(code(&o), 0);
    let trace = binned.path().join("trace.json");
    let audit = run(binned.path(), &["audit", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&audit), 0, "{}", String::from_utf8_lossy(&audit.stdout));
}

#[test]
fn exhaustive_audit_is_reproducible() {
    let (csv, policy) = (data("employee.csv"), data("employee-policy.toml"));
    let mut args = vec!["audit", "--exhaustive", "--attr", "EId", "--seed", "5"];
    args.extend(employee_args(csv.to_str().unwrap(), policy.to_str().unwrap()));
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (run(a.path(), &args), run(b.path(), &args));
    assert_eq!(code(&ra), code(&rb));
    assert_eq!(ra.stdout, rb.stdout);
}

#[test]
fn hybrid_counters_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let csvs = [("R", data("R.csv")), ("S", data("S.csv")), ("T", data("T.csv"))].map(|(n, p)| format!("{n}={}", p.display()));
    let policy = data("rst-policy.toml");
    for (mode, scans) in [("naive", 8), ("all-private", 6), ("modified", 4)] {
        let mut args = vec!["hybrid-run"];
        for c in &csvs {
            args.extend(["--csv", c.as_str()]);
        }
        args.extend(["--policy", policy.to_str().unwrap(), "--join", "R.Region=S.Region", "--workload-join", "S.Region=T.Region", "--mode", mode]);
        let o = run(dir.path(), &args);
        assert_eq!(code(&o), 0, "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        let report = json(&dir.path().join("hybrid-run.json"));
        assert_eq!(report["predicted"]["private_scan"], scans, "{mode}");
        assert_eq!(report["execution"]["measured"], report["predicted"], "{mode}");
    }
}

#[test]
fn invalid_input_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let policy = data("rst-policy.toml");
    let r = format!("R={}", data("R.csv").display());
    let o = run(dir.path(), &["hybrid-plan", "--csv", &r, "--policy", policy.to_str().unwrap(), "--join", "R.Region=Q.Region"]);
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &["cost", "--sweep", "nope=1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn cost_sweep_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["cost", "--sweep", "gamma=10..100000:5", "alpha=0..0.9:4"];
    let (ra, rb) = (run(a.path(), &args), run(b.path(), &args));
    assert_eq!(code(&ra), 0);
    assert_eq!(ra.stdout, rb.stdout);
    let csv = std::fs::read_to_string(a.path().join("cost.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.starts_with("alpha,beta,gamma,rho,d,sb,nsb,eta_exact,eta_simplified"));
}

#[test]
fn report_bundles_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["demo", "employee"])), 0);
    assert_eq!(code(&run(dir.path(), &["cost", "--params", data("params.toml").to_str().unwrap()])), 0);
    assert_eq!(code(&run(dir.path(), &["report"])), 0);
    let report = json(&dir.path().join("report.json"));
    let artifacts = report["artifacts"].as_object().unwrap();
    assert!(artifacts.contains_key("demo-employee.json"));
    assert!(artifacts.contains_key("cost.json"));
}
