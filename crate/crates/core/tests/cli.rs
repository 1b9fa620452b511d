use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use worldline::ProblemConfig;

fn worldline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_worldline"))
        .args(args)
        .env("WORLDLINE_THREADS", "2")
        .output()
        .expect("spawn worldline")
}

fn write_config(dir: &Path, name: &str, cfg: &ProblemConfig) -> String {
    let p = dir.join(name);
    fs::write(&p, cfg.to_json().unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn solve(cfg: &ProblemConfig, extra: &[&str]) -> (tempfile::TempDir, Output) {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "cfg.json", cfg);
    let out = tmp.path().join("out");
    let mut args = vec!["solve", "--config", &c, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = worldline(&args);
    (tmp, o)
}

#[test]
fn solve_linear_writes_all_outputs() {
    let (tmp, o) = solve(&ProblemConfig::linear_example(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    let traj = read(&out, "trajectory.csv");
    let mut lines = traj.lines();
    assert!(lines.next().unwrap().starts_with("gamma,"));
    assert_eq!(lines.count(), 32);
    let diag = read(&out, "diagnostics.csv");
    assert_eq!(diag.lines().next().unwrap().split(',').count(), 11);
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "summary.json")).unwrap();
    assert_eq!(summary["converged"], true);
    let manifest: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert!(manifest.to_string().contains("trajectory.csv"));
}

#[test]
fn solve_is_byte_deterministic() {
    let cfg = ProblemConfig::quartic_example();
    let (a, oa) = solve(&cfg, &[]);
    let (b, ob) = solve(&cfg, &[]);
    assert_eq!(oa.status.code(), Some(0));
    assert_eq!(ob.status.code(), Some(0));
    for f in ["trajectory.csv", "diagnostics.csv", "summary.json"] {
        let fa = read(&a.path().join("out"), f);
        let fb = read(&b.path().join("out"), f);
        assert!(fa == fb, "{f} differs between runs");
    }
    let files = |d: &tempfile::TempDir| {
        let m: serde_json::Value = serde_json::from_str(&read(&d.path().join("out"), "manifest.json")).unwrap();
        m["files"].clone()
    };
    assert_eq!(files(&a), files(&b));
}

#[test]
fn free_solve_fills_space_charges() {
    let (tmp, o) = solve(&ProblemConfig::free_example(), &["--order", "sbp42"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let diag = read(&tmp.path().join("out"), "diagnostics.csv");
    let row = diag.lines().nth(2).unwrap();
    assert!(row.split(',').all(|c| !c.is_empty()), "{row}");
}

#[test]
fn iteration_cap_exits_two_and_still_writes() {
    let (tmp, o) = solve(&ProblemConfig::quartic_example(), &["--max-iter", "1", "--tol", "1e-15"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(tmp.path().join("out/trajectory.csv").exists());
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"n_gamma": 2, "bogus": 1}"#).unwrap();
    let out = tmp.path().join("o");
    let o = worldline(&["solve", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());

    let missing = tmp.path().join("nope.json");
    let o = worldline(&["solve", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    assert_eq!(worldline(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(worldline(&["--help"]).status.code(), Some(0));
}

#[test]
fn sweep_writes_table_and_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "cfg.json", &ProblemConfig::linear_example());
    let out = tmp.path().join("sweep");
    let o = worldline(&["sweep", "--config", &c, "--out", out.to_str().unwrap(), "--n-list", "16,32,64"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(&out, "convergence.csv");
    assert_eq!(table.lines().count(), 4);
    let fit: serde_json::Value = serde_json::from_str(&read(&out, "fit.json")).unwrap();
    assert_eq!(fit["all_converged"], true);

    let o = worldline(&["sweep", "--config", &c, "--out", out.to_str().unwrap(), "--n-list", "64,32"]);
    assert_eq!(o.status.code(), Some(1));
    let o = worldline(&[
        "sweep", "--config", &c, "--out", out.to_str().unwrap(), "--n-list", "16,32", "--tdot-list", "1,2",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn dump_operator_json() {
    let o = worldline(&["dump-operator", "--order", "sbp21", "--n", "4", "--dgamma", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["d"][0][0], -2.0);
    assert!(v.get("dbar").is_none());

    let o = worldline(&[
        "dump-operator", "--order", "sbp42", "--n", "9", "--dgamma", "0.1", "--regularized", "--init-value", "1.5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dbar"].as_array().unwrap().len(), 10);
    assert_eq!(v["sigma0"], -1.0);

    let o = worldline(&["dump-operator", "--order", "sbp42", "--n", "5", "--dgamma", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
}
