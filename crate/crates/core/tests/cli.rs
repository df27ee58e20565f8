use std::path::Path;
use std::process::{Command, Output};

use reachkit::harness::record::read_rows;
use reachkit::harness::MethodTag;

fn reachkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reachkit")).args(args).output().unwrap()
}

fn problem(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../problems")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn solve_prints_a_record_and_appends_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("one.json");
    let text = std::fs::read_to_string(problem("integrator_1d.json")).unwrap();
    std::fs::write(&spec, text.replace(r#"{ "points": [[0.0], [-0.3], [0.6]] }"#, "[0.0]")).unwrap();
    let out = dir.path().join("rows.csv");
    for method in ["ds", "dp"] {
        let o = reachkit(&["solve", "--problem", spec.to_str().unwrap(), "--method", method, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let record: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(record["state_dim"], 1);
    }
    let rows = read_rows(&out).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].method, MethodTag::Ds);
    assert_eq!(rows[1].method, MethodTag::Dp);
    assert!((rows[0].probability - 0.8186).abs() < 1e-3);
}

#[test]
fn grid_writes_one_row_per_point_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    let o = reachkit(&["grid", "--problem", &problem("integrator_1d.json"), "--method", "ds", "--method", "dp", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["points"], 3);
    assert_eq!(read_rows(&out).unwrap().len(), 6);
}

#[test]
fn schema_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{ "system": { "chain": { "n": 2, "ns": 0.1 } }, "unknown": 1 }"#).unwrap();
    for path in [bad.to_str().unwrap(), "/nonexistent/problem.json"] {
        let o = reachkit(&["solve", "--problem", path]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
    let o = reachkit(&["solve", "--problem", &problem("double_integrator_sweep.json")]);
    assert_eq!(o.status.code(), Some(2), "sweeps are rejected by solve");
    let o = reachkit(&["solve", "--problem", &problem("double_integrator.json"), "--eps", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_errors_exit_with_code_3() {
    let o = reachkit(&["solve", "--problem", &problem("chain40.json"), "--method", "dp"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bench_reports_infeasible_dp() {
    let o = reachkit(&["bench", "--n", "4", "--points", "1", "--method", "dp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("4,dp,1,infeasible"), "{text}");
}
