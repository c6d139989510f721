use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cosymlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosymlab")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn close(v: &Value, expected: f64, tol: f64) -> bool {
    (v.as_f64().unwrap() - expected).abs() <= tol
}

#[test]
fn flux_on_standard_torus() {
    let out = cosymlab(&["flux"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["passed"], true);
    let loops = r["details"]["loops"].as_array().unwrap();
    assert_eq!(loops.len(), 2);
    let x = &loops[0]["flux"]["h1_pairings"];
    let y = &loops[1]["flux"]["h1_pairings"];
    assert!(close(&x[0], 0.0, 1e-8) && close(&x[1], 1.0, 1e-8));
    assert!(close(&y[0], -1.0, 1e-8) && close(&y[1], 0.0, 1e-8));
}

#[test]
fn reeb_check_recovers_cat_map() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cat.toml",
        "[manifold]\nkind = \"mapping_torus\"\nreeb_period = 1.0\nmonodromy = [[2, 1], [1, 1]]\n",
    );
    let out = cosymlab(&["reeb-check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["details"]["monodromy"]["matrix"], serde_json::json!([[2, 1], [1, 1]]));
    assert_eq!(r["details"]["monodromy"]["determinant"], 1);
}

#[test]
fn malformed_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("syntax.toml", "[manifold\nkind = 3"),
        ("unknown.toml", "bogus = 1\n"),
        ("weights.toml", "[manifold]\nkind = \"product_torus\"\nn = 2\nweights = [1.0]\n"),
        ("det.toml", "[manifold]\nkind = \"mapping_torus\"\nmonodromy = [[2, 0], [0, 1]]\n"),
    ] {
        let out = cosymlab(&["volume", "--config", &write(dir.path(), name, text)]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert!(out.stdout.is_empty());
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(cosymlab(&["volume", "--config", "/nonexistent/run.toml"]).status.code(), Some(2));
    assert_eq!(cosymlab(&["volume", "--tolerance", "-1"]).status.code(), Some(2));
}

#[test]
fn unsupported_model_for_command_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cat.toml", "[manifold]\nkind = \"mapping_torus\"\nmonodromy = [[1, 1], [0, 1]]\n");
    assert_eq!(cosymlab(&["commutator", "--config", &cfg]).status.code(), Some(2));
    let unknown_loop = write(dir.path(), "loop.toml", "[flux]\nloops = [\"z7\"]\n");
    assert_eq!(cosymlab(&["flux", "--config", &unknown_loop]).status.code(), Some(2));
}

#[test]
fn failed_check_exits_one_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "weighted.toml",
        "[manifold]\nkind = \"product_torus\"\nweights = [2.5]\nreeb_period = 0.7\n",
    );
    let out = cosymlab(&["reeb-check", "--tolerance", "1e-300", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["passed"], false);
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let out = cosymlab(&["volume", "--seed", "42", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        assert!(out.stdout.is_empty());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(v["seed"], 42);
}

#[test]
fn integrals_write_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("torus.csv");
    let cfg = write(
        dir.path(),
        "run.toml",
        &format!(
            "[manifold]\nkind = \"product_torus\"\nweights = [1.0, 2.0]\n\n[integrals]\nset = \"pendulum\"\nduration = 1.0\nsamples = 20\ntrajectory_csv = {:?}\n",
            csv.to_str().unwrap()
        ),
    );
    let out = cosymlab(&["integrals", "--config", &cfg, "--steps", "2000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["details"]["commuting"]["min_gradient_rank"], 3);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,theta,x1,x2,y1,y2"));
    assert_eq!(lines.count(), 2001);
}
