use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"{
    "version": 1,
    "environment": {"function": {"type": "synthetic"}, "dim": 2, "num_points": 12,
                    "kernel": {"type": "se", "lengthscale": 0.2}, "v_sq": 0.01, "sigma_sq": 0.0001},
    "algorithm": {"name": "dpbe"},
    "run": {"horizon": 400, "seeds": [3, 4], "parallelism": 2}
}"#;

fn kband(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kband")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn run_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", CONFIG);
    let out = dir.path().join("out");
    let o = kband(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(agg["seeds"], serde_json::json!([3, 4]));
    for seed in [3, 4] {
        let d = out.join(format!("seed_{seed}"));
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        let regret: f64 = column(&d.join("rounds.csv"), "inst_regret").iter().sum();
        assert!((regret - summary["total_regret"].as_f64().unwrap()).abs() < 1e-6);
        let cost: f64 = column(&d.join("phases.csv"), "cost").iter().sum();
        assert_eq!(cost as u64, summary["total_cost"].as_u64().unwrap());
        assert_eq!(column(&d.join("rounds.csv"), "round").len(), 400);
    }
    assert_eq!(column(&out.join("aggregate.csv"), "mean_cum_regret").len(), 400);
    assert!(out.join("aggregate.json").exists());
}

#[test]
fn outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(kband(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(kband(&["run", "--config", &cfg, "--out", b.to_str().unwrap(), "--seeds", "3,4"]).status.success());
    for f in ["seed_3/rounds.csv", "seed_4/phases.csv", "aggregate.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", &CONFIG.replace("\"version\": 1,", "\"version\": 1, \"extra\": 0,"));
    assert_eq!(kband(&["run", "--config", &bad]).status.code(), Some(2));
    let v2 = write_config(dir.path(), "v2.json", &CONFIG.replace("\"version\": 1", "\"version\": 2"));
    assert_eq!(kband(&["run", "--config", &v2]).status.code(), Some(2));
    let private = write_config(
        dir.path(),
        "p.json",
        &CONFIG.replace("\"run\"", "\"privacy\": {\"model\": \"central\", \"epsilon\": 1, \"delta\": 1e-6}, \"run\""),
    );
    assert_eq!(kband(&["run", "--config", &private]).status.code(), Some(2));
    assert_eq!(kband(&["run", "--config", "/nonexistent/c.json"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "c.json", CONFIG);
    assert_eq!(
        kband(&["sweep", "--config", &cfg, "--param", "bogus", "--values", "1"]).status.code(),
        Some(2)
    );
}

#[test]
fn replication_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let values = dir.path().join("f.csv");
    fs::write(&values, "0,0.1\n").unwrap();
    // loads fine, but users cannot be sampled from a negative variance
    let kernel = dir.path().join("k.csv");
    fs::write(&kernel, "-1\n").unwrap();
    let text = format!(
        r#"{{"version": 1,
            "environment": {{"function": {{"type": "tabular", "values_path": "f.csv"}},
                            "kernel": {{"type": "empirical", "matrix_path": "k.csv"}}, "v_sq": 0.5, "sigma_sq": 0.1}},
            "algorithm": {{"name": "dpbe"}},
            "run": {{"horizon": 50, "seeds": 1}}}}"#
    );
    let cfg = write_config(dir.path(), "t.json", &text);
    let o = kband(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn single_value_sweep_and_horizon_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &CONFIG.replace("400", "1"));
    let out = dir.path().join("s");
    let o = kband(&["sweep", "--config", &cfg, "--param", "alpha", "--values", "0.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
    assert_eq!(column(&out.join("sweep.csv"), "value"), vec![0.5]);
    assert_eq!(column(&out.join("value_0/seed_3/rounds.csv"), "round"), vec![1.0]);
}
