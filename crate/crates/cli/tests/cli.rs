use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn base() -> Value {
    json!({
        "version": 1,
        "model": "CM1",
        "theta_star": [0.7],
        "eps_list": [0.05],
        "reps": 3,
        "gamma": 1.0,
        "lambda_rule": {"name": "eps", "lambda0": 0.0},
        "n_steps": 200,
        "base_seed": 11
    })
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        Run {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn config(&self, name: &str, cfg: &Value) -> PathBuf {
        let path = self.dir.path().join(name);
        std::fs::write(&path, cfg.to_string()).unwrap();
        path
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn mde(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mde"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let body = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, body)
}

#[test]
fn simulate_noise_free_follows_drift() {
    let run = Run::new();
    let mut cfg = base();
    cfg["eps_list"] = json!([0.0]);
    cfg["reps"] = json!(1);
    let out = run.out("sim");
    ok(&mde("simulate", &run.config("c.json", &cfg), &out, &[]));
    let (header, body) = rows(&out.join("paths.csv"));
    assert_eq!(header, "rep,t,X");
    assert_eq!(body.len(), 201);
    for r in &body {
        let (t, x): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((x - 0.7 * t).abs() < 1e-12);
    }
}

#[test]
fn simulate_is_byte_reproducible_and_seed_sensitive() {
    let run = Run::new();
    let cfg = run.config("c.json", &base());
    for name in ["a", "b", "c"] {
        let extra: &[&str] = if name == "c" { &["--seed", "12"] } else { &[] };
        ok(&mde("simulate", &cfg, &run.out(name), extra));
    }
    let read = |n: &str| std::fs::read(run.out(n).join("paths.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn missing_model_is_a_config_error() {
    let run = Run::new();
    let mut cfg = base();
    cfg.as_object_mut().unwrap().remove("model");
    let o = mde("simulate", &run.config("c.json", &cfg), &run.out("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model"));
    assert!(!run.out("x").exists());
}

#[test]
fn config_errors_exit_2() {
    let run = Run::new();
    let bad: Vec<(&str, Value)> = vec![
        ("lambda_rule", json!({"name": "sqrt", "lambda0": 1.0})),
        ("unknown_key", json!(1)),
        ("version", json!(9)),
        ("theta_star", json!([0.7, 0.1])),
        ("model", json!("XX9")),
        ("eps_list", json!([0.1, 0.1])),
    ];
    for (key, value) in bad {
        let mut cfg = base();
        cfg[key] = value;
        let o = mde("estimate", &run.config("c.json", &cfg), &run.out("x"), &[]);
        assert_eq!(o.status.code(), Some(2), "{key}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(key), "{key}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = mde("estimate", &run.out("absent.json"), &run.out("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = mde("estimate", &run.config("c.json", &base()), &run.out("x"), &["--workers", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mde("estimate", &run.config("c.json", &base()), &run.out("x"), &["--starts", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("start"));
}

#[test]
fn runtime_failure_exits_1() {
    // logistic drift with huge noise leaves the stable region
    let run = Run::new();
    let mut cfg = base();
    cfg["model"] = json!("LG1");
    cfg["theta_star"] = json!([2.5]);
    cfg["eps_list"] = json!([1e6]);
    let o = mde("simulate", &run.config("c.json", &cfg), &run.out("x"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn estimate_noise_free_recovers_truth() {
    let run = Run::new();
    let mut cfg = base();
    cfg["eps_list"] = json!([0.0]);
    cfg["reps"] = json!(1);
    let out = run.out("est");
    ok(&mde("estimate", &run.config("c.json", &cfg), &out, &[]));
    let (header, body) = rows(&out.join("estimates.csv"));
    assert_eq!(header, "eps,rep,coord,theta_hat,rescaled_error,is_zero,contrast,converged");
    assert_eq!(body.len(), 1);
    let theta: f64 = body[0][3].parse().unwrap();
    assert!((theta - 0.7).abs() < 1e-4, "{theta}");
    assert_eq!(body[0][4], "NaN");
}

#[test]
fn estimate_row_count_and_order() {
    let run = Run::new();
    let mut cfg = base();
    cfg["model"] = json!("SM1");
    cfg["theta_star"] = json!([1.0, 0.5]);
    cfg["eps_list"] = json!([0.1, 0.05]);
    let out = run.out("est");
    ok(&mde("estimate", &run.config("c.json", &cfg), &out, &["--workers", "3"]));
    let (_, body) = rows(&out.join("estimates.csv"));
    assert_eq!(body.len(), 12);
    let keys: Vec<(f64, usize, usize)> = body
        .iter()
        .map(|r| (-r[0].parse::<f64>().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    for r in &body {
        let (eps, coord): (f64, usize) = (r[0].parse().unwrap(), r[2].parse().unwrap());
        let (hat, err): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        let truth = [1.0, 0.5][coord];
        assert!((err - (hat - truth) / eps).abs() < 1e-9);
        assert_eq!(r[5], (hat == 0.0).to_string());
    }
}

#[test]
fn limit_rows_and_reproducibility() {
    let run = Run::new();
    let mut cfg = base();
    cfg["model"] = json!("SM1");
    cfg["theta_star"] = json!([1.0, 0.5]);
    cfg["n_limit"] = json!(3);
    let path = run.config("c.json", &cfg);
    ok(&mde("limit", &path, &run.out("a"), &[]));
    ok(&mde("limit", &path, &run.out("b"), &[]));
    let (header, body) = rows(&run.out("a").join("limit_samples.csv"));
    assert_eq!(header, "draw,coord,u_star");
    assert_eq!(body.len(), 6);
    assert_eq!(
        std::fs::read(run.out("a").join("limit_samples.csv")).unwrap(),
        std::fs::read(run.out("b").join("limit_samples.csv")).unwrap()
    );
}

#[test]
fn limit_variance_constant_drift() {
    let run = Run::new();
    let mut cfg = base();
    cfg["n_limit"] = json!(20_000);
    cfg["n_steps"] = json!(500);
    let out = run.out("lim");
    ok(&mde("limit", &run.config("c.json", &cfg), &out, &[]));
    let (_, body) = rows(&out.join("limit_samples.csv"));
    let u: Vec<f64> = body.iter().map(|r| r[2].parse().unwrap()).collect();
    let m = u.iter().sum::<f64>() / u.len() as f64;
    let var = u.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (u.len() - 1) as f64;
    assert!((var - 1.2).abs() <= 0.06, "{var}");
}

fn validate(report: &Value) {
    let schema: Value =
        serde_json::from_str(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/report.schema.json"))).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    if let Err(errors) = compiled.validate(report) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("schema violations: {msgs:?}");
    };
}

#[test]
fn compare_constant_drift_scenario() {
    let run = Run::new();
    let mut cfg = base();
    cfg["eps_list"] = json!([0.02]);
    cfg["reps"] = json!(300);
    cfg["n_steps"] = json!(500);
    cfg["n_limit"] = json!(20_000);
    let out = run.out("cmp");
    ok(&mde("compare", &run.config("c.json", &cfg), &out, &[]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    validate(&report);
    assert!(report["ks"][0].as_f64().unwrap() < 0.1, "{report}");
    assert_eq!(report["config"]["model"], "CM1");
    assert_eq!(report["tool"]["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn compare_sparsity_scenario() {
    let run = Run::new();
    let mut cfg = base();
    cfg["model"] = json!("SM1");
    cfg["theta_star"] = json!([1.0, 0.0]);
    cfg["eps_list"] = json!([0.01]);
    cfg["reps"] = json!(40);
    cfg["gamma"] = json!(0.5);
    cfg["lambda_rule"] = json!({"name": "eps_pow", "lambda0": 0.5});
    cfg["n_limit"] = json!(2000);
    let out = run.out("cmp");
    ok(&mde("compare", &run.config("c.json", &cfg), &out, &["--seed", "5"]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    validate(&report);
    let zf = report["zero_fraction"].as_array().unwrap();
    assert_eq!(zf.len(), 2);
    assert!(zf[1].as_f64().unwrap() > 0.0);
    assert_eq!(report["regime"], "gamma<1");
    assert_eq!(report["config"]["base_seed"], 5);
}

#[test]
fn optimizer_flags_override_config() {
    let run = Run::new();
    let cfg = run.config("c.json", &base());
    ok(&mde("compare", &cfg, &run.out("a"), &["--starts", "3", "--max-evals", "500", "--tol", "1e-6", "--opt-seed", "4"]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(run.out("a").join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["optimizer"], json!({"starts": 3, "max_evals": 500, "tol": 1e-6, "seed": 4}));
}

#[test]
fn compare_needs_a_single_positive_eps() {
    let run = Run::new();
    for eps in [json!([0.1, 0.05]), json!([0.0])] {
        let mut cfg = base();
        cfg["eps_list"] = eps;
        let o = mde("compare", &run.config("c.json", &cfg), &run.out("x"), &[]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains("eps"));
    }
}

#[test]
fn out_dir_from_config() {
    let run = Run::new();
    let mut cfg = base();
    let target = run.out("from-config");
    cfg["out_dir"] = json!(target);
    let o = Command::new(env!("CARGO_BIN_EXE_mde"))
        .args(["simulate", "--config"])
        .arg(run.config("c.json", &cfg))
        .output()
        .unwrap();
    ok(&o);
    assert!(target.join("paths.csv").exists());
}
