use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const IID: &str = r#"
[alphabet]
labels = ["0", "1"]
[mu]
weights = [0.5, 0.5]
[observable.F]
indicator = [1, 1]
"#;

const MARKOV: &str = r#"
[alphabet]
size = 2
[P]
rows = [[0.7, 0.3], [0.4, 0.6]]
[observable.F]
arity = 2
indicator = [1, 1]
[schedule]
k = 1
ell = 2
tail = [[0, 0, 1]]
"#;

const CONT: &str = r#"
[alphabet]
size = 2
[L]
rates = [[-1, 1], [2, -2]]
[observable.W]
arity = 1
entries = [0.5, 0.0]
"#;

const SFT: &str = r#"
[alphabet]
size = 2
[sft]
transition = [[1, 1], [1, 0]]
[observable.W]
arity = 1
entries = [0.2, -0.1]
"#;

fn nonconv(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nonconv"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn model(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn validate_reports_structure() {
    let dir = TempDir::new().unwrap();
    let m = model(&dir, "m.toml", MARKOV);
    let o = nonconv(&["validate", s(&m)], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("section,detail,config_sha256,seed\n"));
    assert!(text.contains("Doeblin n0=1"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ell=2"));
}

#[test]
fn validation_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = model(&dir, "bad.toml", "[alphabet]\nsize = 2\n[P]\nrows = [[0.5, 0.6], [0.5, 0.5]]\n");
    let o = nonconv(&["validate", s(&bad)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[P]"));
    let o = nonconv(&["validate", "/nonexistent/model.toml"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(nonconv(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(nonconv(&["rate"], &[]).status.code(), Some(1));
    assert_eq!(nonconv(&["lattice", "--k", "2", "--N", "10"], &[("NONCONV_THREADS", "zero")]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = TempDir::new().unwrap();
    let m = model(&dir, "m.toml", "[alphabet]\nsize = 2\n[mu]\nweights = [0.5, 0.5]\n[observable.F]\narity = 1\nentries = [0, 1]\n");
    let o = nonconv(&["simulate", s(&m), "--N", "10", "--u", "1.5", "--tilt", "auto"], &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn rate_iid_csv_contract() {
    let dir = TempDir::new().unwrap();
    let m = model(&dir, "m.toml", IID);
    let o = nonconv(&["rate", "iid", "--k", "2", "--lmax", "30", "--lambda", "-5:5:0.1", "--u", "0.1:0.4:0.05", s(&m)], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "u,J,lambda_star,status,config_sha256,seed");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 7);
    let j: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(j.iter().all(|v| *v >= 0.0));
    // F̄ = 1/4 lies between the third and fourth grid points.
    assert!(j[3] < j[0] && j[3] < j[6]);
    assert_eq!(nonconv(&["rate", "iid", "--k", "3", s(&m)], &[]).status.code(), Some(2));
}

#[test]
fn q_backends_agree_on_iid_chain() {
    let dir = TempDir::new().unwrap();
    let text = "[alphabet]\nsize = 2\n[mu]\nweights = [0.3, 0.7]\n[P]\nrows = [[0.3, 0.7], [0.3, 0.7]]\n[observable.F]\narity = 1\nentries = [0, 1]\n";
    let m = model(&dir, "m.toml", text);
    let get = |backend: &str| -> f64 {
        let o = nonconv(&["q", s(&m), "--backend", backend, "--lambda", "0.8", "--format", "json"], &[]);
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        v["rows"][0]["q"].as_f64().unwrap()
    };
    let exact = (0.3 + 0.7 * 0.8f64.exp()).ln();
    assert!((get("markov") - exact).abs() < 1e-12);
    assert!((get("iid") - exact).abs() < 1e-12);
}

#[test]
fn lattice_json() {
    let o = nonconv(&["lattice", "--k", "3", "--N", "100000", "--format", "json"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["command"], "lattice");
    assert!((v["summary"]["density_r"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let frac = v["summary"]["a_fraction"].as_f64().unwrap();
    assert!((frac - 1.0 / 3.0).abs() <= 4.0 / 1e5);
    assert_eq!(v["rows"].as_array().unwrap().len(), 8);
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let m = model(&dir, "m.toml", MARKOV);
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    let args = |out: &Path| vec!["simulate".to_string(), s(&m).into(), "--N".into(), "200".into(), "--samples".into(), "64".into(), "-o".into(), s(out).into()];
    let a: Vec<String> = args(&out_a);
    let b: Vec<String> = args(&out_b);
    let ra = nonconv(&a.iter().map(String::as_str).collect::<Vec<_>>(), &[("NONCONV_THREADS", "1")]);
    let rb = nonconv(&b.iter().map(String::as_str).collect::<Vec<_>>(), &[("NONCONV_THREADS", "4")]);
    assert_eq!(ra.status.code(), Some(0));
    assert_eq!(rb.status.code(), Some(0));
    let ta = std::fs::read(&out_a).unwrap();
    assert_eq!(ta, std::fs::read(&out_b).unwrap());
    assert_eq!(String::from_utf8(ta).unwrap().lines().count(), 65);
    let other = nonconv(&["simulate", s(&m), "--N", "200", "--samples", "64", "--seed", "9"], &[]);
    assert_ne!(stdout(&other).lines().nth(1), std::fs::read_to_string(&out_a).unwrap().lines().nth(1));
}

#[test]
fn simulate_rate_record() {
    let dir = TempDir::new().unwrap();
    let m = model(&dir, "m.toml", "[alphabet]\nsize = 2\n[mu]\nweights = [0.5, 0.5]\n[observable.F]\narity = 1\nentries = [0, 1]\n");
    let o = nonconv(&["simulate", s(&m), "--N", "100", "--samples", "2000", "--u", "0.7", "--tilt", "auto", "--format", "json"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rate = v["rows"][0]["rate"].as_f64().unwrap();
    assert!(rate > 0.05 && rate < 0.15, "{rate}");
    assert_eq!(v["rows"][0]["censored"], false);
}

#[test]
fn pressure_and_duality() {
    let dir = TempDir::new().unwrap();
    let m = model(&dir, "sft.toml", SFT);
    let o = nonconv(&["pressure", s(&m), "--format", "json"], &[]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let golden = ((1.0 + 5f64.sqrt()) / 2.0).ln();
    assert!((v["summary"]["entropy_bound"].as_f64().unwrap() - golden).abs() < 1e-12);
    assert!(v["rows"][0]["q_dynamical"].as_f64().unwrap().is_finite());

    let c = model(&dir, "cont.toml", CONT);
    let o = nonconv(&["duality", s(&c), "--format", "json"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["rows"][0]["gap"].as_f64().unwrap() < 1e-4);
}

#[test]
fn average_and_mdp_run() {
    let dir = TempDir::new().unwrap();
    let c = model(&dir, "cont.toml", CONT);
    let o = nonconv(&["average", s(&c), "--eps", "0.05", "--T", "2", "--format", "json"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["summary"]["sup_distance"].as_f64().unwrap() < 0.5);
    let o = nonconv(&["average", s(&c), "--eps", "0.1", "--T", "1", "--moment", "--samples", "50"], &[]);
    assert_eq!(o.status.code(), Some(0));

    let m = model(&dir, "iid.toml", IID);
    let o = nonconv(&["mdp", s(&m), "--N", "2000", "--samples", "400", "--format", "json"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["summary"]["relative_error"].as_f64().unwrap() < 0.25);
    assert_eq!(v["rows"].as_array().unwrap().len(), 400);
}
