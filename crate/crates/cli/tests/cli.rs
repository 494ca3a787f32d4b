//! Drives the `rdsgd` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robust_dsgd::MetricsLog;
use tempfile::TempDir;

const SMALL: &str = r#"
[topology]
n = 8
p = 0.8
byzantine = [2]
seed = 3

[rule]
name = "ios"

[attack]
name = "signflip"

[task]
name = "quadratic"
dim = 4
samples = 40

[noise]
C = 2.0

[schedule]
kind = "theoretical"

[run]
K = 60
seed = 7
eval_every = 10

[privacy]
M = 10.0
"#;

fn rdsgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdsgd")).args(args).output().expect("binary runs")
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn replay_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&rdsgd(&["run", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]));
    ok(&rdsgd(&["run", "--config", s(&cfg), "--seed", "7", "--out", s(&b), "--set", "run.parallel=true"]));
    for f in ["metrics.csv", "mixing.csv", "privacy.csv", "topology.txt"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    let c = tmp.path().join("c");
    ok(&rdsgd(&["run", "--config", s(&cfg), "--seed", "8", "--out", s(&c)]));
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn outputs_parse_back() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("o");
    ok(&rdsgd(&["run", "--config", s(&cfg), "--out", s(&out)]));
    let log = MetricsLog::from_csv(&fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    let ks: Vec<u64> = log.rows().iter().map(|r| r.k).collect();
    assert_eq!(ks, vec![0, 10, 20, 30, 40, 50, 60]);
    let mixing = fs::read_to_string(out.join("mixing.csv")).unwrap();
    assert!(mixing.lines().nth(1).unwrap().starts_with("ios,"));
    let privacy = fs::read_to_string(out.join("privacy.csv")).unwrap();
    let eps: f64 = privacy.lines().nth(1).unwrap().split(',').nth(6).unwrap().parse().unwrap();
    assert!(eps.is_finite() && eps > 0.0);
}

#[test]
fn zero_noise_override_zeroes_sigma() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("o");
    ok(&rdsgd(&["run", "--config", s(&cfg), "--out", s(&out), "--set", "noise.C=0"]));
    let log = MetricsLog::from_csv(&fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    assert!(log.rows().iter().all(|r| r.sigma == 0.0));
    assert!(log.rows().iter().all(|r| r.alpha > 0.0));
    let privacy = fs::read_to_string(out.join("privacy.csv")).unwrap();
    assert_eq!(privacy.lines().nth(1).unwrap().split(',').nth(6), Some("inf"));
}

#[test]
fn overrides_compose_left_to_right() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&rdsgd(&["run", "--config", s(&cfg), "--out", s(&a), "--set", "noise.C=0", "--set", "noise.C=3"]));
    ok(&rdsgd(&["run", "--config", s(&cfg), "--out", s(&b), "--set", "noise.C=3"]));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    // --seed wins over run.seed from --set
    let (c, d) = (tmp.path().join("c"), tmp.path().join("d"));
    ok(&rdsgd(&["run", "--config", s(&cfg), "--out", s(&c), "--seed", "5", "--set", "run.seed=9"]));
    ok(&rdsgd(&["run", "--config", s(&cfg), "--out", s(&d), "--set", "run.seed=5"]));
    assert_eq!(fs::read(c.join("metrics.csv")).unwrap(), fs::read(d.join("metrics.csv")).unwrap());
}

#[test]
fn disconnected_config_names_components() {
    let tmp = TempDir::new().unwrap();
    let text = SMALL.replace("p = 0.8", "p = 0.0");
    let cfg = config(tmp.path(), &text);
    let out = rdsgd(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("exp.toml:5: topology.byzantine"), "{err}");
    assert!(err.contains("disconnected") && err.contains("{0}") && err.contains("{7}"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn invalid_values_point_at_their_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), &SMALL.replace("name = \"ios\"", "name = \"krum\""));
    let out = rdsgd(&["run", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exp.toml:9: rule.name"));

    let cfg = config(tmp.path(), SMALL);
    let out = rdsgd(&["run", "--config", s(&cfg), "--set", "attack.name=none"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--set attack.name"));
}

#[test]
fn ios_weight_regime_is_enforced() {
    // a path-like graph where a Byzantine neighbour carries half the weight
    let tmp = TempDir::new().unwrap();
    let text = SMALL.replace("n = 8\np = 0.8", "n = 3\np = 1.0").replace("[2]", "[2]\nweights = \"uniform\"");
    let cfg = config(tmp.path(), &text);
    let out = rdsgd(&["run", "--config", s(&cfg), "--set", "rule.q=0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rule.name") && err.contains("1/3"), "{err}");
}

#[test]
fn sweep_over_noise_levels() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("sw");
    ok(&rdsgd(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "noise.C", "--values", "2,3,4,5"]));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("value,final_f_best,final_H,epsilon"));
    let eps: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(eps.len(), 4);
    assert!(eps.windows(2).all(|w| w[1] < w[0]), "{eps:?}");
    for v in ["2", "3", "4", "5"] {
        assert!(out.join(format!("noise.C={v}")).join("metrics.csv").exists());
    }
}

#[test]
fn sweep_over_rules_reports_each_rule() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("sw");
    ok(&rdsgd(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "rule.name", "--values", "tm,scc,ios"]));
    let mixing = fs::read_to_string(out.join("mixing.csv")).unwrap();
    let rules: Vec<&str> = mixing.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(rules, vec!["tm", "scc", "ios"]);
}

#[test]
fn sweep_rejects_bad_axis_and_empty_values() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = rdsgd(&["sweep", "--config", s(&cfg), "--axis", "noise.sigma", "--values", "1,2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown sweep axis"));
    let out = rdsgd(&["sweep", "--config", s(&cfg), "--axis", "noise.C", "--values"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_and_privacy_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = rdsgd(&["analyze", "--config", s(&cfg), "--out", s(&tmp.path().join("an"))]);
    ok(&out);
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 5);
    assert!(tmp.path().join("an/analysis.csv").exists());

    let out = rdsgd(&["privacy", "--config", s(&cfg), "--c", "1,2", "--k", "10,100"]);
    ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    let eps: Vec<f64> = table.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(eps.len(), 4);
    assert!(eps[1] > eps[0] && eps[3] > eps[2] && eps[2] < eps[0]);
}
