use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aipaging"))
}

fn defects() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/testdata/defects")
}

fn short_config(dir: &Path, setup: &str) -> PathBuf {
    let p = dir.join(format!("{setup}.toml"));
    fs::write(&p, format!("setup = \"{setup}\"\nhorizon_ms = 3000.0\nsessions = 4\n")).unwrap();
    p
}

fn out(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr)
}

fn digest(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let h = Sha256::digest(fs::read(&p).unwrap());
            let hex: String = h.iter().map(|b| format!("{b:02x}")).collect();
            (p.file_name().unwrap().to_string_lossy().into_owned(), hex)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn run_writes_trace_and_metrics() {
    let d = tempfile::tempdir().unwrap();
    let cfg = short_config(d.path(), "S1");
    let o = bin()
        .args(["run", "--seed", "1", "--policy", "aipaging", "--verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", out(&o));
    let trace = d.path().join("o/s1-aipaging-seed1.trace");
    assert!(trace.exists());
    let csv = fs::read_to_string(d.path().join("o/s1-aipaging-seed1.metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("setup,policy,seed,"));

    let v = bin().arg("verify").arg(&trace).output().unwrap();
    assert_eq!(v.status.code(), Some(0), "{}", out(&v));
}

#[test]
fn output_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let cfg = short_config(d.path(), "S1");
    let o = bin()
        .args(["run", "--seed", "2", "--policy", "best-effort", "--config"])
        .arg(&cfg)
        .env("AIPAGING_OUT", d.path().join("envout"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", out(&o));
    assert!(d.path().join("envout/s1-best-effort-seed2.trace").exists());
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("absent.toml");
    let o = bin().arg("run").arg("--config").arg(&missing).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(out(&o).contains("absent.toml"));

    let bad = d.path().join("bad.toml");
    fs::write(&bad, "setup = \"S1\"\narrival_rate = 0.0\n").unwrap();
    let o = bin().arg("run").arg("--config").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(out(&o).contains("arrival_rate"));

    let o = bin()
        .args(["sweep", "--sweep-axis", "latency", "--sweep-values", "1"])
        .arg("--config")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_names_each_defect() {
    let o = bin().arg("verify").arg(defects().join("conforming.trace")).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", out(&o));
    for (file, class) in [
        ("late-removal", "expiry-removal"),
        ("early-release", "make-before-break"),
        ("flip-before-install", "make-before-break"),
        ("double-terminal", "double-terminal"),
        ("post-tc-attempt", "commit-timeout"),
        ("aisi-reissue", "aisi-stability"),
        ("overlap-bound", "overlap-bound"),
    ] {
        let o = bin()
            .arg("verify")
            .arg(defects().join(format!("{file}.trace")))
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(4), "{file}");
        assert!(out(&o).contains(class), "{file}: {}", out(&o));
    }
}

#[test]
fn truncated_trace_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(defects().join("conforming.trace")).unwrap();
    let cut = d.path().join("cut.trace");
    fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let o = bin().arg("verify").arg(&cut).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", out(&o));
}

#[test]
fn sweep_writes_one_csv_per_policy() {
    let d = tempfile::tempdir().unwrap();
    let cfg = short_config(d.path(), "S2");
    let o = bin()
        .args(["sweep", "--sweep-axis", "relocation_probability", "--seeds", "1-2"])
        .args(["--sweep-values", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", out(&o));
    for p in ["aipaging", "endpoint-bound", "best-effort"] {
        let csv = fs::read_to_string(d.path().join(format!("o/sweep-relocation_probability-{p}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("relocation_probability,runs,"));
        assert_eq!(lines.count(), 10);
    }

    let o = bin()
        .args(["sweep", "--sweep-axis", "overload_threshold", "--seed", "1"])
        .args(["--sweep-values", "0.5,0.9", "--config"])
        .arg(short_config(d.path(), "S3"))
        .arg("--out")
        .arg(d.path().join("t"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", out(&o));
    for p in ["aipaging", "endpoint-bound", "best-effort"] {
        let csv = fs::read_to_string(d.path().join(format!("t/sweep-overload_threshold-{p}.csv"))).unwrap();
        assert!(csv.lines().next().unwrap().contains("evidence_traffic_rate"));
    }
}

#[test]
fn identical_invocations_give_identical_files() {
    let d = tempfile::tempdir().unwrap();
    let cfg = short_config(d.path(), "S4");
    for o in ["a", "b"] {
        let r = bin()
            .args(["run", "--seeds", "1-2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(d.path().join(o))
            .output()
            .unwrap();
        assert_eq!(r.status.code(), Some(0), "{}", out(&r));
    }
    let a = digest(&d.path().join("a"));
    assert_eq!(a.len(), 12);
    assert_eq!(a, digest(&d.path().join("b")));
}

#[test]
fn help_lists_flags() {
    let o = bin().args(["run", "--help"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = out(&o);
    for flag in ["--config", "--seed", "--seeds", "--policy", "--out", "--verify", "AIPAGING_OUT"] {
        assert!(text.contains(flag), "{flag}");
    }
    let o = bin().args(["sweep", "--help"]).output().unwrap();
    let text = out(&o);
    assert!(text.contains("--sweep-axis") && text.contains("--sweep-values"));
}
