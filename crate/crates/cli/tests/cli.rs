use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cdma-pme"))
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn run(config: &Path, extra: &[&str]) -> Output {
    bin().arg("--config").arg(config).args(extra).output().unwrap()
}

fn csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn matched_filter_efficiency() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mf.json",
        r#"{"command": "efficiency", "spec": {"beta": 1, "prior": "bpsk", "snr_db": 0, "detector": {"preset": "matched-filter"}}}"#,
    );
    let out = run(&cfg, &[]);
    assert!(out.status.success());
    let (h, rows) = csv(&String::from_utf8(out.stdout).unwrap());
    let eta = h.iter().position(|c| c == "eta").unwrap();
    assert_eq!(rows[0][eta], "0.5");

    let json_out = dir.path().join("mf.json.out");
    let out = run(&cfg, &["--format", "json", "--output", json_out.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json_out).unwrap()).unwrap();
    assert_eq!(v["eta"], 0.5);
    assert_eq!(v["method"], "matched-filter");
}

#[test]
fn qpsk_sweep_shows_coexisting_branches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.json",
        r#"{"command": "sweep",
            "spec": {"beta": 3, "prior": "qpsk", "snr_db": 0, "detector": {"preset": "individually-optimal"}},
            "sweep": {"axis": "snr_db", "from": 0, "to": 20, "points": 21}}"#,
    );
    let path = dir.path().join("sweep.csv");
    let out = run(&cfg, &["--output", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = csv(&std::fs::read_to_string(&path).unwrap());
    assert_eq!(h, ["snr_db", "branch", "eta", "xi", "free_energy_nats", "dominant", "c_sep_bits", "c_joint_bits"]);
    let at = |db: &str| rows.iter().filter(|r| r[0] == db).count();
    assert_eq!(at("2"), 1);
    assert!(at("14") >= 2);
    // exactly one dominant row per grid point
    for db in 0..=20 {
        let d = rows.iter().filter(|r| r[0] == db.to_string() && r[5] == "1").count();
        assert_eq!(d, 1, "{db} dB");
    }
}

#[test]
fn simulate_writes_stats_and_histogram_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        r#"{"command": "simulate",
            "spec": {"prior": "bpsk", "snr_db": 2, "detector": {"preset": "individually-optimal"}},
            "mc": {"users": 8, "spreading": 12, "trials": 300, "seed": 4}}"#,
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(run(&cfg, &["--output", a.to_str().unwrap()]).status.success());
    assert!(run(&cfg, &["--output", b.to_str().unwrap(), "--threads", "1"]).status.success());
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&dir.path().join("a_hist.csv")), read(&dir.path().join("b_hist.csv")));

    let (h, rows) = csv(&String::from_utf8(read(&a)).unwrap());
    assert_eq!(rows.len(), 3);
    let ks = h.iter().position(|c| c == "ks").unwrap();
    assert!(rows.iter().all(|r| r[ks].parse::<f64>().unwrap() < 0.2));
    let (hh, hist) = csv(&String::from_utf8(read(&dir.path().join("a_hist.csv"))).unwrap());
    assert_eq!(hh[4], "bin_lo");
    assert!(!hist.is_empty());

    // a different seed changes the data
    let c = dir.path().join("c.csv");
    assert!(run(&cfg, &["--output", c.to_str().unwrap(), "--seed", "5"]).status.success());
    assert_ne!(read(&a), read(&c));
}

#[test]
fn schema_errors_exit_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"command": "sweep", "spec": {"beta": 1, "prior": "bpsk", "snr_db": 0, "detector": {"preset": "lmmse"}}}"#);
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "schema");

    let cfg = write_config(
        dir.path(),
        "cap.json",
        r#"{"command": "simulate",
            "spec": {"prior": "bpsk", "snr_db": 2, "detector": {"preset": "individually-optimal"}},
            "mc": {"users": 20, "spreading": 30, "trials": 3}}"#,
    );
    assert_eq!(run(&cfg, &[]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&missing, &[]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3() {
    // The jointly optimal detector has no finite fixed point at light load.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "jo.json",
        r#"{"command": "efficiency", "spec": {"beta": 0.5, "prior": "bpsk", "snr_db": 0, "detector": {"preset": "jointly-optimal"}}}"#,
    );
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "solver");
}

#[test]
fn validate_subset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.json", r#"{"command": "validate", "criteria": [1, 6]}"#);
    let path = dir.path().join("v.json.out");
    let out = run(&cfg, &["--output", path.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn spectral_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        r#"{"command": "spectral", "spec": {"beta": 1, "prior": "gaussian", "snr_db": 10, "detector": {"preset": "lmmse"}}}"#,
    );
    let out = run(&cfg, &["--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // Gaussian inputs: LMMSE is optimal, so both efficiencies coincide with
    // the closed form beta/2 log2(1 + eta snr) + gain.
    let eta = v["eta"].as_f64().unwrap();
    assert!((eta - v["eta_optimal"].as_f64().unwrap()).abs() < 1e-9);
    assert!((v["c_sep_bits"].as_f64().unwrap() - 0.5 * (1.0 + 10.0 * eta).log2()).abs() < 1e-9);
    assert!(v["c_joint_bits"].as_f64().unwrap() > v["c_sep_bits"].as_f64().unwrap());
}
