use std::path::Path;
use std::process::{Command, Output};

fn burgers(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_burgers"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("BURGERS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn no_subcommand_is_an_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_burgers")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly_and_documents_costs() {
    let o = Command::new(env!("CARGO_BIN_EXE_burgers")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("T·n/dt"), "{text}");
}

#[test]
fn invariance_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = burgers(&["invariance-exact"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for file in ["invariance-exact.json", "invariance-exact.csv", "invariance-exact.manifest.json"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("invariance-exact.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["suite"], "invariance-exact");
}

#[test]
fn qv_csv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = burgers(&["qv", "--n", "64", "--ensemble", "4", "--format", "csv"], dir.path());
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("qv.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("suite,kind,name"));
    assert!(csv.lines().any(|l| l.contains("qv-direct")));
    assert!(!dir.path().join("qv.json").exists());
}

#[test]
fn unstable_euler_step_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let o = burgers(&["qv", "--scheme", "euler", "--dt", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dt"), "{}", stderr(&o));
    assert!(!dir.path().join("qv.csv").exists());
}

#[test]
fn all_violations_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let o = burgers(&["bg-scaling", "--ensemble", "0", "--l", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("ensemble") && err.contains("l_values"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"ensemble": 4, "ensembel": 5}"#).unwrap();
    let o = burgers(&["qv", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ensembel"), "{}", stderr(&o));
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"ensemble": 4, "n_values": [16]}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_burgers"))
        .args(["qv", "--config", cfg.to_str().unwrap(), "--ensemble", "7", "--print-config"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resolved: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(resolved["ensemble"], 7);
    assert_eq!(resolved["n_values"], serde_json::json!([16]));
}

#[test]
fn simulate_exports_snapshots_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = burgers(&["simulate", "--n", "16", "--horizon", "0.5", "--record-stride", "10"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let snaps = std::fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    let header = snaps.lines().next().unwrap();
    assert!(header.starts_with("seed,config_hash,time,u0"), "{header}");
    assert!(snaps.lines().count() > 2);
    assert!(dir.path().join("field_series.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["baseline-ou", "--ensemble", "40", "--threads"];
    let oa = burgers(&[&args[..], &["1"]].concat(), a.path());
    let ob = burgers(&[&args[..], &["2"]].concat(), b.path());
    assert_eq!(oa.status.code(), ob.status.code());
    for file in ["baseline-ou.json", "baseline-ou.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
}
