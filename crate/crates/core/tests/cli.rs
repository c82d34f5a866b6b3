use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plurality"))
}

#[test]
fn sync_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--protocol", "sync", "--n", "5000", "--k", "3", "--trials", "2", "--seed", "4", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["summary.csv", "snapshots.csv", "bias.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["n"], 5000);
}

#[test]
fn config_file_with_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "protocol = async-single\nn = 500\ntrials = 0\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out-dir").arg(dir.path().join("o")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("o/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn invalid_parameter_exits_with_code_2() {
    let out = bin().args(["--alpha", "0.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}
