use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jadpp"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn lines(path: &std::path::Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn simulate_writes_records_curves_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(config("desk.json"))
        .arg("--sweep")
        .arg(config("smoke_sweep.json"))
        .args(["--seed", "4", "--threads", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let records = lines(&out.join("records.csv"));
    assert!(records[0].starts_with("point,variable,value,trial,trial_seed,method,record"));
    assert!(records.len() > 10);
    let curves = lines(&out.join("curves.csv"));
    assert!(curves[0].starts_with("variable,value,method,metric"));
    assert!(curves.iter().any(|l| l.contains(",oracle,nmse_empirical,all,rr_mmse,true,")));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["scenario_name"], "desk");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    // Same seed, same curves.
    let again = dir.path().join("again");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(config("desk.json"))
        .arg("--sweep")
        .arg(config("smoke_sweep.json"))
        .args(["--seed", "4", "--out"])
        .arg(&again)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read(out.join("curves.csv")).unwrap(),
        std::fs::read(again.join("curves.csv")).unwrap()
    );
}

#[test]
fn acquire_design_and_pilots_dump_csv() {
    let dir = tempfile::tempdir().unwrap();
    let acq = dir.path().join("acq.csv");
    let ok = bin()
        .args(["acquire", "--config"])
        .arg(config("exemplary.json"))
        .args(["--method", "mf", "--out"])
        .arg(&acq)
        .status()
        .unwrap();
    assert!(ok.success());
    let rows = lines(&acq);
    assert_eq!(rows[0], "user,delay,angle_deg,beta_hat,detected");
    // 2 users × 16 delays × 360 angles.
    assert_eq!(rows.len(), 1 + 2 * 16 * 360);

    let design = dir.path().join("design.csv");
    let ok = bin()
        .args(["design", "--config"])
        .arg(config("desk.json"))
        .arg("--out")
        .arg(&design)
        .status()
        .unwrap();
    assert!(ok.success());
    assert_eq!(lines(&design)[0], "group,beam,cluster,angle_deg,gain");

    let pilots = dir.path().join("pilots.csv");
    let ok = bin()
        .args(["pilots", "--config"])
        .arg(config("desk.json"))
        .arg("--out")
        .arg(&pilots)
        .status()
        .unwrap();
    assert!(ok.success());
    let rows = lines(&pilots);
    assert_eq!(rows[0], "user,chip,value");
    // 4 users × (L−1 precursors + T chips).
    assert_eq!(rows.len(), 1 + 4 * (15 + 16));
}

#[test]
fn estimate_writes_trials_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin()
        .args(["estimate", "--config"])
        .arg(config("desk.json"))
        .args(["--snr-db", "20", "--trials", "2", "--draws", "2", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(ok.success());
    let summary = lines(&dir.path().join("estimate_summary.csv"));
    assert!(summary[0].starts_with("method,group,estimator,provenance"));
    assert!(summary.len() > 1);
    assert!(lines(&dir.path().join("estimate_trials.csv")).len() > 1);
}

#[test]
fn config_errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config("desk.json")).unwrap()).unwrap();
    v["fast_pilot_len"] = 64.into();
    std::fs::write(&bad, v.to_string()).unwrap();
    let out = bin()
        .args(["acquire", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("fast_pilot_len") || err.contains("63"), "{err}");

    let out = bin()
        .args(["simulate", "--config"])
        .arg(config("desk.json"))
        .arg("--sweep")
        .arg(dir.path().join("missing.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
