use std::path::Path;
use std::process::{Command, Output};

use userdp::harness::{read_jsonl, ExperimentConfig, NoiseMode};

fn userdp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_userdp"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

const SMALL: &str = r#"{
    "loss": "norm",
    "population": {"kind": "gaussian", "mean": [0.5], "sigma": 1.0},
    "n": 8, "m": 4, "d": 3,
    "epsilon": 2.0, "delta": 1e-5,
    "algorithm": "dpsgd",
    "t_cap": 300, "repetitions": 3, "seed": 5,
    "fresh_samples": 2000
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let out = dir.path().join("out");
    let o = userdp(
        &[
            "run",
            "--config",
            &cfg,
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let rows = read_jsonl(&out.join("trials.jsonl")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r.private && r.seed == 9 && r.config.seed == 9));
    assert_eq!(
        rows.iter().map(|r| r.trial).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("config_hash,algorithm,loss,n,m,d,epsilon,delta,seed,private"));
    assert_eq!(lines.count(), 1);

    let resolved = ExperimentConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(resolved, rows[0].config);
    assert_eq!(resolved.hash(), rows[0].config_hash);
}

#[test]
fn field_order_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let o = userdp(&["run", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let line = std::fs::read_to_string(dir.path().join("out/trials.jsonl")).unwrap();
    let first = line.lines().next().unwrap();
    let keys = [
        "\"config_hash\"",
        "\"trial\"",
        "\"seed\"",
        "\"algorithm\"",
        "\"private\"",
        "\"excess_risk\"",
        "\"halted\"",
        "\"theta\"",
        "\"wall_time_ms\"",
        "\"config\"",
        "\"derived\"",
    ];
    let pos: Vec<usize> = keys.iter().map(|k| first.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{pos:?}");
}

#[test]
fn unsafe_no_noise_stamps_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let o = userdp(
        &["--unsafe-no-noise", "run", "--config", &cfg, "--out", "o"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NOT private"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[NOT PRIVATE]"));
    let rows = read_jsonl(&dir.path().join("o/trials.jsonl")).unwrap();
    assert!(rows
        .iter()
        .all(|r| !r.private && r.config.noise == NoiseMode::Zeroed));
    assert!(std::fs::read_to_string(dir.path().join("o/summary.csv"))
        .unwrap()
        .contains(",false,"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = userdp(&["run", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let bad = write_config(
        dir.path(),
        "bad.json",
        &SMALL.replace("\"epsilon\": 2.0", "\"epsilon\": -1.0"),
    );
    assert_eq!(
        userdp(&["run", "--config", &bad], dir.path()).status.code(),
        Some(2)
    );

    let typo = write_config(
        dir.path(),
        "typo.json",
        &SMALL.replace("\"t_cap\"", "\"tcap\""),
    );
    assert_eq!(
        userdp(&["run", "--config", &typo], dir.path())
            .status
            .code(),
        Some(2)
    );

    // a sweep needs a grid
    let cfg = write_config(dir.path(), "c.json", SMALL);
    assert_eq!(
        userdp(&["sweep", "--config", &cfg], dir.path())
            .status
            .code(),
        Some(2)
    );

    assert_eq!(
        userdp(&["verify", "no_such_suite"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn sweep_writes_one_summary_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "\"fresh_samples\": 2000",
        "\"fresh_samples\": 2000, \"sweep\": {\"m\": [2, 4], \"epsilon\": [1.0, 2.0]}",
    );
    let cfg = write_config(dir.path(), "s.json", &text);
    let o = userdp(&["sweep", "--config", &cfg, "--out", "s"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let rows = read_jsonl(&dir.path().join("s/trials.jsonl")).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.config.sweep.is_none()));
}

#[test]
fn verify_exit_codes_follow_check_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = userdp(&["verify", "sparse_vector", "--trials", "200"], dir.path());
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));

    // the selection-probability audit finds neighbouring sets beyond the claimed bound
    let bad = userdp(&["verify", "sensitivity", "--trials", "1000"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}
