use std::fs;
use std::process::Command;

fn lglab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lglab"));
    c.env("RUST_LOG", "error");
    c
}

const SMALL: [&str; 10] = [
    "--set",
    "subjects=2",
    "--set",
    "frames_per_subject=90",
    "--set",
    "event_min_len=8",
    "--set",
    "event_max_len=20",
    "--set",
    "epochs=1",
];

#[test]
fn all_writes_metrics_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let status = lglab().arg("all").arg("--out").arg(dir.path()).args(SMALL).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\ntotal_frames,180\n"));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = lglab().arg("synth").arg("--out").arg(dir.path()).args(["--set", "tau=2"]).status().unwrap();
    assert_eq!(bad.code(), Some(1));
    let unknown = lglab().arg("synth").arg("--out").arg(dir.path()).args(["--set", "colour=red"]).status().unwrap();
    assert_eq!(unknown.code(), Some(1));
    let missing = lglab().arg("encode").arg("--out").arg(dir.path()).args(SMALL).status().unwrap();
    assert_eq!(missing.code(), Some(2));

    let schedule = dir.path().join("empty.csv");
    fs::write(&schedule, "subject_id,start_frame,end_frame,attribute,intensity\n").unwrap();
    let config = dir.path().join("run.conf");
    fs::write(&config, "schedule = empty.csv\nsubjects = 2\nframes_per_subject = 60\nepochs = 1\n").unwrap();
    let none = lglab().arg("all").arg("--config").arg(&config).arg("--out").arg(dir.path().join("o")).status().unwrap();
    assert_eq!(none.code(), Some(3));
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    for seed in ["1", "2"] {
        let status = lglab()
            .arg("synth")
            .arg("--out")
            .arg(dir.path().join(seed))
            .args(["--seed", seed])
            .args(SMALL)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let a = fs::read(dir.path().join("1/schedule.csv")).unwrap();
    let b = fs::read(dir.path().join("2/schedule.csv")).unwrap();
    assert_ne!(a, b);
}
