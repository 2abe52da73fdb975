use std::path::Path;
use std::process::{Command, Output};

fn alsched(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alsched"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const EXPERIMENT: &str = r#"
[experiment]
runs = 2
baseline = "baseline"

[dataset]
path = "data.jsonl"

[defaults]
epochs = 3
hidden_dim = 8
learning_rate = 0.01

[[config]]
id = "baseline"

[[config]]
id = "furthest"
acquisition = "furthest_batch"
clustering = "dynamic"
"#;

#[test]
fn synth_validate_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&alsched(
        d,
        &[
            "synth",
            "--samples-per-class",
            "30",
            "--feature-dim",
            "3",
            "--split",
            "0.8,0.1,0.1",
            "--out",
            "data.jsonl",
        ],
    ));
    let first = std::fs::read_to_string(d.join("data.jsonl")).unwrap();
    assert_eq!(first.lines().count(), 90);
    assert!(first.lines().all(|l| l.contains("\"split\"")));

    std::fs::write(d.join("exp.toml"), EXPERIMENT).unwrap();
    let validated = ok(&alsched(d, &["validate", "exp.toml"]));
    assert!(validated.contains("ok\tbaseline"));
    assert!(validated.contains("warning\tfurthest"), "{validated}");

    ok(&alsched(
        d,
        &[
            "run",
            "exp.toml",
            "--runs",
            "3",
            "--seed-base",
            "40",
            "--out-dir",
            "out",
            "--jobs",
            "2",
        ],
    ));
    let curves = std::fs::read_to_string(d.join("out/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 3 * 3);
    assert!(curves.lines().nth(1).unwrap().starts_with("baseline,40,1,"));
    for f in ["summary.csv", "significance.csv", "errors.csv"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }

    let summary = std::fs::read_to_string(d.join("out/summary.csv")).unwrap();
    let significance = std::fs::read_to_string(d.join("out/significance.csv")).unwrap();
    ok(&alsched(
        d,
        &[
            "report",
            "out/curves.csv",
            "--baseline",
            "baseline",
            "--out-dir",
            "again",
        ],
    ));
    assert_eq!(std::fs::read_to_string(d.join("again/summary.csv")).unwrap(), summary);
    assert_eq!(
        std::fs::read_to_string(d.join("again/significance.csv")).unwrap(),
        significance
    );
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        EXPERIMENT.replace("epochs = 3", "epochz = 3"),
    )
    .unwrap();
    let out = alsched(dir.path(), &["validate", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn incompatible_combination_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = EXPERIMENT.replace(
        "clustering = \"dynamic\"",
        "clustering = \"dynamic\"\nscheduler = \"prob\"",
    );
    std::fs::write(dir.path().join("bad.toml"), text).unwrap();
    let out = alsched(dir.path(), &["validate", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("furthest_batch"));
}

#[test]
fn report_rejects_unknown_baseline() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("curves.csv"),
        "config_id,seed,epoch,val_f1,test_f1,annotated_fraction,cumulative_unique_fraction\na,0,1,0.5,0.5,1.0,1.0\n",
    )
    .unwrap();
    let out = alsched(dir.path(), &["report", "curves.csv", "--baseline", "zzz"]);
    assert!(!out.status.success());
    ok(&alsched(dir.path(), &["report", "curves.csv"]));
    assert!(dir.path().join("summary.csv").exists());
}
