//! Command-line behaviour: error reporting, configuration echo and the
//! read-only report stage.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[synth]
years = 1

[dataset]
input_width = 24
label_width = 12
train_stride = 16

[train]
units = 4
max_epochs = 2
ensemble_size = 2

[forecast]
stride = 48
";

fn scour(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scour"))
        .current_dir(dir)
        .args(["--config", "run.ini", "--out", "out"])
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.ini"), TINY).unwrap();
    dir
}

fn first_stderr_line(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).lines().next().unwrap_or("").to_string()
}

#[test]
fn missing_upstream_artifact_names_the_stage_to_run() {
    let dir = setup();
    let o = scour(dir.path(), &["preprocess"]);
    assert!(!o.status.success());
    let line = first_stderr_line(&o);
    assert!(line.starts_with("ERROR code="), "{line}");
    assert!(line.contains("ingest"), "{line}");
}

#[test]
fn unknown_override_key_is_a_config_error() {
    let dir = setup();
    let o = scour(dir.path(), &["--set", "train.nonsense=1", "synth"]);
    assert!(!o.status.success());
    assert!(first_stderr_line(&o).starts_with("ERROR code=config"), "{}", first_stderr_line(&o));
    assert!(!dir.path().join("out/synth").exists());
}

#[test]
fn bad_usage_reports_a_usage_error() {
    let dir = setup();
    let o = scour(dir.path(), &["no-such-stage"]);
    assert!(!o.status.success());
    assert!(first_stderr_line(&o).starts_with("ERROR code=usage"));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if !p.ends_with("report") {
                    stack.push(p);
                }
            } else {
                files.push((p.display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn pipeline_echoes_config_and_report_only_writes_its_own_directory() {
    let dir = setup();
    for stage in ["synth", "ingest", "preprocess", "train", "forecast", "alert"] {
        let o = scour(dir.path(), &[stage]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
        let echo = fs::read_to_string(dir.path().join("out").join(stage).join("config.ini")).unwrap();
        assert!(echo.contains("max_epochs = 2"), "{stage} echo lacks overrides");
    }
    let out = dir.path().join("out");
    let before = snapshot(&out);
    let o = scour(dir.path(), &["report"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(snapshot(&out), before);
    for name in ["report.txt", "series_sonar.svg", "history.svg", "forecast_sonar.svg", "summary.csv"] {
        assert!(out.join("report").join(name).exists(), "missing {name}");
    }

    // Same seed, same synthetic data.
    let again = tempfile::tempdir().unwrap();
    fs::write(again.path().join("run.ini"), TINY).unwrap();
    assert!(scour(again.path(), &["synth"]).status.success());
    assert_eq!(fs::read(out.join("synth/raw.csv")).unwrap(), fs::read(again.path().join("out/synth/raw.csv")).unwrap());
}
