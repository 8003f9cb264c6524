//! Runs the `pmsys` binary over the bundled fixture corpus.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_pmsys");

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn pmsys<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(BIN).args(args).env("RUST_LOG", "off").output().expect("spawn pmsys")
}

/// Files the pipeline writes, in the order they are produced.
pub const OUTPUTS: [&str; 9] = [
    "events.csv",
    "traits.csv",
    "match.json",
    "emotions.json",
    "timeline.json",
    "features.csv",
    "model.json",
    "evaluation.json",
    "cv.json",
];

/// label-status through evaluate and cross-validate. `global` is passed to
/// every invocation (e.g. `--threads 1`).
pub fn run_pipeline(out: &Path, global: &[&str]) -> Result<(), String> {
    let f = |n: &str| fixture(n).display().to_string();
    let o = |n: &str| out.join(n).display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["label-status".into(), "--input".into(), f("posts.csv"), "--responses".into(), f("responses.csv"),
             "--rules".into(), f("rules.txt"), "--output".into(), o("events.csv")],
        vec!["score-traits".into(), "--input".into(), f("questionnaire.csv"), "--output".into(), o("traits.csv")],
        vec!["match-users".into(), "--input".into(), f("posts.csv"), "--profiles".into(), f("profiles.csv"),
             "--users".into(), f("users.csv"), "--output".into(), o("match.json")],
        vec!["score-emotions".into(), "--input".into(), f("posts.csv"), "--output".into(), o("emotions.json")],
        vec!["segment-timeline".into(), "--input".into(), f("timelines.csv"),
             "--open".into(), "2011-10-01T00:00:00Z".into(), "--close".into(), "2012-01-19T00:00:00Z".into(),
             "--extension".into(), "2012-02-03T00:00:00Z".into(), "--output".into(), o("timeline.json")],
        vec!["extract-features".into(), "--input".into(), f("posts.csv"), "--events".into(), o("events.csv"),
             "--users".into(), f("users.csv"), "--traits".into(), o("traits.csv"), "--profiles".into(), f("profiles.csv"),
             "--output".into(), o("features.csv")],
        vec!["train".into(), "--input".into(), o("features.csv"), "--trees".into(), "50".into(), "--seed".into(), "3".into(),
             "--output".into(), o("model.json")],
        vec!["evaluate".into(), "--model".into(), o("model.json"), "--input".into(), o("features.csv"),
             "--output".into(), o("evaluation.json")],
        vec!["cross-validate".into(), "--input".into(), o("features.csv"), "--folds".into(), "5".into(),
             "--trees".into(), "50".into(), "--seed".into(), "3".into(), "--output".into(), o("cv.json")],
    ];
    for step in steps {
        let res = pmsys(step.iter().map(String::as_str).chain(global.iter().copied()));
        if !res.status.success() {
            return Err(format!(
                "{} exited with {:?}: {}",
                step[0],
                res.status.code(),
                String::from_utf8_lossy(&res.stderr)
            ));
        }
    }
    Ok(())
}

/// Byte comparison against `tests/golden`, or rewrite when UPDATE_GOLDEN=1.
pub fn check_golden(out: &Path) -> Result<(), String> {
    let dir = golden_dir();
    let update = std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    for name in OUTPUTS {
        let got = std::fs::read(out.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let path = dir.join(name);
        if update {
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            std::fs::write(&path, &got).map_err(|e| e.to_string())?;
            continue;
        }
        let want = std::fs::read(&path).map_err(|e| format!("golden {name}: {e} (run with UPDATE_GOLDEN=1)"))?;
        if got != want {
            return Err(format!("{name} differs from golden copy"));
        }
    }
    Ok(())
}
