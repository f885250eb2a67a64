#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn matchkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matchkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub struct SceneFiles {
    pub target: PathBuf,
    pub reference: PathBuf,
    pub gt: PathBuf,
    pub gt_inliers: PathBuf,
}

/// Writes a synthetic scene into `dir` through the `synth` subcommand.
pub fn synth(dir: &Path, extra: &[&str]) -> SceneFiles {
    let d = dir.to_str().unwrap();
    let mut args = vec!["synth", "--out-dir", d];
    args.extend_from_slice(extra);
    let out = matchkit(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    SceneFiles {
        target: dir.join("target.json"),
        reference: dir.join("reference.json"),
        gt: dir.join("gt_homography.txt"),
        gt_inliers: dir.join("gt_inliers.csv"),
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
