mod common;

use common::{code, matchkit, s, synth};
use matchkit_cli::MatchReport;
use matchkit_core::io::{load_features, load_homography, load_match_pairs, save_features};
use matchkit_core::{BinaryDescriptor, FeatureSet, Keypoint};

fn report(stdout: &[u8]) -> MatchReport {
    serde_json::from_slice(stdout).expect("stdout is a report")
}

#[test]
fn noiseless_scene_converges_with_nonincreasing_stages() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), &["--sigma", "0", "--clusters", "6", "--seed", "2"]);
    let out = matchkit(&[
        "match",
        s(&f.target),
        s(&f.reference),
        "--gt",
        s(&f.gt),
        "--metric-mode",
        "gt_transfer",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out.stdout);
    let labels: Vec<_> = r.stages.iter().map(|s| s.label.as_str()).collect();
    assert_eq!(labels, ["KNN", "TF", "GMS", "PROSAC"]);
    assert!(r.stages.windows(2).all(|w| w[0].nm >= w[1].nm));
    let m = r.metrics.unwrap();
    assert!(m.me < 1e-6, "{m:?}");
    assert_eq!(m.correct, Some(m.nm));
    assert_eq!(r.inliers.len(), m.nm);
    assert!(r.homography.is_some());
}

#[test]
fn stop_after_outputs_are_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), &["--clusters", "6", "--seed", "4"]);
    let full = report(&matchkit(&["match", s(&f.target), s(&f.reference)]).stdout);
    for (n, stage) in [(1, "knn"), (2, "tf"), (3, "gms")] {
        let out = matchkit(&["match", s(&f.target), s(&f.reference), "--stop-after", stage]);
        assert_eq!(code(&out), 0);
        let r = report(&out.stdout);
        assert_eq!(r.stages, full.stages[..n]);
        assert!(r.homography.is_none());
        assert_eq!(r.inliers.len(), r.stages[n - 1].nm);
    }
}

#[test]
fn insufficient_reference_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), &["--n-inliers", "10", "--n-outliers", "0"]);
    let one = dir.path().join("one.json");
    let fs = FeatureSet::new(
        vec![Keypoint::new(1.0, 1.0)],
        vec![BinaryDescriptor::from_words([1; 4])],
        (10, 10),
    )
    .unwrap();
    save_features(&one, &fs).unwrap();
    let out = matchkit(&["match", s(&f.target), s(&one)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty/insufficient reference"));
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), &["--n-inliers", "10", "--n-outliers", "0"]);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&matchkit(&["match", s(&f.target), s(&bad)])), 1);
    assert_eq!(code(&matchkit(&["match", s(&f.target), "/no/such/file.json"])), 1);
    assert_eq!(
        code(&matchkit(&["match", s(&f.target), s(&f.reference), "--tw", "1.5"])),
        1
    );
    assert_eq!(code(&matchkit(&["match", s(&f.target), s(&f.reference), "--bogus"])), 1);
    // gt metrics without a ground truth
    assert_eq!(
        code(&matchkit(&[
            "match",
            s(&f.target),
            s(&f.reference),
            "--metric-mode",
            "gt_transfer"
        ])),
        1
    );
    let out = matchkit(&["synth", "--out-dir", "/proc/matchkit-cannot-write"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn non_convergence_exits_two_and_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), &["--seed", "3"]);
    let out = matchkit(&["match", s(&f.target), s(&f.reference), "--tg", "1000"]);
    assert_eq!(code(&out), 2);
    let r = report(&out.stdout);
    assert_eq!(r.stages.last().unwrap().nm, 0);
    assert!(r.metrics.is_none());
}

#[test]
fn csv_and_json_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), &["--clusters", "6"]);
    let (csv, json) = (dir.path().join("out.csv"), dir.path().join("out.json"));
    let out = matchkit(&[
        "match",
        s(&f.target),
        s(&f.reference),
        "--csv",
        s(&csv),
        "--json",
        s(&json),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&json).unwrap(), out.stdout);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "stage,nm,rep,me,rmse,correct");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("KNN,400,1.0,"));
}

#[test]
fn sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), &["--clusters", "8", "--seed", "6"]);
    let out = matchkit(&["sweep", "tw", s(&f.target), s(&f.reference)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let q: Vec<f64> = rows.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(q.len(), 9);
    assert!(q.windows(2).all(|w| w[0] <= w[1]));

    let out = matchkit(&["sweep", "tg", s(&f.target), s(&f.reference), "--grid", "0,3,6,9"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let nm: Vec<usize> = rows.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(nm.len(), 4);
    assert!(nm.windows(2).all(|w| w[0] >= w[1]));

    assert_eq!(
        code(&matchkit(&[
            "sweep",
            "tw",
            s(&f.target),
            s(&f.reference),
            "--grid",
            "0.1,x"
        ])),
        1
    );
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = synth(a.path(), &["--seed", "11", "--n-inliers", "30", "--n-outliers", "5"]);
    let fb = synth(b.path(), &["--seed", "11", "--n-inliers", "30", "--n-outliers", "5"]);
    for (x, y) in [
        (&fa.target, &fb.target),
        (&fa.reference, &fb.reference),
        (&fa.gt, &fb.gt),
        (&fa.gt_inliers, &fb.gt_inliers),
    ] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let t = load_features(&fa.target).unwrap();
    let r = load_features(&fa.reference).unwrap();
    let h = load_homography(&fa.gt).unwrap();
    let pairs = load_match_pairs(&fa.gt_inliers).unwrap();
    assert_eq!((t.len(), r.len(), pairs.len()), (35, 35, 30));
    for (q, tr) in pairs {
        let e = matchkit_core::transfer_error(&h, &t.keypoints()[q], &r.keypoints()[tr]).unwrap();
        assert!(e <= 4.0 * 0.5 * 2f64.sqrt());
    }
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), &["--clusters", "6", "--seed", "9"]);
    let run = |threads: &str| {
        std::process::Command::new(env!("CARGO_BIN_EXE_matchkit"))
            .args(["match", s(&f.target), s(&f.reference)])
            .env("MATCHKIT_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run("1");
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, run("4").stdout);
    assert_eq!(code(&run("zero")), 1);
}
