use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn cheapet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cheapet"))
        .args(args)
        .output()
        .expect("run cheapet")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn sweep_matches_golden_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let trace = data("example_trace.jsonl");
    let res = cheapet(&[
        "sweep",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let summary = stdout_json(&res);
    assert_eq!(summary["mode"], "post_hoc_sweep");
    assert_eq!(summary["points"], 9);
    let got = std::fs::read(&out).unwrap();
    let want = std::fs::read(data("golden_sweep.csv")).unwrap();
    assert_eq!(
        String::from_utf8(got).unwrap(),
        String::from_utf8(want).unwrap()
    );
}

#[test]
fn sweep_jsonl_has_one_point_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.jsonl");
    let trace = data("example_trace.jsonl");
    let res = cheapet(&[
        "sweep",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "jsonl",
    ]);
    stdout_json(&res);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 9);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["system_accuracy"].is_number());
    }
}

#[test]
fn calibrate_then_evaluate_is_consistent() {
    let trace = data("example_trace.jsonl");
    let t = trace.to_str().unwrap();
    let zero = stdout_json(&cheapet(&[
        "calibrate",
        "--trace",
        t,
        "--target-forward",
        "0",
    ]));
    assert_eq!(zero["achieved_forward_fraction"], 0.0);

    let half = stdout_json(&cheapet(&[
        "calibrate",
        "--trace",
        t,
        "--target-forward",
        "0.5",
    ]));
    let threshold = half["threshold"].as_f64().unwrap();
    let eval = stdout_json(&cheapet(&[
        "evaluate",
        "--trace",
        t,
        "--threshold",
        &threshold.to_string(),
    ]));
    assert_eq!(eval["threshold_source"], "given");
    let ff = eval["forward_fraction"].as_f64().unwrap();
    assert!((ff - 0.5).abs() <= 1.0 / 8.0);

    let auto = stdout_json(&cheapet(&[
        "evaluate",
        "--trace",
        t,
        "--target-forward",
        "0.5",
    ]));
    assert_eq!(auto["threshold_source"], "post_hoc_calibration");
    assert_eq!(auto["forward_fraction"], eval["forward_fraction"]);
    assert_eq!(auto["accuracy"], eval["accuracy"]);
}

#[test]
fn fit_mdsa_and_score_with_it() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("mdsa.json");
    let trace = data("example_trace.jsonl");
    let t = trace.to_str().unwrap();
    let fit = stdout_json(&cheapet(&[
        "fit-mdsa",
        "--trace",
        t,
        "--out",
        model.to_str().unwrap(),
        "--global",
    ]));
    assert_eq!(fit["dim"], 2);
    let c = stdout_json(&cheapet(&[
        "calibrate",
        "--trace",
        t,
        "--supervisor",
        "mdsa",
        "--mdsa-model",
        model.to_str().unwrap(),
        "--target-forward",
        "0.25",
    ]));
    assert_eq!(c["supervisor"], "mdsa");
    assert_eq!(c["achieved_forward_fraction"], 0.25);
}

#[test]
fn exit_codes() {
    // usage
    assert_eq!(cheapet(&["sweep"]).status.code(), Some(64));
    assert_eq!(cheapet(&["no-such-command"]).status.code(), Some(64));
    assert_eq!(cheapet(&["--help"]).status.code(), Some(0));

    // I/O
    let missing = cheapet(&[
        "calibrate",
        "--trace",
        "/nonexistent/trace.jsonl",
        "--target-forward",
        "0.5",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());

    // validation
    let trace = data("example_trace.jsonl");
    let t = trace.to_str().unwrap();
    assert_eq!(
        cheapet(&["calibrate", "--trace", t, "--target-forward", "1.5"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        cheapet(&[
            "calibrate",
            "--trace",
            t,
            "--supervisor",
            "mdsa",
            "--target-forward",
            "0.5"
        ])
        .status
        .code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"x\", \"local_probs\": [0.7, 0.7]}\n").unwrap();
    assert_eq!(
        cheapet(&[
            "calibrate",
            "--trace",
            bad.to_str().unwrap(),
            "--target-forward",
            "0.5"
        ])
        .status
        .code(),
        Some(1)
    );
}
