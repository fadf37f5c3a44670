use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use visdemand_core::shap::Explanation;

fn visdemand(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visdemand"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = visdemand(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth → featurize in a temp dir; returns (dir, logs, dataset).
fn corpus(trips: &str) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    let ds = dir.path().join("ds.csv");
    ok(&["synth", "--out", p(&logs), "--trips", trips, "--seed", "4"]);
    ok(&["featurize", "--input", p(&logs), "--out", p(&ds)]);
    (dir, logs, ds)
}

#[test]
fn synth_output_is_ingestible() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    ok(&[
        "synth",
        "--out",
        p(&logs),
        "--trips",
        "5",
        "--seed",
        "9",
        "--format",
        "tsv",
        "--blinks",
        "2",
    ]);
    assert!(logs.join("ground_truth/sessions.json").exists());
    let out = ok(&["ingest", "--input", p(&logs)]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["trips"], 5);
    assert_eq!(summary["data_hash"].as_str().unwrap().len(), 64);

    let canon = dir.path().join("canon");
    ok(&["ingest", "--input", p(&logs), "--out", p(&canon)]);
    let again: Value = serde_json::from_slice(&ok(&["ingest", "--input", p(&canon)]).stdout).unwrap();
    assert_eq!(again, summary);

    let seg = dir.path().join("seg.json");
    ok(&["segment", "--input", p(&logs), "--out", p(&seg)]);
    let seg: Value = serde_json::from_str(&std::fs::read_to_string(seg).unwrap()).unwrap();
    assert!(!seg["engagements"].as_array().unwrap().is_empty());
}

#[test]
fn training_is_deterministic_and_explanations_are_locally_accurate() {
    let (dir, _, ds) = corpus("12");
    let m1 = dir.path().join("m1.json");
    let m2 = dir.path().join("m2.json");
    for m in [&m1, &m2] {
        ok(&[
            "train",
            "--task",
            "tgd",
            "--data",
            p(&ds),
            "--seed",
            "7",
            "--trees",
            "15",
            "--out",
            p(m),
        ]);
    }
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    let serial = dir.path().join("m3.json");
    ok(&[
        "--serial",
        "train",
        "--task",
        "tgd",
        "--data",
        p(&ds),
        "--seed",
        "7",
        "--trees",
        "15",
        "--out",
        p(&serial),
    ]);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&serial).unwrap());

    let lg = dir.path().join("lg.json");
    ok(&[
        "train",
        "--task",
        "long-glance",
        "--data",
        p(&ds),
        "--seed",
        "7",
        "--trees",
        "15",
        "--out",
        p(&lg),
    ]);

    let instance = dir.path().join("i.json");
    std::fs::write(
        &instance,
        r#"{"n_Button":0,"n_List":3,"n_Map":0,"n_Slider":0,"n_Homebar":1,"n_CoverFlow":0,"n_AppIcon":0,
            "n_Tab":0,"n_Keyboard":0,"n_Browser":0,"n_RemoteUI":0,"n_ControlBar":0,"n_PopUp":0,
            "n_ClickGuard":0,"n_Other":0,"n_Unknown":0,"n_Tap":3,"n_Drag":1,"n_Multitouch":0,
            "d_avg":120.5,"N":4,"v_avg":48.0,"theta_avg":0.0,"a_acc":0,"a_sa":1}"#,
    )
    .unwrap();
    for model in [&m1, &lg] {
        let out = ok(&["explain", "--model", p(model), "--instance", p(&instance)]);
        let e: Explanation = serde_json::from_slice(&out.stdout).unwrap();
        let sum = e.base_value + e.phi.iter().sum::<f64>();
        assert!((sum - e.model_output).abs() < 1e-9);
        assert_eq!(e.phi.len(), 25);
    }
}

#[test]
fn evaluate_writes_report_and_plot_data() {
    let (dir, logs, _) = corpus("25");
    let report = dir.path().join("report.json");
    let plots = dir.path().join("plots");
    let config = dir.path().join("exp.json");
    std::fs::write(&config, r#"{"cv_repetitions": 1, "explain": {"max_instances": 60}}"#).unwrap();
    let args = [
        "evaluate",
        "--config",
        p(&config),
        "--input",
        p(&logs),
        "--trees",
        "10",
        "--seed",
        "2",
        "--out",
        p(&report),
        "--emit-plot-data",
        p(&plots),
    ];
    ok(&args);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["tasks"].as_array().unwrap().len(), 2);
    assert!(plots.join("beeswarm_tgd.json").exists());
    assert!(plots.join("force_long_glance.json").exists());

    let first = std::fs::read(&report).unwrap();
    ok(&args);
    assert_eq!(first, std::fs::read(&report).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(visdemand(&[]).status.code(), Some(2));
    assert_eq!(visdemand(&["train", "--task", "speed"]).status.code(), Some(2));
    assert_eq!(visdemand(&["bogus"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_1_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "not json\n").unwrap();
    let out = visdemand(&["ingest", "--input", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[ingest]") && err.contains("bad.jsonl"), "{err}");

    let missing = dir.path().join("nope.json");
    let out = visdemand(&["explain", "--model", p(&missing), "--instance", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[explain]"));
}
