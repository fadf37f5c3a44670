use visdemand_core::exec::Execution;
use visdemand_core::models::{ForestConfig, Task};
use visdemand_core::reports::{
    data_hash, emit_plot_data, run_experiment, DataSource, ExperimentConfig, ReportError, Stage,
};
use visdemand_core::synthgen::{generate_corpus, GeneratorSpec};
use visdemand_core::telemetry::{ingest_dir, write_trip, LogFormat, TelemetryError};

fn small_config(trips: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        source: DataSource::Synthetic {
            spec: GeneratorSpec {
                seed: 11,
                ..GeneratorSpec::default()
            },
            trips,
        },
        classification_forest: ForestConfig {
            n_estimators: 15,
            ..ForestConfig::long_glance()
        },
        regression_forest: ForestConfig {
            n_estimators: 15,
            max_features: visdemand_core::models::MaxFeatures::Sqrt,
            ..ForestConfig::tgd()
        },
        cv_repetitions: 1,
        seed: 3,
        ..ExperimentConfig::default()
    };
    cfg.explain.max_instances = 80;
    cfg
}

#[test]
fn experiment_runs_both_tasks_and_is_reproducible() {
    let cfg = small_config(40);
    let a = run_experiment(&cfg, Execution::Parallel).unwrap();
    assert_eq!(a.tasks.len(), 2);
    let reg = a.task(Task::Regression).unwrap();
    assert_eq!(reg.metrics.len(), 3);
    assert_eq!(reg.metrics[0].folds.len(), 10);
    assert_eq!(reg.ranking.len(), 3);
    assert!(reg.explanations.beeswarm.len() <= 19);
    assert!(!reg.explanations.dependence.is_empty());
    let cls = a.task(Task::Classification).unwrap();
    assert_eq!(cls.class_counts.0, cls.class_counts.1);

    let b = run_experiment(&cfg, Execution::Serial).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.report_hash.len(), 64);
}

#[test]
fn plot_data_lands_on_disk() {
    let report = run_experiment(&small_config(30), Execution::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_plot_data(&report, dir.path()).unwrap();
    assert!(paths.iter().any(|p| p.ends_with("beeswarm_tgd.json")));
    assert!(paths.iter().any(|p| p.ends_with("force_long_glance.json")));
    for p in paths {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert!(v.is_array() || v.is_object());
    }
}

#[test]
fn logs_directory_matches_generated_trips() {
    let spec = GeneratorSpec {
        seed: 5,
        ..GeneratorSpec::default()
    };
    let trips: Vec<_> = generate_corpus(&spec, 6, Execution::Serial)
        .unwrap()
        .into_iter()
        .map(|g| g.trip)
        .collect();
    let dir = tempfile::tempdir().unwrap();
    for (i, t) in trips.iter().enumerate() {
        let format = if i % 2 == 0 { LogFormat::Jsonl } else { LogFormat::Tsv };
        let path = dir.path().join(format!("trip_{i:02}.{}", format.extension()));
        std::fs::write(path, write_trip(t, format)).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let back = ingest_dir(dir.path()).unwrap();
    assert_eq!(back, trips);
    assert_eq!(data_hash(&back), data_hash(&trips));
}

#[test]
fn bad_file_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.jsonl"), "{not json\n").unwrap();
    let err = ingest_dir(dir.path()).unwrap_err();
    assert!(matches!(err, TelemetryError::InFile { .. }));
    assert!(err.to_string().contains("broken.jsonl"));

    let cfg = ExperimentConfig {
        source: DataSource::Logs {
            dir: dir.path().to_path_buf(),
        },
        ..ExperimentConfig::default()
    };
    match run_experiment(&cfg, Execution::Serial) {
        Err(ReportError::Stage { stage, message }) => {
            assert_eq!(stage, Stage::Ingest);
            assert!(message.contains("broken.jsonl"));
        }
        other => panic!("expected ingest failure, got {other:?}"),
    }
}
