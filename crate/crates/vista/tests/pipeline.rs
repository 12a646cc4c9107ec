//! Runner-level behavior with in-process mocks: determinism, resume
//! bookkeeping, failure isolation, and the held-constant noise protocol.

use std::fs;
use std::path::{Path, PathBuf};

use vista::prompt::PromptMode;
use vista::report;
use vista::runner::{
    self, ArimaConfig, DatasetSpec, EndpointSpec, ExperimentConfig, MetricsSpace,
    MockBehaviorSpec, RunnerError, TaskStatus,
};

fn fixture_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/fixture_110.csv")
}

fn base_config(root: &Path) -> ExperimentConfig {
    ExperimentConfig {
        datasets: vec![DatasetSpec {
            ticker: "FIX".into(),
            csv: Some(fixture_csv()),
            remote: false,
            date_from: "2014-01-01".parse().unwrap(),
            date_to: "2020-01-01".parse().unwrap(),
        }],
        t: 100,
        h: 5,
        stride: None,
        modes: vec![PromptMode::TextOnly],
        endpoints: vec![EndpointSpec::Mock {
            behavior: MockBehaviorSpec::LastValue,
        }],
        noise_coefficients: vec![],
        arima: ArimaConfig {
            enabled: true,
            grid: None,
        },
        seed: 42,
        parallelism: 2,
        output_dir: root.join("out"),
        normalization_scope: Default::default(),
        prompt_decimals: 4,
        metrics_space: MetricsSpace::Normalized,
        remote_endpoint: None,
        cache_dir: root.join("cache"),
        charts_dir: root.join("charts"),
    }
}

fn projected_records(path: &Path) -> Vec<serde_json::Value> {
    let (records, bad) = report::read_records(path).unwrap();
    assert_eq!(bad, 0, "unexpected corrupt lines");
    let mut projected: Vec<(String, serde_json::Value)> = records
        .iter()
        .map(|r| (r.key(), r.projected()))
        .collect();
    projected.sort_by(|a, b| a.0.cmp(&b.0));
    projected.into_iter().map(|(_, v)| v).collect()
}

#[test]
fn full_run_completes_and_rerun_is_free() {
    let dir = tempfile::tempdir().unwrap();
    let config = base_config(dir.path());

    let first = runner::run(&config).unwrap();
    assert_eq!(first.total, 4); // 2 segments x (1 prompt + 1 arima)
    assert_eq!(first.executed, 4);
    assert_eq!(first.failed, 0);
    assert_eq!(first.model_calls, 2);

    let second = runner::run(&config).unwrap();
    assert_eq!(second.executed, 0);
    assert_eq!(second.skipped, 4);
    assert_eq!(second.model_calls, 0, "re-run must not call the model");
}

#[test]
fn identical_configs_produce_identical_records() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut config_a = base_config(dir_a.path());
    let mut config_b = base_config(dir_b.path());
    for config in [&mut config_a, &mut config_b] {
        config.modes = vec![PromptMode::TextOnly, PromptMode::Multimodal];
        config.noise_coefficients = vec![0.02];
    }

    let a = runner::run(&config_a).unwrap();
    let b = runner::run(&config_b).unwrap();
    assert_eq!(a.failed, 0);
    assert_eq!(b.failed, 0);
    assert_eq!(
        projected_records(&a.records_path),
        projected_records(&b.records_path)
    );
}

#[test]
fn failing_endpoint_does_not_block_arima_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(dir.path());
    config.endpoints = vec![EndpointSpec::Mock {
        behavior: MockBehaviorSpec::Fail,
    }];

    let summary = runner::run(&config).unwrap();
    assert_eq!(summary.failed, 2);
    assert_eq!(summary.done, 2);

    let manifest = runner::RunManifest::load(&summary.manifest_path).unwrap();
    for entry in &manifest.tasks {
        match entry.task.kind {
            runner::TaskKind::Arima => assert_eq!(entry.status, TaskStatus::Done),
            runner::TaskKind::Prompt { .. } => {
                assert_eq!(entry.status, TaskStatus::Failed);
                assert!(entry.error.as_deref().unwrap().starts_with("network"));
            }
        }
    }

    // Failed prompt tasks leave no records; the two ARIMA rows remain.
    let (records, _) = report::read_records(&summary.records_path).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.mode == "arima"));
}

#[test]
fn changed_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config = base_config(dir.path());
    runner::run(&config).unwrap();

    let mut changed = config.clone();
    changed.seed = 43;
    let err = runner::run(&changed).unwrap_err();
    assert!(matches!(err, RunnerError::ConfigMismatch { .. }));
}

#[test]
fn resume_executes_only_missing_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let config = base_config(dir.path());
    let summary = runner::run(&config).unwrap();

    // Flip two entries back to pending; their records already exist, so
    // the rerun must not duplicate rows.
    let mut manifest = runner::RunManifest::load(&summary.manifest_path).unwrap();
    for entry in manifest.tasks.iter_mut().take(2) {
        entry.status = TaskStatus::Pending;
    }
    manifest.store(&summary.manifest_path).unwrap();

    let resumed = runner::resume(&summary.manifest_path).unwrap();
    assert_eq!(resumed.executed, 2);
    assert_eq!(resumed.skipped, 2);
    assert_eq!(resumed.done, 4);

    let (records, _) = report::read_records(&summary.records_path).unwrap();
    let mut keys: Vec<String> = records.iter().map(|r| r.key()).collect();
    let before = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(before, keys.len(), "every scoring key appears exactly once");
    assert_eq!(keys.len(), 4);
}

#[test]
fn fully_done_manifest_resumes_as_a_noop() {
    let dir = tempfile::tempdir().unwrap();
    let config = base_config(dir.path());
    let summary = runner::run(&config).unwrap();

    let resumed = runner::resume(&summary.manifest_path).unwrap();
    assert_eq!(resumed.executed, 0);
    assert_eq!(resumed.model_calls, 0);
}

#[test]
fn truncated_record_line_marks_its_task_pending() {
    let dir = tempfile::tempdir().unwrap();
    let config = base_config(dir.path());
    let summary = runner::run(&config).unwrap();

    // Chop the final record line in half, as an interrupted write would.
    let text = fs::read_to_string(&summary.records_path).unwrap();
    let keep = text.len() - 40;
    fs::write(&summary.records_path, &text[..keep]).unwrap();

    let resumed = runner::resume(&summary.manifest_path).unwrap();
    assert_eq!(resumed.executed, 1, "only the task with the broken record reruns");

    let (records, bad) = report::read_records(&summary.records_path).unwrap();
    assert_eq!(bad, 1);
    assert_eq!(records.len(), 4);
}

#[test]
fn tampered_manifest_hash_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config = base_config(dir.path());
    let summary = runner::run(&config).unwrap();

    let mut manifest = runner::RunManifest::load(&summary.manifest_path).unwrap();
    manifest.config.seed = 43; // no longer matches config_hash
    manifest.store(&summary.manifest_path).unwrap();

    let err = runner::resume(&summary.manifest_path).unwrap_err();
    assert!(matches!(err, RunnerError::ConfigMismatch { .. }));
}

#[test]
fn records_without_manifest_refuse_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = base_config(dir.path());
    fs::create_dir_all(&config.output_dir).unwrap();
    fs::write(config.output_dir.join("records.jsonl"), "stale\n").unwrap();
    let err = runner::run(&config).unwrap_err();
    assert!(matches!(err, RunnerError::DirtyOutputDir(_)));
}

#[test]
fn prompt_text_is_constant_across_a_noise_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(dir.path());
    config.arima.enabled = false;
    config.modes = vec![PromptMode::Multimodal];
    config.noise_coefficients = vec![0.02, 0.05];

    let summary = runner::run(&config).unwrap();
    assert_eq!(summary.failed, 0);
    assert_eq!(summary.total, 6); // 2 segments x (clean + 2 noise levels)

    let manifest = runner::RunManifest::load(&summary.manifest_path).unwrap();
    for start in [0, 5] {
        let prompts: Vec<String> = manifest
            .tasks
            .iter()
            .filter(|e| e.task.start_index == start)
            .map(|e| fs::read_to_string(e.prompt.as_ref().unwrap()).unwrap())
            .collect();
        assert_eq!(prompts.len(), 3);
        assert!(
            prompts.windows(2).all(|w| w[0] == w[1]),
            "prompt text must not vary with the noise level"
        );

        let charts: Vec<Vec<u8>> = manifest
            .tasks
            .iter()
            .filter(|e| e.task.start_index == start)
            .map(|e| fs::read(e.chart.as_ref().unwrap()).unwrap())
            .collect();
        assert!(
            charts.windows(2).any(|w| w[0] != w[1]),
            "chart bytes must vary with the noise level"
        );
    }
}

#[test]
fn raw_space_scoring_rescales_metrics() {
    let dir_norm = tempfile::tempdir().unwrap();
    let dir_raw = tempfile::tempdir().unwrap();
    let config_norm = base_config(dir_norm.path());
    let mut config_raw = base_config(dir_raw.path());
    config_raw.metrics_space = MetricsSpace::Raw;

    let norm = runner::run(&config_norm).unwrap();
    let raw = runner::run(&config_raw).unwrap();
    let (norm_records, _) = report::read_records(&norm.records_path).unwrap();
    let (raw_records, _) = report::read_records(&raw.records_path).unwrap();

    let pick = |records: &[report::EvalRecord]| -> report::EvalRecord {
        records
            .iter()
            .find(|r| r.mode == "text_only" && r.start_index == 0)
            .unwrap()
            .clone()
    };
    let n = pick(&norm_records);
    let r = pick(&raw_records);
    // Same forecasts, different scoring space: raw-mode MSE scales by the
    // squared window span.
    assert_eq!(n.forecast, r.forecast);
    assert!(r.metrics.mse > n.metrics.mse);
}
