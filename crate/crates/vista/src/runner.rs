//! Config-driven orchestration: plan tasks, drive prompts through models,
//! persist every artifact, resume interrupted runs, and hand records to
//! reporting.
//!
//! A run is the Cartesian product of dataset segments, prompt modes,
//! endpoints, and noise levels (noise applies only to image-bearing
//! modes), plus one ARIMA task per segment when enabled. Task state lives
//! in `manifest.json` (written atomically after every task) and scored
//! results in `records.jsonl`; a re-run with the same config executes only
//! what is missing.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arima;
use crate::chart::{self, NoiseSpec};
use crate::client::{self, MockBehavior, ModelEndpoint};
use crate::data::{self, DataError, ForecastSegment, NormalizationScope, NormalizedSeries};
use crate::metrics;
use crate::prompt::{self, PromptMode};
use crate::report::{self, EvalRecord};

/// The noise-coefficient sweep used by the chart-corruption ablation.
pub const NOISE_PRESET: [f64; 11] = [
    0.010, 0.015, 0.020, 0.025, 0.030, 0.040, 0.045, 0.055, 0.060, 0.065, 0.070,
];

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config hash mismatch: manifest has {found}, current config is {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("output dir has records but no manifest; refusing to overwrite {0}")]
    DirtyOutputDir(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Report(#[from] report::ReportError),
}

fn io_err(path: impl AsRef<Path>, source: std::io::Error) -> RunnerError {
    RunnerError::Io {
        path: path.as_ref().display().to_string(),
        source,
    }
}

/// One data source: a ticker plus either a CSV file or the remote quote
/// endpoint configured at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub ticker: String,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub remote: bool,
    #[serde(default = "default_date_from")]
    pub date_from: NaiveDate,
    #[serde(default = "default_date_to")]
    pub date_to: NaiveDate,
}

fn default_date_from() -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).unwrap()
}

fn default_date_to() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndpointSpec {
    Http {
        base_url: String,
        model_id: String,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
    },
    Mock {
        behavior: MockBehaviorSpec,
    },
}

fn default_max_tokens() -> u32 {
    512
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockBehaviorSpec {
    LastValue,
    LinearTrend,
    Echo { text: String },
    Fail,
}

impl From<&MockBehaviorSpec> for MockBehavior {
    fn from(spec: &MockBehaviorSpec) -> Self {
        match spec {
            MockBehaviorSpec::LastValue => MockBehavior::LastValue,
            MockBehaviorSpec::LinearTrend => MockBehavior::LinearTrend,
            MockBehaviorSpec::Echo { text } => MockBehavior::Echo(text.clone()),
            MockBehaviorSpec::Fail => MockBehavior::Fail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArimaConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Override of the default {0..2}^3 selection grid, as (p, d, q) triples.
    #[serde(default)]
    pub grid: Option<Vec<[usize; 3]>>,
}

impl Default for ArimaConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            grid: None,
        }
    }
}

/// Which space metrics are computed in: the normalized prompt space
/// (default) or the original price scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsSpace {
    Normalized,
    Raw,
}

impl Default for MetricsSpace {
    fn default() -> Self {
        MetricsSpace::Normalized
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSpec>,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "default_h")]
    pub h: usize,
    /// Defaults to h (contiguous, non-overlapping horizons).
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub modes: Vec<PromptMode>,
    #[serde(default)]
    pub endpoints: Vec<EndpointSpec>,
    #[serde(default)]
    pub noise_coefficients: Vec<f64>,
    #[serde(default)]
    pub arima: ArimaConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub normalization_scope: NormalizationScope,
    #[serde(default = "default_prompt_decimals")]
    pub prompt_decimals: usize,
    #[serde(default)]
    pub metrics_space: MetricsSpace,
    /// CSV-over-HTTP quote endpoint for datasets marked `remote`.
    #[serde(default)]
    pub remote_endpoint: Option<String>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_charts_dir")]
    pub charts_dir: PathBuf,
}

fn default_t() -> usize {
    100
}
fn default_h() -> usize {
    5
}
fn default_seed() -> u64 {
    42
}
fn default_parallelism() -> usize {
    4
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_prompt_decimals() -> usize {
    4
}
fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}
fn default_charts_dir() -> PathBuf {
    PathBuf::from("charts")
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.h)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.datasets.is_empty() {
            return Err(RunnerError::Config("datasets must be non-empty".into()));
        }
        if self.t < 2 || self.h < 1 || self.stride() < 1 {
            return Err(RunnerError::Config(format!(
                "bad windowing: T={}, h={}, stride={}",
                self.t,
                self.h,
                self.stride()
            )));
        }
        if self.modes.is_empty() && !self.arima.enabled {
            return Err(RunnerError::Config(
                "either modes must be non-empty or arima must be enabled".into(),
            ));
        }
        if !self.modes.is_empty() && self.endpoints.is_empty() {
            return Err(RunnerError::Config(
                "prompt modes configured but no endpoints".into(),
            ));
        }
        if self
            .noise_coefficients
            .iter()
            .any(|c| !(0.0..=0.5).contains(c))
        {
            return Err(RunnerError::Config(
                "noise coefficients must lie in [0, 0.5]".into(),
            ));
        }
        if self.parallelism < 1 {
            return Err(RunnerError::Config("parallelism must be >= 1".into()));
        }
        for ds in &self.datasets {
            if ds.csv.is_none() && !ds.remote {
                return Err(RunnerError::Config(format!(
                    "dataset {} needs either a csv path or remote=true",
                    ds.ticker
                )));
            }
            if ds.remote && self.remote_endpoint.is_none() {
                return Err(RunnerError::Config(format!(
                    "dataset {} is remote but remote_endpoint is unset",
                    ds.ticker
                )));
            }
        }
        Ok(())
    }

    /// Hash of the key-sorted JSON serialization; resume refuses on
    /// mismatch.
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }

    fn arima_grid(&self) -> Vec<arima::ArimaOrder> {
        match &self.arima.grid {
            Some(triples) => triples
                .iter()
                .filter_map(|[p, d, q]| arima::ArimaOrder::new(*p, *d, *q).ok())
                .collect(),
            None => arima::default_grid(),
        }
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// What one task does; tasks are the planned unit of execution and resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskKind {
    Prompt {
        mode: PromptMode,
        endpoint_idx: usize,
        model_id: String,
        noise: Option<f64>,
    },
    Arima,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub dataset_idx: usize,
    pub seg_idx: usize,
    pub ticker: String,
    pub start_index: usize,
    pub kind: TaskKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    #[serde(flatten)]
    pub task: Task,
    pub status: TaskStatus,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub chart: Option<String>,
    #[serde(default)]
    pub raw: Option<String>,
    #[serde(default)]
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub v: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub created: String,
    pub tasks: Vec<TaskEntry>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| RunnerError::CorruptManifest(e.to_string()))?;
        if manifest.v != MANIFEST_VERSION {
            return Err(RunnerError::CorruptManifest(format!(
                "unsupported manifest version {}",
                manifest.v
            )));
        }
        Ok(manifest)
    }

    /// Write atomically (temp file + rename).
    pub fn store(&self, path: impl AsRef<Path>) -> Result<(), RunnerError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub ticker: String,
    pub segments: Vec<ForecastSegment>,
    pub constant_skipped: usize,
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
        .collect()
}

fn endpoint_label(spec: &EndpointSpec) -> String {
    match spec {
        EndpointSpec::Http { model_id, .. } => model_id.clone(),
        EndpointSpec::Mock { behavior } => MockBehavior::from(behavior).label(),
    }
}

fn task_id(ticker: &str, start: usize, kind: &TaskKind) -> String {
    match kind {
        TaskKind::Arima => format!("{}_{start:05}_arima", sanitize(ticker)),
        TaskKind::Prompt {
            mode,
            model_id,
            noise,
            ..
        } => {
            let mut id = format!(
                "{}_{start:05}_{}_{}",
                sanitize(ticker),
                mode.as_str(),
                sanitize(model_id)
            );
            if let Some(c) = noise {
                id.push_str(&format!("_noise{c:.3}"));
            }
            id
        }
    }
}

/// Load every dataset and slice it into segments.
pub fn load_datasets(config: &ExperimentConfig) -> Result<Vec<LoadedDataset>, RunnerError> {
    let mut out = Vec::new();
    for ds in &config.datasets {
        let series = if let Some(csv) = &ds.csv {
            data::load_csv(csv, &ds.ticker, ds.date_from, ds.date_to)?
        } else {
            let endpoint = config
                .remote_endpoint
                .as_ref()
                .expect("validated: remote datasets have an endpoint");
            data::RemoteSource::new(endpoint.clone(), config.cache_dir.clone())
                .fetch(&ds.ticker, ds.date_from, ds.date_to)?
        };
        let set = data::make_segments(
            &series,
            config.t,
            config.h,
            config.stride(),
            config.normalization_scope,
        )?;
        out.push(LoadedDataset {
            ticker: ds.ticker.clone(),
            segments: set.segments,
            constant_skipped: set.constant_skipped,
        });
    }
    Ok(out)
}

/// Deterministic task plan: (dataset, start, mode, endpoint, noise) order,
/// noise levels applied only to image-bearing modes, plus one ARIMA task
/// per segment when enabled.
pub fn plan(config: &ExperimentConfig, datasets: &[LoadedDataset]) -> Vec<Task> {
    let mut noise_levels: Vec<f64> = config.noise_coefficients.clone();
    noise_levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    noise_levels.dedup();

    let mut modes = config.modes.clone();
    modes.sort();
    modes.dedup();

    let mut tasks = Vec::new();
    for (dataset_idx, ds) in datasets.iter().enumerate() {
        for (seg_idx, seg) in ds.segments.iter().enumerate() {
            for &mode in &modes {
                for (endpoint_idx, spec) in config.endpoints.iter().enumerate() {
                    let label = endpoint_label(spec);
                    let noises: Vec<Option<f64>> = if mode.needs_image() {
                        std::iter::once(None)
                            .chain(noise_levels.iter().copied().map(Some))
                            .collect()
                    } else {
                        vec![None]
                    };
                    for noise in noises {
                        let kind = TaskKind::Prompt {
                            mode,
                            endpoint_idx,
                            model_id: label.clone(),
                            noise,
                        };
                        tasks.push(Task {
                            id: task_id(&ds.ticker, seg.start_index, &kind),
                            dataset_idx,
                            seg_idx,
                            ticker: ds.ticker.clone(),
                            start_index: seg.start_index,
                            kind,
                        });
                    }
                }
            }
            if config.arima.enabled {
                let kind = TaskKind::Arima;
                tasks.push(Task {
                    id: task_id(&ds.ticker, seg.start_index, &kind),
                    dataset_idx,
                    seg_idx,
                    ticker: ds.ticker.clone(),
                    start_index: seg.start_index,
                    kind,
                });
            }
        }
    }
    tasks
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub total: usize,
    pub executed: usize,
    pub skipped: usize,
    pub done: usize,
    pub failed: usize,
    pub model_calls: usize,
    pub manifest_path: PathBuf,
    pub records_path: PathBuf,
}

/// Run an experiment. If a manifest from an identical config already
/// exists in the output dir, only missing work is executed; a manifest
/// from a different config is refused.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, RunnerError> {
    config.validate()?;
    let manifest_path = config.output_dir.join("manifest.json");
    let records_path = config.output_dir.join("records.jsonl");

    let manifest = if manifest_path.exists() {
        let manifest = RunManifest::load(&manifest_path)?;
        let expected = config.canonical_hash();
        if manifest.config_hash != expected {
            return Err(RunnerError::ConfigMismatch {
                expected,
                found: manifest.config_hash,
            });
        }
        manifest
    } else {
        if records_path.exists() {
            return Err(RunnerError::DirtyOutputDir(
                records_path.display().to_string(),
            ));
        }
        let datasets = load_datasets(config)?;
        let tasks = plan(config, &datasets);
        RunManifest {
            v: MANIFEST_VERSION,
            config_hash: config.canonical_hash(),
            config: config.clone(),
            created: chrono::Utc::now().to_rfc3339(),
            tasks: tasks
                .into_iter()
                .map(|task| TaskEntry {
                    task,
                    status: TaskStatus::Pending,
                    error: None,
                    chart: None,
                    raw: None,
                    prompt: None,
                })
                .collect(),
        }
    };

    execute(manifest, &manifest_path)
}

/// Resume from a manifest: only pending/failed tasks execute; done records
/// stay untouched.
pub fn resume(manifest_path: impl AsRef<Path>) -> Result<RunSummary, RunnerError> {
    let manifest_path = manifest_path.as_ref();
    let manifest = RunManifest::load(manifest_path)?;
    let expected = manifest.config.canonical_hash();
    if manifest.config_hash != expected {
        return Err(RunnerError::ConfigMismatch {
            expected,
            found: manifest.config_hash.clone(),
        });
    }
    execute(manifest, manifest_path)
}

struct TaskOutcome {
    status: TaskStatus,
    error: Option<String>,
    chart: Option<String>,
    raw: Option<String>,
    prompt: Option<String>,
    record: Option<EvalRecord>,
}

fn execute(mut manifest: RunManifest, manifest_path: &Path) -> Result<RunSummary, RunnerError> {
    let config = manifest.config.clone();
    let out_dir = config.output_dir.clone();
    let records_path = out_dir.join("records.jsonl");
    for sub in ["raw", "prompts"] {
        fs::create_dir_all(out_dir.join(sub)).map_err(|e| io_err(out_dir.join(sub), e))?;
    }
    fs::create_dir_all(&config.charts_dir).map_err(|e| io_err(&config.charts_dir, e))?;

    // Reconcile with the results store: a done task without a parseable
    // record line goes back to pending; existing keys are never re-scored.
    let mut existing_keys: HashSet<String> = HashSet::new();
    let mut needs_newline = false;
    if records_path.exists() {
        let (records, bad) = report::read_records(&records_path)?;
        if bad > 0 {
            warn!("{bad} unparseable line(s) in {}; affected tasks rerun", records_path.display());
        }
        existing_keys = records.iter().map(|r| r.key()).collect();
        let text = fs::read_to_string(&records_path).map_err(|e| io_err(&records_path, e))?;
        needs_newline = !text.is_empty() && !text.ends_with('\n');
    }
    for entry in &mut manifest.tasks {
        if entry.status == TaskStatus::Done && !existing_keys.contains(&record_key_for(&entry.task))
        {
            warn!("task {} marked done but has no record; rerunning", entry.task.id);
            entry.status = TaskStatus::Pending;
        }
    }

    let datasets = load_datasets(&config)?;
    let endpoints: Vec<ModelEndpoint> = config
        .endpoints
        .iter()
        .map(|spec| match spec {
            EndpointSpec::Http {
                base_url,
                model_id,
                temperature,
                max_tokens,
                timeout_secs,
                max_retries,
            } => {
                let mut ep = ModelEndpoint::http(base_url.clone(), model_id.clone());
                ep.temperature = *temperature;
                ep.max_tokens = *max_tokens;
                ep.timeout = Duration::from_secs(*timeout_secs);
                ep.max_retries = *max_retries;
                ep
            }
            EndpointSpec::Mock { behavior } => client::mock_model(behavior.into()),
        })
        .collect();

    let todo: Vec<usize> = manifest
        .tasks
        .iter()
        .enumerate()
        .filter(|(_, e)| e.status != TaskStatus::Done)
        .map(|(i, _)| i)
        .collect();
    let skipped = manifest.tasks.len() - todo.len();

    let mut records_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&records_path)
        .map_err(|e| io_err(&records_path, e))?;
    if needs_newline {
        // Heal an interrupted write so new lines do not merge into the
        // trailing fragment.
        records_file
            .write_all(b"\n")
            .map_err(|e| io_err(&records_path, e))?;
    }

    let queue: Mutex<Vec<usize>> = Mutex::new(todo.iter().rev().copied().collect());
    let manifest_lock = Mutex::new(&mut manifest);
    let sink = Mutex::new((records_file, existing_keys));
    let model_calls = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..config.parallelism.min(todo.len().max(1)) {
            scope.spawn(|| loop {
                let idx = match queue.lock().unwrap().pop() {
                    Some(idx) => idx,
                    None => break,
                };
                let task = {
                    let guard = manifest_lock.lock().unwrap();
                    guard.tasks[idx].task.clone()
                };
                let outcome = run_task(&config, &datasets, &endpoints, &task, &model_calls);

                if let Some(record) = &outcome.record {
                    let mut sink = sink.lock().unwrap();
                    if sink.1.insert(record.key()) {
                        let (file, _) = &mut *sink;
                        if let Err(e) = report::append_record(file, record) {
                            warn!("failed to append record for {}: {e}", task.id);
                        } else {
                            let _ = file.flush();
                        }
                    }
                }

                let mut guard = manifest_lock.lock().unwrap();
                let entry = &mut guard.tasks[idx];
                entry.status = outcome.status;
                entry.error = outcome.error;
                entry.chart = outcome.chart;
                entry.raw = outcome.raw;
                entry.prompt = outcome.prompt;
                if let Err(e) = guard.store(manifest_path) {
                    warn!("manifest write failed: {e}");
                }
            });
        }
    });

    manifest.store(manifest_path)?;

    let done = manifest
        .tasks
        .iter()
        .filter(|e| e.status == TaskStatus::Done)
        .count();
    let failed = manifest
        .tasks
        .iter()
        .filter(|e| e.status == TaskStatus::Failed)
        .count();
    Ok(RunSummary {
        total: manifest.tasks.len(),
        executed: todo.len(),
        skipped,
        done,
        failed,
        model_calls: model_calls.load(Ordering::SeqCst),
        manifest_path: manifest_path.to_path_buf(),
        records_path,
    })
}

fn record_key_for(task: &Task) -> String {
    match &task.kind {
        TaskKind::Arima => format!("{}|{}|arima|arima|clean", task.ticker, task.start_index),
        TaskKind::Prompt {
            mode,
            model_id,
            noise,
            ..
        } => format!(
            "{}|{}|{}|{}|{}",
            task.ticker,
            task.start_index,
            mode.as_str(),
            model_id,
            report::noise_label(*noise),
        ),
    }
}

fn chart_file_name(charts_dir: &Path, ticker: &str, start: usize, noise: Option<f64>) -> PathBuf {
    let name = match noise {
        None => format!("{}_{start}.png", sanitize(ticker)),
        Some(c) => format!("{}_{start}_noise{c:.3}.png", sanitize(ticker)),
    };
    charts_dir.join(name)
}

fn write_atomic(path: &Path, bytes: &[u8], unique: &str) -> std::io::Result<()> {
    if path.exists() {
        return Ok(());
    }
    let tmp = path.with_extension(format!("tmp-{unique}"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn run_task(
    config: &ExperimentConfig,
    datasets: &[LoadedDataset],
    endpoints: &[ModelEndpoint],
    task: &Task,
    model_calls: &AtomicUsize,
) -> TaskOutcome {
    let mut outcome = TaskOutcome {
        status: TaskStatus::Failed,
        error: None,
        chart: None,
        raw: None,
        prompt: None,
        record: None,
    };
    let segment = &datasets[task.dataset_idx].segments[task.seg_idx];

    let fail = |mut outcome: TaskOutcome, class: &str, detail: String| {
        outcome.status = TaskStatus::Failed;
        outcome.error = Some(format!("{class}: {detail}"));
        outcome
    };

    match &task.kind {
        TaskKind::Arima => {
            let grid = config.arima_grid();
            let fit = match arima::select_order(&segment.input, &grid) {
                Ok(fit) => fit,
                Err(e) => return fail(outcome, "arima", e.to_string()),
            };
            let forecast = arima::forecast(&fit, &segment.input, config.h);
            match build_record(config, task, segment, "arima", "arima", None, forecast, None) {
                Ok(record) => {
                    outcome.record = Some(record);
                    outcome.status = TaskStatus::Done;
                    outcome
                }
                Err(e) => fail(outcome, "metrics", e),
            }
        }
        TaskKind::Prompt {
            mode,
            endpoint_idx,
            noise,
            ..
        } => {
            let endpoint = &endpoints[*endpoint_idx];

            let image = if mode.needs_image() {
                let mut img = match chart::render_line_chart(
                    &segment.input,
                    chart::DEFAULT_WIDTH,
                    chart::DEFAULT_HEIGHT,
                ) {
                    Ok(img) => img,
                    Err(e) => return fail(outcome, "chart", e.to_string()),
                };
                img.meta.segment = format!("{}_{}", task.ticker, task.start_index);
                if let Some(coeff) = noise {
                    let spec = NoiseSpec {
                        density: *coeff,
                        seed: config.seed,
                        ..NoiseSpec::default()
                    };
                    img = match chart::inject_salt_pepper(&img, &spec) {
                        Ok(img) => img,
                        Err(e) => return fail(outcome, "chart", e.to_string()),
                    };
                }
                let file = chart_file_name(&config.charts_dir, &task.ticker, task.start_index, *noise);
                match chart::encode_png(&img) {
                    Ok(bytes) => {
                        if let Err(e) = write_atomic(&file, &bytes, &task.id) {
                            return fail(outcome, "io", e.to_string());
                        }
                        outcome.chart = Some(file.display().to_string());
                    }
                    Err(e) => return fail(outcome, "chart", e.to_string()),
                }
                Some(img)
            } else {
                None
            };

            let bundle = match prompt::build_prompt_with_decimals(
                *mode,
                segment,
                image.as_ref(),
                config.prompt_decimals,
            ) {
                Ok(b) => b,
                Err(e) => return fail(outcome, "prompt", e.to_string()),
            };

            let prompt_path = config.output_dir.join(format!("prompts/{}.txt", task.id));
            if let Err(e) = fs::write(&prompt_path, &bundle.text) {
                return fail(outcome, "io", e.to_string());
            }
            outcome.prompt = Some(prompt_path.display().to_string());

            model_calls.fetch_add(1, Ordering::SeqCst);
            let response = match client::complete(endpoint, &bundle) {
                Ok(r) => r,
                Err(e) => {
                    let class = match &e {
                        client::ClientError::Auth { .. } => "auth",
                        client::ClientError::RateLimited { .. } => "rate_limited",
                        client::ClientError::Network { .. } => "network",
                        client::ClientError::EmptyResponse => "empty_response",
                    };
                    return fail(outcome, class, e.to_string());
                }
            };

            // The record stores the path relative to the output dir so two
            // runs of the same config compare equal.
            let raw_ref = format!("raw/{}.txt", task.id);
            let raw_path = config.output_dir.join(&raw_ref);
            if let Err(e) = fs::write(&raw_path, &response.text) {
                return fail(outcome, "io", e.to_string());
            }
            outcome.raw = Some(raw_path.display().to_string());

            let forecast = match prompt::parse_forecast(&response.text, config.h) {
                Ok(f) => f,
                Err(e) => return fail(outcome, "parse", e.to_string()),
            };

            match build_record(
                config,
                task,
                segment,
                &endpoint.model_id,
                mode.as_str(),
                *noise,
                forecast.values,
                Some(raw_ref),
            ) {
                Ok(record) => {
                    outcome.record = Some(record);
                    outcome.status = TaskStatus::Done;
                    outcome
                }
                Err(e) => fail(outcome, "metrics", e),
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build_record(
    config: &ExperimentConfig,
    task: &Task,
    segment: &ForecastSegment,
    model_id: &str,
    mode: &str,
    noise: Option<f64>,
    forecast: Vec<f64>,
    raw_ref: Option<String>,
) -> Result<EvalRecord, String> {
    let out_of_range = forecast.iter().any(|v| !(0.0..=1.0).contains(v));
    let (scored_forecast, scored_truth) = match config.metrics_space {
        MetricsSpace::Normalized => (forecast.clone(), segment.truth.clone()),
        MetricsSpace::Raw => {
            let ns = NormalizedSeries {
                values: vec![],
                min: segment.scale.0,
                max: segment.scale.1,
            };
            (
                data::denormalize(&ns, &forecast),
                data::denormalize(&ns, &segment.truth),
            )
        }
    };
    let metrics = metrics::score(&scored_forecast, &scored_truth).map_err(|e| e.to_string())?;
    Ok(EvalRecord {
        v: report::SCHEMA_VERSION,
        ticker: task.ticker.clone(),
        model_id: model_id.to_string(),
        mode: mode.to_string(),
        noise,
        start_index: task.start_index,
        metrics,
        forecast,
        truth: segment.truth.clone(),
        raw_ref,
        out_of_range,
        timestamp: chrono::Utc::now().to_rfc3339(),
    })
}
