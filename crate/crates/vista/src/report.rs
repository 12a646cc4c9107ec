//! Results store (JSONL of per-segment records), aggregation, and report
//! artifacts.
//!
//! One [`EvalRecord`] per scored segment goes into `records.jsonl` with a
//! schema-version field. Reports aggregate per-group metric means into
//! byte-deterministic markdown/csv/json files plus the bar data for the
//! baseline-comparison figure.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricSet, MetricsError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to report on")]
    EmptyInput,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// One scored segment: provenance plus the four metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub v: u32,
    pub ticker: String,
    pub model_id: String,
    /// Prompt mode (`text_only`, `multimodal`, `multimodal_cot`) or `arima`.
    pub mode: String,
    pub noise: Option<f64>,
    pub start_index: usize,
    pub metrics: MetricSet,
    pub forecast: Vec<f64>,
    pub truth: Vec<f64>,
    /// Path of the persisted raw model response, when there is one.
    pub raw_ref: Option<String>,
    /// True when any forecast value fell outside [0, 1] in normalized space.
    pub out_of_range: bool,
    pub timestamp: String,
}

impl EvalRecord {
    /// Deduplication key: one record per (segment, mode, endpoint, noise).
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}",
            self.ticker,
            self.start_index,
            self.mode,
            self.model_id,
            noise_label(self.noise)
        )
    }

    /// The record minus volatile fields (timestamp), for run-to-run
    /// determinism comparisons.
    pub fn projected(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("record serializes");
        value.as_object_mut().unwrap().remove("timestamp");
        value
    }
}

pub fn noise_label(noise: Option<f64>) -> String {
    match noise {
        None => "clean".to_string(),
        Some(c) => format!("{c:.3}"),
    }
}

/// Append one record as a JSONL line.
pub fn append_record(w: &mut impl std::io::Write, record: &EvalRecord) -> Result<(), ReportError> {
    let line = serde_json::to_string(record)?;
    writeln!(w, "{line}").map_err(|source| ReportError::Io {
        path: "<records>".into(),
        source,
    })
}

/// Read a records file, skipping unparseable lines (e.g. a truncated final
/// line after a crash). Returns the records and the number of bad lines.
pub fn read_records(path: impl AsRef<Path>) -> Result<(Vec<EvalRecord>, usize), ReportError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    let mut bad = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalRecord>(line) {
            Ok(r) if r.v == SCHEMA_VERSION => records.push(r),
            _ => bad += 1,
        }
    }
    Ok((records, bad))
}

/// Grouping axes for [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupField {
    Ticker,
    ModelId,
    Mode,
    Noise,
}

impl fmt::Display for GroupField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupField::Ticker => "ticker",
            GroupField::ModelId => "model",
            GroupField::Mode => "mode",
            GroupField::Noise => "noise",
        })
    }
}

fn field_value(record: &EvalRecord, field: GroupField) -> String {
    match field {
        GroupField::Ticker => record.ticker.clone(),
        GroupField::ModelId => record.model_id.clone(),
        GroupField::Mode => record.mode.clone(),
        GroupField::Noise => noise_label(record.noise),
    }
}

/// One aggregated row: group key, segment count, and metric means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggRow {
    pub key: Vec<String>,
    pub n_segments: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggTable {
    pub fields: Vec<GroupField>,
    pub rows: Vec<AggRow>,
}

/// Arithmetic mean of every metric per group, rows in lexicographic key
/// order.
pub fn aggregate(records: &[EvalRecord], fields: &[GroupField]) -> Result<AggTable, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut groups: std::collections::BTreeMap<Vec<String>, Vec<&MetricSet>> =
        std::collections::BTreeMap::new();
    for r in records {
        let key: Vec<String> = fields.iter().map(|f| field_value(r, *f)).collect();
        groups.entry(key).or_default().push(&r.metrics);
    }
    let rows = groups
        .into_iter()
        .map(|(key, ms)| {
            let n = ms.len() as f64;
            AggRow {
                key,
                n_segments: ms.len(),
                mse: ms.iter().map(|m| m.mse).sum::<f64>() / n,
                rmse: ms.iter().map(|m| m.rmse).sum::<f64>() / n,
                mae: ms.iter().map(|m| m.mae).sum::<f64>() / n,
                mape: ms.iter().map(|m| m.mape).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(AggTable {
        fields: fields.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// Render an aggregate table in the requested format.
pub fn render_table(table: &AggTable, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            for f in &table.fields {
                out.push_str(&f.to_string());
                out.push(',');
            }
            out.push_str("n_segments,mse,rmse,mae,mape\n");
            for row in &table.rows {
                for k in &row.key {
                    out.push_str(k);
                    out.push(',');
                }
                out.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6}\n",
                    row.n_segments, row.mse, row.rmse, row.mae, row.mape
                ));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push('|');
            for f in &table.fields {
                out.push_str(&format!(" {f} |"));
            }
            out.push_str(" n | MSE | RMSE | MAE | MAPE |\n|");
            for _ in 0..table.fields.len() + 5 {
                out.push_str("---|");
            }
            out.push('\n');
            for row in &table.rows {
                out.push('|');
                for k in &row.key {
                    out.push_str(&format!(" {k} |"));
                }
                out.push_str(&format!(
                    " {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                    row.n_segments, row.mse, row.rmse, row.mae, row.mape
                ));
            }
            out
        }
        ReportFormat::Json => {
            serde_json::to_string_pretty(&table.rows).expect("rows serialize") + "\n"
        }
    }
}

/// Paper-style pivot: one row per (model, mode, noise) group, one metric
/// quadruple per ticker.
pub fn pivot_markdown(records: &[EvalRecord]) -> Result<String, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut tickers: Vec<String> = records.iter().map(|r| r.ticker.clone()).collect();
    tickers.sort();
    tickers.dedup();

    let full = aggregate(
        records,
        &[
            GroupField::ModelId,
            GroupField::Mode,
            GroupField::Noise,
            GroupField::Ticker,
        ],
    )?;
    let mut by_group: std::collections::BTreeMap<Vec<String>, Vec<&AggRow>> =
        std::collections::BTreeMap::new();
    for row in &full.rows {
        by_group.entry(row.key[..3].to_vec()).or_default().push(row);
    }

    let mut out = String::from("| Model | Mode | Noise |");
    for t in &tickers {
        out.push_str(&format!(" {t} MSE | {t} RMSE | {t} MAE | {t} MAPE |"));
    }
    out.push_str("\n|");
    for _ in 0..3 + tickers.len() * 4 {
        out.push_str("---|");
    }
    out.push('\n');

    for (key, rows) in by_group {
        out.push_str(&format!("| {} | {} | {} |", key[0], key[1], key[2]));
        for t in &tickers {
            match rows.iter().find(|r| &r.key[3] == t) {
                Some(r) => out.push_str(&format!(
                    " {:.4} | {:.4} | {:.4} | {:.4} |",
                    r.mse, r.rmse, r.mae, r.mape
                )),
                None => out.push_str(" - | - | - | - |"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// (method, mean MSE) pairs for the baseline-comparison bar figure, from
/// clean (noise-free) records only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub method: String,
    pub mean_mse: f64,
    pub n_segments: usize,
}

pub fn comparison_data(records: &[EvalRecord]) -> Result<Vec<ComparisonEntry>, MetricsError> {
    let clean: Vec<EvalRecord> = records.iter().filter(|r| r.noise.is_none()).cloned().collect();
    if clean.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let table = aggregate(&clean, &[GroupField::ModelId, GroupField::Mode])?;
    Ok(table
        .rows
        .into_iter()
        .map(|row| ComparisonEntry {
            method: if row.key[1] == "arima" {
                "arima".to_string()
            } else {
                format!("{} ({})", row.key[0], row.key[1])
            },
            mean_mse: row.mse,
            n_segments: row.n_segments,
        })
        .collect())
}

/// Write `report.md`, `report.csv`, `report.json`, and
/// `arima_comparison.json` under `dir`. Returns the written paths.
pub fn write_reports(dir: impl AsRef<Path>, records: &[EvalRecord]) -> Result<Vec<PathBuf>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;

    let flat_fields = [
        GroupField::ModelId,
        GroupField::Mode,
        GroupField::Noise,
        GroupField::Ticker,
    ];
    let flat = aggregate(records, &flat_fields).map_err(|_| ReportError::EmptyInput)?;

    let mut written = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<(), ReportError> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(contents.as_bytes()).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
        Ok(())
    };

    emit(
        "report.md",
        pivot_markdown(records).map_err(|_| ReportError::EmptyInput)?,
    )?;
    emit("report.csv", render_table(&flat, ReportFormat::Csv))?;
    emit("report.json", render_table(&flat, ReportFormat::Json))?;
    let comparison = comparison_data(records).map_err(|_| ReportError::EmptyInput)?;
    emit(
        "arima_comparison.json",
        serde_json::to_string_pretty(&comparison)? + "\n",
    )?;

    Ok(written)
}
