//! Price series loading, filtering, normalization, differencing, and windowing.
//!
//! The CSV dialect is the common daily-quote export: UTF-8, comma-separated,
//! a header row containing at least `Date` (ISO-8601) and `Close` (decimal).
//! Rows with a missing or non-numeric close are dropped and counted; a file
//! whose drop rate exceeds 10% is rejected as corrupt.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::NaiveDate;
use thiserror::Error;

/// Fraction of malformed rows above which a file is rejected.
const CORRUPT_DROP_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("header is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("no usable rows for {ticker} within [{from}, {to})")]
    EmptyRange {
        ticker: String,
        from: NaiveDate,
        to: NaiveDate,
    },
    #[error("{dropped} of {total} rows malformed, above the 10% threshold")]
    CorruptFile { dropped: usize, total: usize },
    #[error("series is constant (max == min)")]
    ConstantSeries,
    #[error("series too short: have {have}, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("non-finite value in series")]
    NonFinite,
    #[error("invalid window parameters: T={t}, h={h}, stride={stride}")]
    InvalidWindow { t: usize, h: usize, stride: usize },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("network error after {attempts} attempts: {detail}")]
    Network { attempts: u32, detail: String },
    #[error("http status {status} from quote endpoint")]
    HttpStatus { status: u16 },
}

/// Dated close-price sequence for one ticker.
///
/// Invariants: dates strictly increasing, closes non-empty, every close
/// finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub ticker: String,
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
    /// Rows dropped while loading (missing/non-numeric close, bad date,
    /// duplicate date).
    pub dropped_rows: usize,
}

impl PriceSeries {
    pub fn new(
        ticker: impl Into<String>,
        dates: Vec<NaiveDate>,
        closes: Vec<f64>,
        dropped_rows: usize,
    ) -> Result<Self, DataError> {
        if dates.is_empty() || dates.len() != closes.len() {
            return Err(DataError::TooShort {
                have: closes.len(),
                need: 1,
            });
        }
        if closes.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(DataError::NonFinite);
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::NonFinite);
        }
        Ok(Self {
            ticker: ticker.into(),
            dates,
            closes,
            dropped_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }
}

/// Min-max scaled view of a series, keeping the original-scale bounds so
/// values can be mapped back.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

/// One (input window, ground-truth horizon) evaluation unit in normalized
/// space.
///
/// The scale is fitted on the input window only, so truth values may fall
/// outside [0, 1]; that is intentional (no look-ahead leakage).
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSegment {
    pub input: Vec<f64>,
    pub truth: Vec<f64>,
    pub start_index: usize,
    /// (min, max) of the original-scale input window.
    pub scale: (f64, f64),
}

/// Output of [`make_segments`]: the usable segments plus how many windows
/// were skipped because their input was constant.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub segments: Vec<ForecastSegment>,
    pub constant_skipped: usize,
}

/// Whether the min-max scale is fitted per input window or once over the
/// whole series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    PerSegment,
    WholeSeries,
}

impl Default for NormalizationScope {
    fn default() -> Self {
        NormalizationScope::PerSegment
    }
}

/// Load a date-filtered close-price series from a CSV file.
///
/// Keeps rows with `date_from <= date < date_to`, sorted ascending by date.
pub fn load_csv(
    path: impl AsRef<Path>,
    ticker: &str,
    date_from: NaiveDate,
    date_to: NaiveDate,
) -> Result<PriceSeries, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(file, ticker, date_from, date_to)
}

/// Parse the quote CSV dialect from any reader. Shared by [`load_csv`] and
/// [`RemoteSource::fetch`].
pub fn parse_csv(
    reader: impl Read,
    ticker: &str,
    date_from: NaiveDate,
    date_to: NaiveDate,
) -> Result<PriceSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);

    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or(DataError::MissingColumn(name))
    };
    let date_idx = col("Date")?;
    let close_idx = col("Close")?;

    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record?;
        let date = record
            .get(date_idx)
            .and_then(|s| NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok());
        let Some(date) = date else {
            dropped += 1;
            continue;
        };
        if date < date_from || date >= date_to {
            continue;
        }
        let close = record
            .get(close_idx)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|c| c.is_finite() && *c > 0.0);
        match close {
            Some(c) => rows.push((date, c)),
            None => dropped += 1,
        }
    }

    rows.sort_by_key(|(d, _)| *d);
    let before = rows.len();
    rows.dedup_by_key(|(d, _)| *d);
    dropped += before - rows.len();

    let total = rows.len() + dropped;
    if total == 0 {
        return Err(DataError::EmptyRange {
            ticker: ticker.to_string(),
            from: date_from,
            to: date_to,
        });
    }
    if dropped as f64 / total as f64 > CORRUPT_DROP_THRESHOLD {
        return Err(DataError::CorruptFile { dropped, total });
    }
    if rows.is_empty() {
        return Err(DataError::EmptyRange {
            ticker: ticker.to_string(),
            from: date_from,
            to: date_to,
        });
    }

    let (dates, closes) = rows.into_iter().unzip();
    PriceSeries::new(ticker, dates, closes, dropped)
}

/// Convenience client for a CSV-over-HTTP quote endpoint with a disk cache.
///
/// Responses are cached as raw CSV under
/// `<cache_dir>/<ticker>_<from>_<to>.csv`; a cache hit issues no request.
pub struct RemoteSource {
    endpoint: String,
    cache_dir: PathBuf,
    client: reqwest::blocking::Client,
    backoff_base: Duration,
    max_retries: u32,
    // Single writer across cache keys; reads outside the lock are fine
    // because cache files are written via rename.
    write_lock: Mutex<()>,
}

impl RemoteSource {
    pub fn new(endpoint: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint: endpoint.into(),
            cache_dir: cache_dir.into(),
            client: reqwest::blocking::Client::new(),
            backoff_base: Duration::from_secs(1),
            max_retries: 3,
            write_lock: Mutex::new(()),
        }
    }

    /// Override the first retry delay (doubles on each subsequent retry).
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn cache_path(&self, ticker: &str, from: NaiveDate, to: NaiveDate) -> PathBuf {
        self.cache_dir.join(format!("{ticker}_{from}_{to}.csv"))
    }

    /// Fetch a close-price series, serving from the disk cache when possible.
    pub fn fetch(
        &self,
        ticker: &str,
        date_from: NaiveDate,
        date_to: NaiveDate,
    ) -> Result<PriceSeries, DataError> {
        let cache = self.cache_path(ticker, date_from, date_to);
        if let Ok(body) = std::fs::read_to_string(&cache) {
            return parse_csv(body.as_bytes(), ticker, date_from, date_to);
        }

        let url = format!(
            "{}?ticker={}&from={}&to={}",
            self.endpoint, ticker, date_from, date_to
        );
        let body = self.get_with_retries(&url)?;

        {
            let _guard = self.write_lock.lock().unwrap();
            if !cache.exists() {
                if let Some(parent) = cache.parent() {
                    std::fs::create_dir_all(parent).ok();
                }
                let tmp = cache.with_extension("csv.tmp");
                if std::fs::write(&tmp, &body).is_ok() {
                    std::fs::rename(&tmp, &cache).ok();
                }
            }
        }

        parse_csv(body.as_bytes(), ticker, date_from, date_to)
    }

    fn get_with_retries(&self, url: &str) -> Result<String, DataError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.client.get(url).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if !status.is_success() {
                        return Err(DataError::HttpStatus {
                            status: status.as_u16(),
                        });
                    }
                    return resp.text().map_err(|e| DataError::Network {
                        attempts,
                        detail: e.to_string(),
                    });
                }
                Err(e) => {
                    if attempts > self.max_retries {
                        return Err(DataError::Network {
                            attempts,
                            detail: e.to_string(),
                        });
                    }
                    let delay = self.backoff_base * 2u32.pow(attempts - 1);
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

/// Min-max scale a series onto [0, 1]: `(x - min) / (max - min)`.
///
/// The minimum maps to exactly 0 and the maximum to exactly 1.
pub fn minmax_normalize(values: &[f64]) -> Result<NormalizedSeries, DataError> {
    if values.len() < 2 {
        return Err(DataError::TooShort {
            have: values.len(),
            need: 2,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinite);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(DataError::ConstantSeries);
    }
    let span = max - min;
    let scaled = values.iter().map(|v| (v - min) / span).collect();
    Ok(NormalizedSeries {
        values: scaled,
        min,
        max,
    })
}

/// Map normalized values back to the original scale: `v * (max - min) + min`.
pub fn denormalize(ns: &NormalizedSeries, values: &[f64]) -> Vec<f64> {
    let span = ns.max - ns.min;
    values.iter().map(|v| v * span + ns.min).collect()
}

/// First-order backward difference: `out[i] = values[i+1] - values[i]`.
pub fn backward_difference(values: &[f64]) -> Result<Vec<f64>, DataError> {
    if values.len() < 2 {
        return Err(DataError::TooShort {
            have: values.len(),
            need: 2,
        });
    }
    Ok(values.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Slice a series into evaluation segments of `t` input values and `h`
/// ground-truth values, advancing by `stride`.
///
/// With [`NormalizationScope::PerSegment`] each segment is scaled over its
/// own input window and the ground truth shares that scale; constant input
/// windows are skipped and counted. With [`NormalizationScope::WholeSeries`]
/// one scale covers the whole series.
pub fn make_segments(
    series: &PriceSeries,
    t: usize,
    h: usize,
    stride: usize,
    scope: NormalizationScope,
) -> Result<SegmentSet, DataError> {
    if t < 2 || h < 1 || stride < 1 {
        return Err(DataError::InvalidWindow { t, h, stride });
    }
    let n = series.len();
    if n < t + h {
        return Err(DataError::TooShort { have: n, need: t + h });
    }

    let whole = match scope {
        NormalizationScope::WholeSeries => Some(minmax_normalize(&series.closes)?),
        NormalizationScope::PerSegment => None,
    };

    let mut segments = Vec::new();
    let mut constant_skipped = 0usize;
    let mut start = 0usize;
    while start + t + h <= n {
        match &whole {
            Some(ns) => {
                segments.push(ForecastSegment {
                    input: ns.values[start..start + t].to_vec(),
                    truth: ns.values[start + t..start + t + h].to_vec(),
                    start_index: start,
                    scale: (ns.min, ns.max),
                });
            }
            None => {
                let window = &series.closes[start..start + t];
                match minmax_normalize(window) {
                    Ok(ns) => {
                        let span = ns.max - ns.min;
                        let truth = series.closes[start + t..start + t + h]
                            .iter()
                            .map(|v| (v - ns.min) / span)
                            .collect();
                        segments.push(ForecastSegment {
                            input: ns.values,
                            truth,
                            start_index: start,
                            scale: (ns.min, ns.max),
                        });
                    }
                    Err(DataError::ConstantSeries) => constant_skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        start += stride;
    }

    Ok(SegmentSet {
        segments,
        constant_skipped,
    })
}
