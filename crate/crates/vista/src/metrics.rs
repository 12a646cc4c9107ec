//! Forecast scoring: MSE, RMSE, MAE, and MAPE (in percent).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominator floor for MAPE so segments whose truth touches zero (the
/// window minimum maps to 0 after scaling) stay scoreable.
pub const MAPE_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("forecast length {forecast} != truth length {truth}")]
    LengthMismatch { forecast: usize, truth: usize },
    #[error("non-finite value in forecast or truth")]
    NonFinite,
    #[error("baseline must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("no records to aggregate")]
    EmptyInput,
}

/// The four regression metrics for one scored segment. `mape_guarded`
/// marks scores where the MAPE denominator hit the epsilon floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    #[serde(default)]
    pub mape_guarded: bool,
}

/// Score a forecast against ground truth.
///
/// `mape` is `100 * mean(|f - t| / max(|t|, 1e-8))`.
pub fn score(forecast: &[f64], truth: &[f64]) -> Result<MetricSet, MetricsError> {
    if forecast.len() != truth.len() || forecast.is_empty() {
        return Err(MetricsError::LengthMismatch {
            forecast: forecast.len(),
            truth: truth.len(),
        });
    }
    if forecast.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }

    let n = truth.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut ape = 0.0;
    let mut guarded = false;
    for (f, t) in forecast.iter().zip(truth) {
        let err = f - t;
        se += err * err;
        ae += err.abs();
        let denom = t.abs();
        if denom < MAPE_EPSILON {
            guarded = true;
        }
        ape += err.abs() / denom.max(MAPE_EPSILON);
    }

    let mse = se / n;
    Ok(MetricSet {
        mse,
        rmse: mse.sqrt(),
        mae: ae / n,
        mape: 100.0 * ape / n,
        mape_guarded: guarded,
    })
}

/// Percentage reduction from a baseline metric to a treated one:
/// `100 * (baseline - treated) / baseline`.
pub fn improvement_pct(baseline: f64, treated: f64) -> Result<f64, MetricsError> {
    if !(baseline > 0.0) {
        return Err(MetricsError::ZeroBaseline(baseline));
    }
    Ok(100.0 * (baseline - treated) / baseline)
}
