//! The paper-style markdown pivot against a reviewed golden file.

use vista::metrics::MetricSet;
use vista::report::{pivot_markdown, EvalRecord, SCHEMA_VERSION};

fn record(ticker: &str, model: &str, mode: &str, start: usize, mse: f64) -> EvalRecord {
    EvalRecord {
        v: SCHEMA_VERSION,
        ticker: ticker.into(),
        model_id: model.into(),
        mode: mode.into(),
        noise: None,
        start_index: start,
        metrics: MetricSet {
            mse,
            rmse: mse.sqrt(),
            mae: mse / 2.0,
            mape: mse * 100.0,
            mape_guarded: false,
        },
        forecast: vec![0.5; 2],
        truth: vec![0.5; 2],
        raw_ref: None,
        out_of_range: false,
        timestamp: "2026-01-01T00:00:00Z".into(),
    }
}

#[test]
fn pivot_matches_the_reviewed_golden() {
    let records = vec![
        record("AC.PA", "mock:last_value", "text_only", 0, 0.02),
        record("AC.PA", "mock:last_value", "text_only", 5, 0.04),
        record("CAP.PA", "mock:last_value", "text_only", 0, 0.01),
        record("AC.PA", "arima", "arima", 0, 0.05),
    ];
    let rendered = pivot_markdown(&records).unwrap();
    let golden = include_str!("fixtures/report_golden.md");
    assert_eq!(rendered, golden);
}
