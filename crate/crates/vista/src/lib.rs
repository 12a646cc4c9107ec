//! Training-free benchmark harness for multimodal stock forecasting.
//!
//! Windowed close-price data goes in; text-only, multimodal, and
//! chain-of-thought prompts go out to any chat-completion endpoint (or a
//! deterministic in-process mock); parsed forecasts are scored against
//! ground truth and an ARIMA baseline. A seeded chart-corruption ablation
//! and a Stockwell time-frequency analysis round out the pipeline.
//!
//! Modules follow the pipeline order:
//!
//! - [`data`]: CSV/remote ingestion, min-max scaling, windowing.
//! - [`chart`]: deterministic line-chart rasterization and salt-and-pepper
//!   corruption.
//! - [`prompt`]: the three prompt templates and forecast parsing.
//! - [`client`]: OpenAI-compatible chat completions plus offline mocks.
//! - [`arima`]: CSS-estimated ARIMA baseline with AIC order selection.
//! - [`metrics`] / [`report`]: scoring, aggregation, report artifacts.
//! - [`stockwell`]: discrete S-transform and heatmap export.
//! - [`runner`]: config-driven orchestration with resumable manifests.

pub mod arima;
pub mod chart;
pub mod client;
pub mod data;
pub mod metrics;
pub mod prompt;
pub mod report;
pub mod runner;
pub mod stockwell;
