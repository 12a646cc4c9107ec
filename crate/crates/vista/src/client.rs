//! Chat-completion client: one OpenAI-compatible wire protocol plus
//! deterministic in-process mocks for offline runs.
//!
//! Multimodal bundles embed the chart PNG base64 in an `image_url` content
//! part next to the text part. Transient failures (timeouts, 5xx, 429) are
//! retried with exponential backoff; auth failures are not.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use base64::Engine;
use regex::Regex;
use serde_json::{json, Value};
use thiserror::Error;

use crate::prompt::{first_bracket_numbers, format_values, PromptBundle};

/// Environment variable holding the API key for HTTP endpoints.
pub const API_KEY_ENV: &str = "VISTA_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication rejected (status {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("network error after {attempts} attempts: {detail}")]
    Network { attempts: u32, detail: String },
    #[error("model returned an empty response")]
    EmptyResponse,
}

/// Scripted behavior for the in-process mock endpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// Reply with the final prompt value repeated h times.
    LastValue,
    /// Reply with the least-squares line of the prompt values extrapolated
    /// h steps.
    LinearTrend,
    /// Reply with a fixed string.
    Echo(String),
    /// Every call fails with a network error.
    Fail,
}

impl MockBehavior {
    /// Stable model-id label for this behavior.
    pub fn label(&self) -> String {
        match self {
            MockBehavior::LastValue => "mock:last_value".into(),
            MockBehavior::LinearTrend => "mock:linear_trend".into(),
            MockBehavior::Echo(_) => "mock:echo".into(),
            MockBehavior::Fail => "mock:fail".into(),
        }
    }

    /// The reply text for a parsed (values, horizon) pair.
    ///
    /// `LastValue` formats at 4 decimals to mirror the prompt's own
    /// formatting; `LinearTrend` keeps 12 decimals so the extrapolation is
    /// testable against the closed-form line fit.
    pub fn reply(&self, values: &[f64], h: usize) -> Option<String> {
        match self {
            MockBehavior::LastValue => {
                let last = *values.last()?;
                Some(format_values(&vec![last; h]))
            }
            MockBehavior::LinearTrend => {
                let n = values.len();
                if n < 2 {
                    return None;
                }
                // Least squares of v on index 0..n-1.
                let nx = n as f64;
                let mean_x = (nx - 1.0) / 2.0;
                let mean_y = values.iter().sum::<f64>() / nx;
                let mut sxx = 0.0;
                let mut sxy = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let dx = i as f64 - mean_x;
                    sxx += dx * dx;
                    sxy += dx * (v - mean_y);
                }
                let slope = sxy / sxx;
                let intercept = mean_y - slope * mean_x;
                let preds: Vec<String> = (0..h)
                    .map(|k| {
                        let x = (n + k) as f64;
                        format!("{:.12}", intercept + slope * x)
                    })
                    .collect();
                Some(format!("[{}]", preds.join(", ")))
            }
            MockBehavior::Echo(text) => Some(text.clone()),
            MockBehavior::Fail => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Transport {
    Http {
        base_url: String,
        api_key: Option<String>,
    },
    Mock {
        behavior: MockBehavior,
        calls: Arc<AtomicUsize>,
    },
}

/// A chat-completion endpoint (HTTP or in-process mock) plus decoding
/// parameters. The default temperature is 0.
#[derive(Debug, Clone)]
pub struct ModelEndpoint {
    transport: Transport,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl ModelEndpoint {
    /// HTTP endpoint; the API key is read from `VISTA_API_KEY`.
    pub fn http(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            transport: Transport::Http {
                base_url: base_url.into(),
                api_key: std::env::var(API_KEY_ENV).ok(),
            },
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.transport, Transport::Mock { .. })
    }

    /// Number of calls the in-process mock has served.
    pub fn mock_calls(&self) -> Option<usize> {
        match &self.transport {
            Transport::Mock { calls, .. } => Some(calls.load(Ordering::SeqCst)),
            Transport::Http { .. } => None,
        }
    }
}

/// Build a deterministic in-process endpoint around `behavior`.
pub fn mock_model(behavior: MockBehavior) -> ModelEndpoint {
    let model_id = behavior.label();
    ModelEndpoint {
        transport: Transport::Mock {
            behavior,
            calls: Arc::new(AtomicUsize::new(0)),
        },
        model_id,
        temperature: 0.0,
        max_tokens: 512,
        timeout: Duration::from_secs(120),
        max_retries: 3,
        backoff_base: Duration::from_secs(1),
    }
}

/// Assistant text returned for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub endpoint: String,
}

fn horizon_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"next (\d+)").expect("static regex"))
}

/// Send a prompt to an endpoint and return the assistant text verbatim.
pub fn complete(endpoint: &ModelEndpoint, bundle: &PromptBundle) -> Result<ModelResponse, ClientError> {
    let started = Instant::now();
    match &endpoint.transport {
        Transport::Mock { behavior, calls } => {
            calls.fetch_add(1, Ordering::SeqCst);
            if matches!(behavior, MockBehavior::Fail) {
                return Err(ClientError::Network {
                    attempts: 1,
                    detail: "mock endpoint configured to fail".into(),
                });
            }
            let values = first_bracket_numbers(&bundle.text).unwrap_or_default();
            let h = horizon_regex()
                .captures(&bundle.text)
                .and_then(|c| c[1].parse::<usize>().ok())
                .unwrap_or(1);
            let text = behavior
                .reply(&values, h)
                .filter(|t| !t.is_empty())
                .ok_or(ClientError::EmptyResponse)?;
            Ok(ModelResponse {
                text,
                latency_ms: started.elapsed().as_millis() as u64,
                attempt_count: 1,
                endpoint: endpoint.model_id.clone(),
            })
        }
        Transport::Http { base_url, api_key } => {
            http_complete(endpoint, base_url, api_key.as_deref(), bundle, started)
        }
    }
}

/// JSON body for the chat-completions request; exposed for request-shape
/// assertions in tests.
pub fn request_body(endpoint: &ModelEndpoint, bundle: &PromptBundle) -> Value {
    let mut content = vec![json!({"type": "text", "text": bundle.text})];
    if let Some(png) = &bundle.image {
        let b64 = base64::engine::general_purpose::STANDARD.encode(png);
        content.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:image/png;base64,{b64}")}
        }));
    }
    json!({
        "model": endpoint.model_id,
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
        "messages": [{"role": "user", "content": content}],
    })
}

fn http_complete(
    endpoint: &ModelEndpoint,
    base_url: &str,
    api_key: Option<&str>,
    bundle: &PromptBundle,
    started: Instant,
) -> Result<ModelResponse, ClientError> {
    let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
    let body = request_body(endpoint, bundle);
    let client = reqwest::blocking::Client::builder()
        .timeout(endpoint.timeout)
        .build()
        .map_err(|e| ClientError::Network {
            attempts: 0,
            detail: e.to_string(),
        })?;

    let mut attempts = 0u32;
    let mut rate_limited = false;
    loop {
        attempts += 1;
        let mut req = client.post(&url).json(&body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let outcome = req.send();

        let retryable_detail = match outcome {
            Ok(resp) => {
                let status = resp.status().as_u16();
                match status {
                    200..=299 => {
                        let value: Value = resp.json().map_err(|e| ClientError::Network {
                            attempts,
                            detail: format!("bad response body: {e}"),
                        })?;
                        let text = value
                            .pointer("/choices/0/message/content")
                            .and_then(Value::as_str)
                            .unwrap_or_default()
                            .to_string();
                        if text.is_empty() {
                            return Err(ClientError::EmptyResponse);
                        }
                        return Ok(ModelResponse {
                            text,
                            latency_ms: started.elapsed().as_millis() as u64,
                            attempt_count: attempts,
                            endpoint: endpoint.model_id.clone(),
                        });
                    }
                    401 | 403 => return Err(ClientError::Auth { status }),
                    429 => {
                        rate_limited = true;
                        format!("http 429")
                    }
                    500..=599 => format!("http {status}"),
                    other => {
                        return Err(ClientError::Network {
                            attempts,
                            detail: format!("http {other}"),
                        })
                    }
                }
            }
            Err(e) => e.to_string(),
        };

        if attempts > endpoint.max_retries {
            return Err(if rate_limited {
                ClientError::RateLimited { attempts }
            } else {
                ClientError::Network {
                    attempts,
                    detail: retryable_detail,
                }
            });
        }
        // Exponential backoff: base, 2*base, 4*base, ...
        let delay = endpoint.backoff_base * 2u32.pow(attempts - 1);
        std::thread::sleep(delay);
    }
}
