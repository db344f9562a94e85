//! Completion backends: the HTTP client for a remote completion service and
//! the retry loop shared by all backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

/// Environment variable naming the completion endpoint URL.
pub const ENDPOINT_ENV: &str = "GEN_ENDPOINT";
/// Environment variable holding the bearer token, if any.
pub const API_KEY_ENV: &str = "GEN_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    /// Network-level failure; retryable.
    #[error("transport error: {0}")]
    Transport(String),
    /// Non-2xx response; retryable.
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    /// Response arrived but did not match the wire contract; not retryable.
    #[error("bad response: {0}")]
    BadResponse(String),
    /// Backend misconfiguration; not retryable.
    #[error("backend config: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Status { .. })
    }
}

/// One completion call: a rendered prompt plus sampling parameters. The
/// source document rides along so offline backends can derive deterministic
/// output from it; remote backends ignore it.
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub temperature: f64,
    pub max_tokens: usize,
    pub n: usize,
    pub doc: &'a Document,
    pub seed: u64,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, BackendError>;
    fn name(&self) -> &str;
}

/// Bounded exponential backoff for transient backend errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 200,
            max_delay_ms: 5_000,
        }
    }
}

/// Calls the backend, retrying retryable errors with exponential backoff
/// until `max_attempts` is exhausted.
pub fn complete_with_retry(
    backend: &dyn CompletionBackend,
    request: &CompletionRequest,
    policy: &RetryPolicy,
) -> Result<Vec<String>, BackendError> {
    let mut delay_ms = policy.base_delay_ms;
    let mut attempt = 0u32;
    loop {
        match backend.complete(request) {
            Ok(completions) => return Ok(completions),
            Err(e) if e.is_retryable() && attempt + 1 < policy.max_attempts => {
                log::debug!(
                    "backend {} attempt {}/{} failed: {e}; retrying in {delay_ms} ms",
                    backend.name(),
                    attempt + 1,
                    policy.max_attempts
                );
                if delay_ms > 0 {
                    std::thread::sleep(Duration::from_millis(delay_ms));
                }
                delay_ms = (delay_ms.saturating_mul(2)).min(policy.max_delay_ms).max(1);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
    n: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    completions: Vec<String>,
}

/// HTTP client for a completion service.
///
/// Wire contract: POST with JSON body
/// `{"prompt": string, "temperature": number, "max_tokens": integer, "n": integer}`,
/// response `{"completions": [string, ...]}`. Non-2xx responses are treated
/// as retryable.
pub struct RemoteBackend {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(endpoint: &str, api_key: Option<&str>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            api_key: api_key.map(str::to_string),
            client,
        })
    }

    /// Builds a backend from `GEN_ENDPOINT` and optional `GEN_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| BackendError::Config(format!("{ENDPOINT_ENV} is not set")))?;
        let api_key = std::env::var(API_KEY_ENV).ok();
        Self::new(&endpoint, api_key.as_deref())
    }
}

impl CompletionBackend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        let body = WireRequest {
            prompt: request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            n: request.n,
        };
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: body.chars().take(200).collect(),
            });
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| BackendError::BadResponse(e.to_string()))?;
        Ok(parsed.completions)
    }

    fn name(&self) -> &str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct CountingBackend {
        fail_first: u32,
        calls: std::sync::atomic::AtomicU32,
    }

    impl CompletionBackend for CountingBackend {
        fn complete(&self, _request: &CompletionRequest) -> Result<Vec<String>, BackendError> {
            let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if n < self.fail_first {
                Err(BackendError::Status {
                    status: 503,
                    body: "unavailable".into(),
                })
            } else {
                Ok(vec!["ok".into()])
            }
        }
        fn name(&self) -> &str {
            "counting"
        }
    }

    fn request(doc: &Document) -> CompletionRequest<'_> {
        CompletionRequest {
            prompt: "p",
            temperature: 0.0,
            max_tokens: 8,
            n: 1,
            doc,
            seed: 0,
        }
    }

    #[test]
    fn retry_succeeds_within_budget() {
        let doc = Document {
            id: "d".into(),
            title: String::new(),
            text: "t".into(),
        };
        let backend = CountingBackend {
            fail_first: 2,
            calls: Default::default(),
        };
        let policy = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 0,
            max_delay_ms: 0,
        };
        let got = complete_with_retry(&backend, &request(&doc), &policy).unwrap();
        assert_eq!(got, vec!["ok".to_string()]);
    }

    #[test]
    fn retry_exhaustion_returns_last_error() {
        let doc = Document {
            id: "d".into(),
            title: String::new(),
            text: "t".into(),
        };
        let backend = CountingBackend {
            fail_first: 10,
            calls: Default::default(),
        };
        let policy = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 0,
            max_delay_ms: 0,
        };
        let err = complete_with_retry(&backend, &request(&doc), &policy).unwrap_err();
        assert!(matches!(err, BackendError::Status { status: 503, .. }));
        assert_eq!(backend.calls.load(std::sync::atomic::Ordering::SeqCst), 3);
    }

    #[test]
    fn non_retryable_errors_fail_fast() {
        struct BadBackend;
        impl CompletionBackend for BadBackend {
            fn complete(&self, _r: &CompletionRequest) -> Result<Vec<String>, BackendError> {
                Err(BackendError::BadResponse("not json".into()))
            }
            fn name(&self) -> &str {
                "bad"
            }
        }
        let doc = Document {
            id: "d".into(),
            title: String::new(),
            text: "t".into(),
        };
        let policy = RetryPolicy::default();
        let err = complete_with_retry(&BadBackend, &request(&doc), &policy).unwrap_err();
        assert!(matches!(err, BackendError::BadResponse(_)));
    }
}
