//! Chat-completion client with a record/replay response cache.

pub mod cache;
pub mod stub;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use normalign_core::corpus::RoT;
use normalign_core::prompting::{
    cache_key, render_prompt, InferenceParams, PromptError, PromptVariant, RenderedPrompt,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use cache::{CacheError, CacheRecord, ResponseCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Always call the endpoint; the cache is neither read nor written.
    Live,
    /// Serve from the cache when possible, otherwise call and store.
    Record,
    /// Serve only from the cache; a miss is an error.
    Replay,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode {other:?} (expected live, record or replay)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub cache_key: String,
    pub rot_id: String,
    pub model_id: String,
    pub variant: PromptVariant,
    /// Exactly as returned by the endpoint.
    pub text: String,
    /// RFC 3339, UTC.
    pub retrieved_at: String,
    pub from_cache: bool,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("replay miss: no cached response for key {0}")]
    ReplayMiss(String),
    #[error("{mode} mode needs a cache directory")]
    NoCache { mode: Mode },
    #[error("environment variable {var} (API key for model {model}) is not set")]
    MissingApiKey { var: String, model: String },
    #[error("HTTP {status} from {url}: {body}")]
    Http { url: String, status: u16, body: String },
    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("unexpected response body from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

impl GatewayError {
    /// Whether the failure is worth another attempt.
    fn retryable(&self) -> bool {
        match self {
            GatewayError::Transport { .. } => true,
            GatewayError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug)]
pub struct ItemFailure {
    pub rot_id: String,
    pub error: GatewayError,
}

/// Result of a batch: successes in input order, then the failures.
#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub responses: Vec<RawResponse>,
    pub failures: Vec<ItemFailure>,
    /// RoTs never attempted because the batch stopped early.
    pub skipped: Vec<String>,
}

impl BatchOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.skipped.is_empty()
    }

    pub fn failed_ids(&self) -> Vec<&str> {
        self.failures.iter().map(|f| f.rot_id.as_str()).collect()
    }
}

/// The JSON body sent for one prompt. `extra` fields are merged in last.
pub fn request_body(prompt: &str, params: &InferenceParams) -> Value {
    let mut body = json!({
        "model": params.model_id,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "max_tokens": params.max_output_tokens,
    });
    let map = body.as_object_mut().expect("object literal");
    for (k, v) in &params.extra {
        map.insert(k.clone(), v.clone());
    }
    body
}

fn response_text(url: &str, body: &[u8]) -> Result<String, GatewayError> {
    let decode = |message: String| GatewayError::Decode {
        url: url.to_owned(),
        message,
    };
    let value: Value = serde_json::from_slice(body).map_err(|e| decode(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| decode("missing choices[0].message.content".into()))
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub struct Gateway {
    client: reqwest::Client,
    mode: Mode,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    network_calls: AtomicU64,
}

impl Gateway {
    pub fn new(mode: Mode, cache: Option<ResponseCache>, retry: RetryPolicy) -> Result<Gateway, GatewayError> {
        if mode != Mode::Live && cache.is_none() {
            return Err(GatewayError::NoCache { mode });
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Transport {
                url: String::new(),
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Gateway {
            client,
            mode,
            cache,
            retry,
            network_calls: AtomicU64::new(0),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// Reads the API key named by `params`, if any.
    pub fn api_key(params: &InferenceParams) -> Result<Option<String>, GatewayError> {
        match &params.api_key_ref {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(GatewayError::MissingApiKey {
                    var: var.clone(),
                    model: params.model_id.clone(),
                }),
            },
        }
    }

    pub async fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &InferenceParams,
    ) -> Result<RawResponse, GatewayError> {
        let key = Self::api_key(params);
        self.complete_with(prompt, params, || key).await
    }

    async fn complete_with(
        &self,
        prompt: &RenderedPrompt,
        params: &InferenceParams,
        api_key: impl FnOnce() -> Result<Option<String>, GatewayError>,
    ) -> Result<RawResponse, GatewayError> {
        params.validate()?;
        let key = cache_key(prompt, &params.model_id, params);
        if self.mode != Mode::Live {
            let cache = self.cache.as_ref().expect("checked in new");
            if let Some(hit) = cache.get(&key)? {
                return Ok(RawResponse {
                    cache_key: key,
                    rot_id: prompt.rot_id.clone(),
                    model_id: params.model_id.clone(),
                    variant: prompt.variant,
                    text: hit.text,
                    retrieved_at: hit.retrieved_at,
                    from_cache: true,
                });
            }
            if self.mode == Mode::Replay {
                return Err(GatewayError::ReplayMiss(key));
            }
        }

        let api_key = api_key()?;
        let body = request_body(&prompt.text, params);
        let text = self.post_with_retry(&params.endpoint_url, &body, api_key.as_deref()).await?;
        let response = RawResponse {
            cache_key: key,
            rot_id: prompt.rot_id.clone(),
            model_id: params.model_id.clone(),
            variant: prompt.variant,
            text,
            retrieved_at: now_rfc3339(),
            from_cache: false,
        };
        if self.mode == Mode::Record {
            let cache = self.cache.as_ref().expect("checked in new");
            cache.put(&CacheRecord {
                cache_key: response.cache_key.clone(),
                rot_id: response.rot_id.clone(),
                model_id: response.model_id.clone(),
                variant: response.variant,
                prompt: prompt.text.clone(),
                request: body,
                text: response.text.clone(),
                retrieved_at: response.retrieved_at.clone(),
            })?;
        }
        Ok(response)
    }

    async fn post_once(&self, url: &str, body: &Value, api_key: Option<&str>) -> Result<String, GatewayError> {
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(serde_json::to_vec(body).expect("request serializes"));
        if let Some(k) = api_key {
            req = req.bearer_auth(k);
        }
        let transport = |e: reqwest::Error| GatewayError::Transport {
            url: url.to_owned(),
            attempts: 1,
            message: e.to_string(),
        };
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(transport)?;
        if !status.is_success() {
            return Err(GatewayError::Http {
                url: url.to_owned(),
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        response_text(url, &bytes)
    }

    async fn post_with_retry(&self, url: &str, body: &Value, api_key: Option<&str>) -> Result<String, GatewayError> {
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.post_once(url, body, api_key).await {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable() && attempt < attempts => {
                    tracing::warn!(url, attempt, error = %e, "retrying");
                    tokio::time::sleep(backoff).await;
                    backoff *= 2;
                    attempt += 1;
                }
                Err(GatewayError::Transport { url, message, .. }) => {
                    return Err(GatewayError::Transport {
                        url,
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// One response per RoT, in input order, with at most `parallelism`
    /// requests in flight. Failures are collected; with `fail_fast` the
    /// batch stops at the first one and the rest are reported as skipped.
    pub async fn run_batch(
        &self,
        rots: &[RoT],
        variant: PromptVariant,
        params: &InferenceParams,
        parallelism: usize,
        fail_fast: bool,
    ) -> Result<BatchOutcome, GatewayError> {
        if parallelism == 0 {
            return Err(GatewayError::Parallelism);
        }
        params.validate()?;
        // Resolve credentials before the first request, and only when a
        // request could actually be needed.
        let needs_network = match self.mode {
            Mode::Live => !rots.is_empty(),
            Mode::Replay => false,
            Mode::Record => {
                let cache = self.cache.as_ref().expect("checked in new");
                rots.iter().any(|r| {
                    render_prompt(r, variant)
                        .is_ok_and(|p| !cache.contains(&cache_key(&p, &params.model_id, params)))
                })
            }
        };
        let api_key = if needs_network { Self::api_key(params)? } else { None };

        let mut results = stream::iter(rots.iter().map(|rot| {
            let api_key = api_key.clone();
            async move {
                let outcome = match render_prompt(rot, variant) {
                    Ok(prompt) => self.complete_with(&prompt, params, || Ok(api_key)).await,
                    Err(e) => Err(e.into()),
                };
                (rot.id.clone(), outcome)
            }
        }))
        .buffered(parallelism);

        let mut out = BatchOutcome::default();
        let mut done = 0;
        while let Some((rot_id, outcome)) = results.next().await {
            done += 1;
            match outcome {
                Ok(r) => out.responses.push(r),
                Err(error) => {
                    tracing::warn!(rot_id, error = %error, "request failed");
                    out.failures.push(ItemFailure { rot_id, error });
                    if fail_fast {
                        break;
                    }
                }
            }
        }
        drop(results);
        out.skipped = rots[done..].iter().map(|r| r.id.clone()).collect();
        Ok(out)
    }
}
