//! OpenAI-compatible chat-completions over blocking HTTP, with retries and
//! token-bucket rate limiting.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{CachedResponse, GateError, ModelConfig};
use crate::promptkit::PromptPair;

pub const API_KEY_ENV: &str = "MODELGATE_API_KEY";

const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Token bucket: `rate` tokens per second, burst of `max(1, rate)`.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        Self {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().unwrap_or_else(|p| p.into_inner());
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate)
                    .min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

pub(super) struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    limiter: Option<RateLimiter>,
}

enum Attempt {
    Done(CachedResponse),
    Retry(GateError),
    Fail(GateError),
}

fn chat_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

impl HttpBackend {
    pub(super) fn new(cfg: &ModelConfig) -> Result<Self, GateError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.request_timeout_secs))
            .build()
            .map_err(|e| GateError::Network(e.to_string()))?;
        Ok(Self {
            client,
            url: chat_url(&cfg.endpoint),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            limiter: cfg.requests_per_second.map(RateLimiter::new),
        })
    }

    fn body(prompt: &PromptPair, cfg: &ModelConfig) -> Value {
        let mut body = json!({
            "model": cfg.model_id,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
        });
        if let Value::Object(map) = &mut body {
            for (k, v) in &cfg.provider_options {
                map.insert(k.clone(), v.clone());
            }
        }
        body
    }

    fn attempt(&self, key: &str, body: &Value) -> Attempt {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let resp = match self.client.post(&self.url).bearer_auth(key).json(body).send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(GateError::Network(e.to_string())),
        };
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(GateError::Auth(format!("status {status}: {text}"))),
            408 | 429 | 500..=599 => {
                return Attempt::Retry(GateError::Endpoint {
                    status: status.as_u16(),
                    body: text,
                })
            }
            s => {
                return Attempt::Fail(GateError::Endpoint {
                    status: s,
                    body: text,
                })
            }
        }
        let parsed: ChatResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fail(GateError::Protocol(e.to_string())),
        };
        match parsed.choices.into_iter().next() {
            Some(c) => Attempt::Done(CachedResponse {
                text: c.message.content.unwrap_or_default(),
                finish_reason: c.finish_reason.unwrap_or_else(|| "unknown".into()),
            }),
            None => Attempt::Fail(GateError::Protocol("response has no choices".into())),
        }
    }

    pub(super) fn send(&self, prompt: &PromptPair, cfg: &ModelConfig) -> Result<CachedResponse, GateError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| GateError::Auth(format!("{API_KEY_ENV} is not set")))?;
        let body = Self::body(prompt, cfg);
        let mut attempt_no = 0u32;
        loop {
            match self.attempt(key, &body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt_no >= cfg.max_retries => {
                    return Err(match e {
                        GateError::Network(m) => {
                            GateError::Network(format!("{m} (after {} retries)", cfg.max_retries))
                        }
                        other => other,
                    })
                }
                Attempt::Retry(e) => {
                    let backoff = Duration::from_millis(cfg.retry_base_ms)
                        .saturating_mul(1u32 << attempt_no.min(16))
                        .min(MAX_BACKOFF);
                    warn!("transient failure ({e}); retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    attempt_no += 1;
                    debug!("retry {attempt_no} for {}", self.url);
                }
            }
        }
    }
}
