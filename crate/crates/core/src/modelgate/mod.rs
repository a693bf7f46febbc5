//! Uniform access to chat-completion models.
//!
//! A [`Gateway`] fronts one model: live OpenAI-compatible HTTP endpoints, or
//! the seeded biased-oracle mock (`mock:` endpoints). Every response passes
//! through a content-addressed, write-once cache so runs can be replayed
//! without network access.

mod cache;
mod http;
mod oracle;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::promptkit::{PromptPair, RankingPresentation};

pub use cache::{CacheEntry, CachedResponse, ResponseCache};
pub use http::{RateLimiter, API_KEY_ENV};
pub use oracle::{oracle_complete, OracleProfile, MOCK_REFUSAL_TEXT};

#[derive(Debug, Error)]
pub enum GateError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("offline mode and request {0} is not cached")]
    OfflineMiss(String),
    #[error("cache conflict for {0}: stored response differs")]
    CacheConflict(String),
    #[error("cache I/O error: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    4
}
fn default_retry_base() -> u64 {
    500
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    /// Base URL of an OpenAI-compatible API, or `mock:` for the oracle.
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_true")]
    pub safety_filters_off: bool,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base")]
    pub retry_base_ms: u64,
    /// Per-endpoint token-bucket rate; `None` disables limiting.
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    /// Extra fields merged into the request body (provider safety knobs etc).
    #[serde(default)]
    pub provider_options: serde_json::Map<String, serde_json::Value>,
    /// Behavior of the mock when `endpoint` is `mock:`.
    #[serde(default)]
    pub oracle: Option<OracleProfile>,
}

impl ModelConfig {
    pub fn mock(model_id: &str, profile: OracleProfile) -> Self {
        Self {
            model_id: model_id.into(),
            endpoint: "mock:".into(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            safety_filters_off: true,
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_base_ms: default_retry_base(),
            requests_per_second: None,
            provider_options: Default::default(),
            oracle: Some(profile),
        }
    }

    pub fn live(model_id: &str, endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.into(),
            oracle: None,
            ..Self::mock(model_id, OracleProfile::default())
        }
    }

    /// The bundled demo mock: a biased oracle with noise and light refusals.
    pub fn demo() -> Self {
        serde_json::from_str(include_str!("../../data/demo_model.json"))
            .expect("bundled demo config parses")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GateError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| GateError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock:")
    }

    pub fn validate(&self) -> Result<(), GateError> {
        let bad = |m: String| Err(GateError::InvalidConfig(m));
        if self.model_id.trim().is_empty() {
            return bad("model_id is empty".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be >= 0", self.temperature));
        }
        if let Some(r) = self.requests_per_second {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("requests_per_second {r} must be > 0"));
            }
        }
        if self.is_mock() {
            match &self.oracle {
                Some(p) => p.validate().map_err(GateError::InvalidConfig)?,
                None => return bad("mock endpoint needs an oracle profile".into()),
            }
        } else if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return bad(format!("endpoint '{}' is neither http(s) nor mock:", self.endpoint));
        }
        Ok(())
    }
}

/// SHA-256 of a canonicalized request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestHash(pub [u8; 32]);

impl RequestHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl std::fmt::Display for RequestHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for RequestHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for RequestHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

/// The fields that identify a request. Serialization order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRequest {
    pub model_id: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl CanonicalRequest {
    pub fn new(prompt: &PromptPair, cfg: &ModelConfig) -> Self {
        Self {
            model_id: cfg.model_id.clone(),
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            temperature: cfg.temperature,
            max_output_tokens: cfg.max_output_tokens,
        }
    }

    pub fn hash(&self) -> RequestHash {
        let bytes = serde_json::to_vec(self).expect("canonical request serializes");
        RequestHash(Sha256::digest(&bytes).into())
    }
}

pub fn request_hash(prompt: &PromptPair, cfg: &ModelConfig) -> RequestHash {
    CanonicalRequest::new(prompt, cfg).hash()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: String,
    pub latency: Duration,
    pub from_cache: bool,
    pub request_hash: RequestHash,
}

/// Side information only the mock uses; live endpoints see the prompt alone.
#[derive(Debug, Clone, Default)]
pub struct TrialHint {
    pub candidate: String,
    pub presentation: Option<RankingPresentation>,
}

#[derive(Debug, Clone, Default)]
pub struct GatewayOptions {
    pub cache_dir: Option<PathBuf>,
    /// Never touch the network or the mock; serve from cache only.
    pub offline: bool,
}

pub struct Gateway {
    cfg: ModelConfig,
    cache: Option<ResponseCache>,
    offline: bool,
    http: Option<http::HttpBackend>,
}

impl Gateway {
    pub fn new(cfg: ModelConfig, opts: GatewayOptions) -> Result<Self, GateError> {
        cfg.validate()?;
        let cache = opts.cache_dir.map(ResponseCache::open).transpose()?;
        let http = if cfg.is_mock() || opts.offline {
            None
        } else {
            Some(http::HttpBackend::new(&cfg)?)
        };
        Ok(Self {
            cfg,
            cache,
            offline: opts.offline,
            http,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn request_hash(&self, prompt: &PromptPair) -> RequestHash {
        request_hash(prompt, &self.cfg)
    }

    /// Run one completion: cache first, then the mock or the live endpoint.
    /// Fresh responses are written to the cache before returning.
    pub fn complete(&self, prompt: &PromptPair, hint: &TrialHint) -> Result<ModelResponse, GateError> {
        let start = Instant::now();
        let request = CanonicalRequest::new(prompt, &self.cfg);
        let hash = request.hash();

        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&hash)? {
                return Ok(ModelResponse {
                    text: entry.response.text,
                    finish_reason: entry.response.finish_reason,
                    latency: start.elapsed(),
                    from_cache: true,
                    request_hash: hash,
                });
            }
        }
        if self.offline {
            return Err(GateError::OfflineMiss(hash.to_hex()));
        }

        let fresh = if let Some(profile) = self.cfg.oracle.as_ref().filter(|_| self.cfg.is_mock()) {
            let r = oracle_complete(prompt, profile, hint, hash);
            CachedResponse {
                text: r.text,
                finish_reason: r.finish_reason,
            }
        } else {
            let backend = self
                .http
                .as_ref()
                .ok_or_else(|| GateError::InvalidConfig("no HTTP backend".into()))?;
            backend.send(prompt, &self.cfg)?
        };

        if let Some(cache) = &self.cache {
            cache.put(&hash, &request, &fresh)?;
        }
        Ok(ModelResponse {
            text: fresh.text,
            finish_reason: fresh.finish_reason,
            latency: start.elapsed(),
            from_cache: false,
            request_hash: hash,
        })
    }
}
