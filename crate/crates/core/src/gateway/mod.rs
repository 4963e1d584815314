//! The only path to model inference.
//!
//! A [`Gateway`] wraps a [`Backend`] (remote HTTP scorer or in-process mock),
//! applies the retry policy, validates responses and consults the response
//! cache. Everything above this module works with rendered probes and chosen
//! answers only.

pub mod cache;
pub mod http;
pub mod mock;
pub mod protocol;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::ScoreCache;
pub use http::HttpBackend;
pub use mock::{Cue, Lexicon, MockBackend, MockKind, MockScorerSpec};
pub use protocol::{select_choice, BackendInfo, ScoreRequest, ScoreResponse, PROTOCOL_VERSION};

use crate::error::{Error, Result};
use crate::item_bank::{ItemBank, ResponseChoice};
use crate::prompt::{ProbeBody, RenderMode, RenderedProbe, SLOT_MARKER};

/// A candidate-scoring service.
pub trait Backend: Send + Sync {
    fn info(&self) -> Result<BackendInfo>;
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse>;
}

/// Where scores come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    Http { endpoint: String },
    Mock(MockScorerSpec),
}

impl BackendSpec {
    pub fn build(&self, bank: &ItemBank, timeout: Duration) -> Result<Box<dyn Backend>> {
        Ok(match self {
            BackendSpec::Http { endpoint } => Box::new(HttpBackend::new(endpoint.clone(), timeout)?),
            BackendSpec::Mock(spec) => Box::new(MockBackend::new(spec.clone(), bank)),
        })
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, BackendSpec::Http { .. })
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Http { endpoint } => f.write_str(endpoint),
            BackendSpec::Mock(spec) => spec.fmt(f),
        }
    }
}

impl FromStr for BackendSpec {
    type Err = Error;

    /// `mock:<kind>[:<seed>]` or an `http(s)://` endpoint.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with("mock:") {
            Ok(BackendSpec::Mock(s.parse()?))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(BackendSpec::Http {
                endpoint: s.to_string(),
            })
        } else {
            Err(Error::Config(format!(
                "backend must be mock:<kind>[:seed] or an http(s) URL, got {s:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 200,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms as u64)
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt + 1 < attempts => {
                    let wait = self.backoff(attempt);
                    log::warn!("attempt {} failed ({e}); retrying in {wait:?}", attempt + 1);
                    thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Bound on in-flight requests across a battery.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Persistent cache file; `None` keeps the cache in memory only.
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub cache_enabled: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_concurrency() -> usize {
    8
}

fn default_true() -> bool {
    true
}

fn default_timeout() -> u64 {
    60
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            retry: RetryPolicy::default(),
            concurrency: default_concurrency(),
            cache_path: None,
            cache_enabled: true,
            timeout_secs: default_timeout(),
        }
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    info: BackendInfo,
    cache: Option<ScoreCache>,
    retry: RetryPolicy,
    concurrency: usize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("info", &self.info)
            .field("cached", &self.cache.as_ref().map(ScoreCache::len))
            .field("concurrency", &self.concurrency)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, config: &GatewayConfig) -> Result<Gateway> {
        let info = config.retry.run(|| backend.info())?;
        if let Some(v) = &info.protocol_version {
            if v != PROTOCOL_VERSION {
                return Err(Error::ProtocolMismatch {
                    expected: PROTOCOL_VERSION.into(),
                    found: v.clone(),
                });
            }
        }
        let cache = match (config.cache_enabled, &config.cache_path) {
            (false, _) => None,
            (true, Some(path)) => Some(ScoreCache::open(path)?),
            (true, None) => Some(ScoreCache::in_memory()),
        };
        Ok(Gateway {
            backend,
            info,
            cache,
            retry: config.retry.clone(),
            concurrency: config.concurrency.max(1),
        })
    }

    /// Convenience for tests and examples: a mock backend with an in-memory cache.
    pub fn mock(spec: MockScorerSpec, bank: &ItemBank) -> Gateway {
        Gateway::new(Box::new(MockBackend::new(spec, bank)), &GatewayConfig::default())
            .expect("mock backends are always available")
    }

    pub fn info(&self) -> &BackendInfo {
        &self.info
    }

    pub fn model_id(&self) -> &str {
        &self.info.model_id
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn cache(&self) -> Option<&ScoreCache> {
        self.cache.as_ref()
    }

    /// Scores a raw request: cache first, then the backend under the retry policy.
    pub fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        request.validate()?;
        let key = cache::cache_key(&self.info.model_id, request);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        let response = self.retry.run(|| self.backend.score(request))?;
        response.validate()?;
        if let Some(cache) = &self.cache {
            cache.insert(key, response.clone())?;
        }
        Ok(response)
    }

    /// Builds the wire request for a probe, substituting the backend's mask token.
    pub fn request_for(&self, probe: &RenderedProbe) -> Result<ScoreRequest> {
        let texts = probe.texts();
        let id = request_id(probe.item_id, &texts);
        match &probe.body {
            ProbeBody::Masked { .. } => {
                let mask = self.info.mask_token.as_deref().ok_or_else(|| {
                    Error::Config(format!(
                        "backend {} has no mask token; use sequence mode",
                        self.info.model_id
                    ))
                })?;
                let text = texts[0].replacen(SLOT_MARKER, mask, 1);
                let candidates = ResponseChoice::ALL.iter().map(|c| c.label().to_string()).collect();
                Ok(ScoreRequest::masked(id, text, candidates))
            }
            ProbeBody::Sequence { .. } => Ok(ScoreRequest::sequence(id, texts)),
        }
    }

    pub fn score_probe(&self, probe: &RenderedProbe) -> Result<ScoreResponse> {
        self.score(&self.request_for(probe)?)
    }

    /// The render mode this backend supports natively.
    pub fn native_mode(&self) -> RenderMode {
        if self.info.mask_token.is_some() {
            RenderMode::MaskedSlot
        } else {
            RenderMode::CandidateSentences
        }
    }
}

fn request_id(item_id: u32, texts: &[String]) -> String {
    let mut h = Sha256::new();
    for t in texts {
        h.update(t.as_bytes());
        h.update([0]);
    }
    format!("item{item_id}-{}", &hex::encode(h.finalize())[..12])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    struct Flaky {
        failures_left: AtomicU32,
        calls: Arc<AtomicU32>,
        scores: Vec<f64>,
    }

    impl Backend for Flaky {
        fn info(&self) -> Result<BackendInfo> {
            Ok(BackendInfo {
                model_id: "flaky".into(),
                max_tokens: 512,
                mask_token: None,
                protocol_version: None,
            })
        }

        fn score(&self, _request: &ScoreRequest) -> Result<ScoreResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::Transport("connection reset".into()));
            }
            Ok(ScoreResponse {
                log_scores: self.scores.clone(),
                truncated: false,
                model_id: "flaky".into(),
                protocol_version: None,
            })
        }
    }

    fn fast_config() -> GatewayConfig {
        GatewayConfig {
            retry: RetryPolicy {
                attempts: 3,
                initial_backoff_ms: 1,
                multiplier: 2.0,
            },
            ..GatewayConfig::default()
        }
    }

    fn flaky(failures: u32, scores: Vec<f64>) -> (Gateway, Arc<AtomicU32>) {
        let calls = Arc::new(AtomicU32::new(0));
        let backend = Flaky {
            failures_left: AtomicU32::new(failures),
            calls: calls.clone(),
            scores,
        };
        (Gateway::new(Box::new(backend), &fast_config()).unwrap(), calls)
    }

    fn req() -> ScoreRequest {
        ScoreRequest::sequence("r", (0..5).map(|i| format!("text {i}")).collect())
    }

    #[test]
    fn retries_transient_failures_then_caches() {
        let (gw, calls) = flaky(2, vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let r = gw.score(&req()).unwrap();
        assert_eq!(select_choice(&r), ResponseChoice::Rarely);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        gw.score(&req()).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3, "second call served from cache");
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (gw, calls) = flaky(5, vec![0.0; 5]);
        assert!(matches!(gw.score(&req()), Err(Error::Transport(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn non_finite_scores_surface() {
        let (gw, _) = flaky(0, vec![0.0, f64::INFINITY, 0.0, 0.0, 0.0]);
        assert!(matches!(gw.score(&req()), Err(Error::NonFiniteScore)));
        assert!(gw.cache().unwrap().is_empty());
    }

    #[test]
    fn masked_probe_needs_mask_token() {
        let (gw, _) = flaky(0, vec![0.0; 5]);
        let bank = ItemBank::ipip50();
        let probe = crate::prompt::Renderer::new(&bank)
            .render(
                bank.item(1).unwrap(),
                &crate::prompt::Persona::FirstPerson,
                &crate::assessment::ContextSpec::None,
                RenderMode::MaskedSlot,
            )
            .unwrap();
        assert!(matches!(gw.request_for(&probe), Err(Error::Config(_))));
        assert_eq!(gw.native_mode(), RenderMode::CandidateSentences);
    }

    #[test]
    fn mask_token_substituted() {
        let bank = ItemBank::ipip50();
        let gw = Gateway::mock(MockScorerSpec::new(MockKind::Uniform, 0), &bank);
        let probe = crate::prompt::Renderer::new(&bank)
            .render(
                bank.item(25).unwrap(),
                &crate::prompt::Persona::named("David"),
                &crate::assessment::ContextSpec::None,
                RenderMode::MaskedSlot,
            )
            .unwrap();
        let req = gw.request_for(&probe).unwrap();
        assert_eq!(req.text.as_deref(), Some("David [MASK] has excellent ideas."));
        assert_eq!(req.candidates.as_ref().unwrap().len(), 5);
    }

    #[test]
    fn backend_spec_parsing() {
        assert!(matches!(
            "mock:uniform".parse::<BackendSpec>().unwrap(),
            BackendSpec::Mock(_)
        ));
        assert_eq!(
            "http://localhost:8000".parse::<BackendSpec>().unwrap(),
            BackendSpec::Http {
                endpoint: "http://localhost:8000".into()
            }
        );
        assert!("ftp://x".parse::<BackendSpec>().is_err());
    }
}
