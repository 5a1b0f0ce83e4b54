//! Single boundary to text-generation and scoring backends.
//!
//! [`Gateway`] wraps a [`Backend`] with a content-addressed response cache,
//! per-key call coalescing, a cap on in-flight requests, and retries with
//! exponential backoff for transient failures.

mod cache;
mod http;
mod mock;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

pub use cache::ResponseCache;
pub use http::{HttpBackend, HttpConfig};
pub(crate) use mock::count_var;
pub use mock::{MockBackend, MockHandler, MockRule, MockScript, ScoreRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Message {
            role,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    /// Pipeline stage that issued the request; routes mock scripts and logs.
    #[serde(skip)]
    pub stage: String,
    /// Distinguishes deliberate resamples of an otherwise identical request.
    #[serde(skip)]
    pub sample_index: u32,
    /// Template variables the messages were rendered from. Not sent over
    /// the wire; lets the mock backend answer structurally.
    #[serde(skip)]
    pub vars: BTreeMap<String, String>,
}

impl PromptRequest {
    pub fn new(stage: &str, model_name: &str, messages: Vec<Message>) -> Self {
        PromptRequest {
            messages,
            temperature: 0.0,
            max_tokens: 1024,
            model_name: model_name.to_string(),
            stage: stage.to_string(),
            sample_index: 0,
            vars: BTreeMap::new(),
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn with_vars(mut self, vars: BTreeMap<String, String>) -> Self {
        self.vars = vars;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::InvalidArgument("prompt has no messages".into()));
        }
        if self.messages.iter().any(|m| m.text.trim().is_empty()) {
            return Err(Error::InvalidArgument("prompt message text is empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::InvalidArgument("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All message texts joined, for substring matching.
    pub fn joined_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Per-token log-probabilities of a teacher-forced continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredContinuation {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl ScoredContinuation {
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self> {
        if tokens.len() != logprobs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tokens but {} logprobs",
                tokens.len(),
                logprobs.len()
            )));
        }
        if let Some(lp) = logprobs.iter().find(|lp| lp.is_nan() || **lp > 0.0) {
            return Err(Error::InvalidArgument(format!("logprob {lp} is not <= 0")));
        }
        Ok(ScoredContinuation { tokens, logprobs })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A text-generation / scoring service.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<String>;

    /// Log-probabilities of `continuation` forced after `context`; the
    /// context's own tokens are not returned.
    fn score(&self, model: &str, context: &str, continuation: &str) -> Result<ScoredContinuation>;

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum KeyMaterial<'a> {
    Complete {
        model_name: &'a str,
        messages: &'a [Message],
        temperature: f64,
        max_tokens: u32,
        sample_index: u32,
    },
    Score {
        model_name: &'a str,
        context: &'a str,
        continuation: &'a str,
    },
    Embed {
        model_name: &'a str,
        texts: &'a [String],
    },
}

fn digest(material: &KeyMaterial<'_>) -> String {
    sha256_hex(&serde_json::to_vec(material).expect("key material serializes"))
}

/// Stable digest of everything that determines a completion.
pub fn cache_key(request: &PromptRequest) -> String {
    digest(&KeyMaterial::Complete {
        model_name: &request.model_name,
        messages: &request.messages,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
        sample_index: request.sample_index,
    })
}

pub fn score_cache_key(model: &str, context: &str, continuation: &str) -> String {
    digest(&KeyMaterial::Score {
        model_name: model,
        context,
        continuation,
    })
}

pub fn embed_cache_key(model: &str, texts: &[String]) -> String {
    digest(&KeyMaterial::Embed {
        model_name: model,
        texts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum CachedResponse {
    Text(String),
    Scored(ScoredContinuation),
    Vectors(Vec<Vec<f64>>),
}

/// Counting semaphore bounding concurrent backend calls.
struct Limiter {
    cap: usize,
    state: Mutex<(usize, usize)>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(cap: usize) -> Self {
        Limiter {
            cap,
            state: Mutex::new((0, 0)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap();
        while st.0 >= self.cap {
            st = self.cv.wait(st).unwrap();
        }
        st.0 += 1;
        st.1 = st.1.max(st.0);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.0.state.lock().unwrap().0 -= 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    cache: ResponseCache,
    retry: RetryPolicy,
    limiter: Limiter,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    backend_calls: AtomicU64,
}

impl Gateway {
    pub fn new(
        backend: Box<dyn Backend>,
        cache: ResponseCache,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) -> Result<Self> {
        if max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if retry.max_attempts == 0 {
            return Err(Error::Config("retry max_attempts must be at least 1".into()));
        }
        Ok(Gateway {
            backend,
            cache,
            retry,
            limiter: Limiter::new(max_in_flight),
            key_locks: Mutex::new(HashMap::new()),
            backend_calls: AtomicU64::new(0),
        })
    }

    /// In-memory cache, one in-flight call, fast retries. For tests.
    pub fn in_memory(backend: Box<dyn Backend>) -> Self {
        Gateway::new(
            backend,
            ResponseCache::in_memory(),
            4,
            RetryPolicy {
                max_attempts: 1,
                backoff_ms: 0,
            },
        )
        .expect("valid defaults")
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Number of calls that reached the backend (cache misses, retries included).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous backend calls observed.
    pub fn peak_in_flight(&self) -> usize {
        self.limiter.state.lock().unwrap().1
    }

    pub fn complete(&self, request: &PromptRequest) -> Result<String> {
        request.validate()?;
        let key = cache_key(request);
        let resp = self.cached(&key, || self.backend.complete(request).map(CachedResponse::Text))?;
        match resp {
            CachedResponse::Text(t) => Ok(t),
            other => Err(cache_type_mismatch(&key, &other)),
        }
    }

    pub fn score_continuation(&self, model: &str, context: &str, continuation: &str) -> Result<ScoredContinuation> {
        if continuation.trim().is_empty() {
            return Err(Error::InvalidArgument("continuation is empty".into()));
        }
        let key = score_cache_key(model, context, continuation);
        let resp = self.cached(&key, || {
            let scored = self.backend.score(model, context, continuation)?;
            if scored.is_empty() {
                return Err(Error::InvalidArgument("continuation tokenized to zero tokens".into()));
            }
            ScoredContinuation::new(scored.tokens, scored.logprobs).map(CachedResponse::Scored)
        })?;
        match resp {
            CachedResponse::Scored(s) => Ok(s),
            other => Err(cache_type_mismatch(&key, &other)),
        }
    }

    pub fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let key = embed_cache_key(model, texts);
        let resp = self.cached(&key, || {
            let vectors = self.backend.embed(model, texts)?;
            if vectors.len() != texts.len() {
                return Err(Error::InvalidArgument(format!(
                    "embedding backend returned {} vectors for {} texts",
                    vectors.len(),
                    texts.len()
                )));
            }
            Ok(CachedResponse::Vectors(vectors))
        })?;
        match resp {
            CachedResponse::Vectors(v) => Ok(v),
            other => Err(cache_type_mismatch(&key, &other)),
        }
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.key_locks
            .lock()
            .unwrap()
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    fn cached<F>(&self, key: &str, call: F) -> Result<CachedResponse>
    where
        F: Fn() -> Result<CachedResponse>,
    {
        if let Some(hit) = self.cache.get(key)? {
            return Ok(hit);
        }
        // serialize callers of the same key so only one reaches the backend
        let lock = self.key_lock(key);
        let _held = lock.lock().unwrap();
        if let Some(hit) = self.cache.get(key)? {
            return Ok(hit);
        }
        let resp = self.with_retry(&call)?;
        self.cache.put(key, &resp)?;
        Ok(resp)
    }

    fn with_retry<F>(&self, call: &F) -> Result<CachedResponse>
    where
        F: Fn() -> Result<CachedResponse>,
    {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                call()
            };
            match result {
                Ok(r) => return Ok(r),
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!("backend call failed (attempt {attempt}): {e}; retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(Error::Transport { message, .. }) => {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn cache_type_mismatch(key: &str, got: &CachedResponse) -> Error {
    let kind = match got {
        CachedResponse::Text(_) => "text",
        CachedResponse::Scored(_) => "scored",
        CachedResponse::Vectors(_) => "vectors",
    };
    Error::Pipeline(format!("cache entry {key} holds a {kind} response of the wrong type"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn req(text: &str) -> PromptRequest {
        PromptRequest::new("test", "m", vec![Message::new(Role::User, text)])
    }

    #[test]
    fn cache_key_properties() {
        let a = req("hello");
        assert_eq!(cache_key(&a), cache_key(&a.clone()));
        assert_ne!(cache_key(&a), cache_key(&a.clone().with_temperature(0.7)));
        assert_ne!(cache_key(&a), cache_key(&req("hellp")));
        assert_ne!(cache_key(&a), cache_key(&a.clone().with_max_tokens(7)));
        let mut other_model = a.clone();
        other_model.model_name = "n".into();
        assert_ne!(cache_key(&a), cache_key(&other_model));
        // stage and vars are routing metadata, not request content
        let mut restaged = a.clone();
        restaged.stage = "elsewhere".into();
        assert_eq!(cache_key(&a), cache_key(&restaged));
    }

    #[test]
    fn request_validation() {
        assert!(PromptRequest::new("s", "m", vec![]).validate().is_err());
        assert!(req("  ").validate().is_err());
        assert!(req("x").with_temperature(-1.0).validate().is_err());
        assert!(req("x").with_max_tokens(0).validate().is_err());
    }

    #[test]
    fn scored_continuation_invariants() {
        assert!(ScoredContinuation::new(vec!["a".into()], vec![-0.1, -0.2]).is_err());
        assert!(ScoredContinuation::new(vec!["a".into()], vec![0.1]).is_err());
        assert!(ScoredContinuation::new(vec!["a".into()], vec![f64::NAN]).is_err());
        assert!(ScoredContinuation::new(vec!["a".into()], vec![0.0]).is_ok());
    }

    struct Flaky {
        fails: AtomicUsize,
        status: u16,
    }

    impl Backend for Flaky {
        fn complete(&self, _: &PromptRequest) -> Result<String> {
            if self.fails.load(Ordering::SeqCst) > 0 {
                self.fails.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::Backend {
                    status: self.status,
                    body: "busy".into(),
                });
            }
            Ok("ok".into())
        }
        fn score(&self, _: &str, _: &str, _: &str) -> Result<ScoredContinuation> {
            Err(Error::Unsupported("score".into()))
        }
        fn embed(&self, _: &str, _: &[String]) -> Result<Vec<Vec<f64>>> {
            Err(Error::Unsupported("embed".into()))
        }
        fn name(&self) -> &str {
            "flaky"
        }
    }

    fn flaky_gateway(fails: usize, status: u16, attempts: u32) -> Gateway {
        Gateway::new(
            Box::new(Flaky {
                fails: AtomicUsize::new(fails),
                status,
            }),
            ResponseCache::in_memory(),
            2,
            RetryPolicy {
                max_attempts: attempts,
                backoff_ms: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn retries_transient_status() {
        let gw = flaky_gateway(2, 503, 3);
        assert_eq!(gw.complete(&req("x")).unwrap(), "ok");
        assert_eq!(gw.backend_calls(), 3);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let gw = flaky_gateway(5, 503, 3);
        assert!(matches!(
            gw.complete(&req("x")),
            Err(Error::Backend { status: 503, .. })
        ));
        assert_eq!(gw.backend_calls(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let gw = flaky_gateway(5, 400, 3);
        assert!(gw.complete(&req("x")).is_err());
        assert_eq!(gw.backend_calls(), 1);
    }

    #[test]
    fn zero_caps_rejected() {
        let mk = || {
            Box::new(Flaky {
                fails: AtomicUsize::new(0),
                status: 500,
            })
        };
        assert!(Gateway::new(mk(), ResponseCache::in_memory(), 0, RetryPolicy::default()).is_err());
        let no_attempts = RetryPolicy {
            max_attempts: 0,
            backoff_ms: 0,
        };
        assert!(Gateway::new(mk(), ResponseCache::in_memory(), 1, no_attempts).is_err());
    }
}
