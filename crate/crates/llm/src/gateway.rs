//! Cache-first querying with bounded retries, reprompting and concurrency.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::backend::{Backend, BackendError, PromptRequest};
use crate::cache::{cache_key, ResponseCache};
use crate::parse::LlmJudgment;
use crate::prompt::{build_pseudolabel_prompt, build_similarity_prompt, default_examples, PromptKind};
use crate::LlmError;

/// Appended to the prompt when the first reply could not be parsed.
const REPROMPT_SIMILARITY: &str = "\nReply exactly in the form: Related ratio = <number between 0 and 1>, Reason: <one sentence>.";
const REPROMPT_RANKING: &str = "\nReply with the option letters as a comma-separated list first, e.g. \"A, C\", then the explanation.";

/// Retry and concurrency policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// Retries after the first attempt on transient failures.
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Requests allowed in flight at once.
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { max_retries: 3, base_backoff_ms: 500, max_backoff_ms: 8_000, max_in_flight: 4 }
    }
}

/// Delay before retry number `attempt` (1-based).
pub fn backoff_delay(config: &GatewayConfig, attempt: u32) -> Duration {
    let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
    Duration::from_millis(config.base_backoff_ms.saturating_mul(factor).min(config.max_backoff_ms))
}

/// Counting semaphore bounding requests in flight.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

/// Shared entry point for all model questions. Safe to call from many threads.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    backend_id: String,
    cache: Arc<ResponseCache>,
    config: GatewayConfig,
    permits: Permits,
    calls: AtomicUsize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("backend", &self.backend_id).field("config", &self.config).finish()
    }
}

/// Render the prompt text for a request.
pub fn render(request: &PromptRequest) -> Result<String, LlmError> {
    match request.kind {
        PromptKind::Similarity => {
            if request.texts.len() != 2 {
                return Err(LlmError::BadRequest(format!("similarity needs two texts, got {}", request.texts.len())));
            }
            build_similarity_prompt(&request.texts[0], &request.texts[1], &default_examples(request.example_count))
        }
        PromptKind::PseudoLabel => {
            if request.texts.len() != 1 {
                return Err(LlmError::BadRequest(format!("ranking needs one text, got {}", request.texts.len())));
            }
            build_pseudolabel_prompt(&request.texts[0], &request.categories)
        }
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, cache: Arc<ResponseCache>, config: GatewayConfig) -> Self {
        let backend_id = backend.id();
        let permits = Permits::new(config.max_in_flight);
        Self { backend, backend_id, cache, config, permits, calls: AtomicUsize::new(0) }
    }

    /// Number of times the backend has actually been called.
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    fn call_with_retries(&self, request: &PromptRequest, prompt: &str) -> Result<String, LlmError> {
        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.permits.acquire();
                self.calls.fetch_add(1, Ordering::SeqCst);
                self.backend.complete(request, prompt)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(BackendError::Transient(msg)) if attempt < self.config.max_retries => {
                    attempt += 1;
                    let delay = backoff_delay(&self.config, attempt);
                    warn!(attempt, ?delay, error = %msg, "transient backend failure; retrying");
                    std::thread::sleep(delay);
                }
                Err(BackendError::Transient(msg)) => {
                    return Err(LlmError::Unreachable { attempts: attempt + 1, last: msg });
                }
                Err(e) => return Err(LlmError::Backend(e)),
            }
        }
    }

    /// Answer a request: from the cache when possible, otherwise from the
    /// backend (retrying transient failures and reprompting once on an
    /// unparseable reply), persisting the outcome before returning.
    pub fn query(&self, request: &PromptRequest) -> Result<LlmJudgment, LlmError> {
        let prompt = render(request)?;
        let key = cache_key(request, &self.backend_id);
        if let Some(hit) = self.cache.get(&key) {
            debug!(key = %key, "cache hit");
            return hit.judgment.ok_or(LlmError::ParseFailure { kind: request.kind, raw: hit.raw });
        }
        let raw = self.call_with_retries(request, &prompt)?;
        let (judgment, raw) = match LlmJudgment::parse(request.kind, &raw, &request.categories) {
            Ok(j) => (Some(j), raw),
            Err(_) => {
                let hint = match request.kind {
                    PromptKind::Similarity => REPROMPT_SIMILARITY,
                    PromptKind::PseudoLabel => REPROMPT_RANKING,
                };
                warn!(kind = request.kind.as_str(), "unparseable reply; reprompting once");
                let retry = self.call_with_retries(request, &format!("{prompt}{hint}"))?;
                let parsed = LlmJudgment::parse(request.kind, &retry, &request.categories).ok();
                (parsed, retry)
            }
        };
        let entry = self.cache.insert(key, request.kind, judgment, raw)?;
        entry.judgment.ok_or(LlmError::ParseFailure { kind: request.kind, raw: entry.raw })
    }
}
