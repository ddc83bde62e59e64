//! Asking a language model about node texts: prompt templates, reply
//! parsing, a cached and rate-limited gateway, and deterministic mock
//! backends for offline runs.

pub mod backend;
pub mod cache;
pub mod gateway;
pub mod parse;
pub mod prompt;

pub use backend::{Backend, BackendError, HttpBackend, HttpConfig, MockBackend, MockMode, PromptRequest};
pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use gateway::{Gateway, GatewayConfig};
pub use parse::{extract_ranked_labels, extract_ratio, LlmJudgment};
pub use prompt::{build_pseudolabel_prompt, build_similarity_prompt, PromptKind};

/// Everything that can go wrong between building a prompt and returning a judgment.
#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("prompt text is empty")]
    EmptyText,
    #[error("ranking prompt needs at least two categories, got {0}")]
    TooFewCategories(usize),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("could not parse {} reply: {raw:?}", kind.as_str())]
    ParseFailure { kind: PromptKind, raw: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("cache line {line}: {message}")]
    CacheFormat { line: usize, message: String },
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache encoding: {0}")]
    Json(#[from] serde_json::Error),
}

impl LlmError {
    pub fn is_parse_failure(&self) -> bool {
        matches!(self, Self::ParseFailure { .. })
    }
}
