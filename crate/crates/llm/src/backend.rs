//! Completion backends: an OpenAI-compatible HTTP client and deterministic mocks.

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompt::{option_letter, PromptKind};

/// Everything needed to render and answer one question.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub kind: PromptKind,
    /// Two node texts for similarity, one for ranking.
    pub texts: Vec<String>,
    /// The dataset's full category list (ranking only; empty otherwise).
    pub categories: Vec<String>,
    /// Worked examples in the similarity prompt.
    pub example_count: usize,
    /// Node indices the texts belong to; label-aware mocks key on these.
    pub subjects: Vec<usize>,
}

impl PromptRequest {
    pub fn similarity(a: usize, text_a: &str, b: usize, text_b: &str, example_count: usize) -> Self {
        Self {
            kind: PromptKind::Similarity,
            texts: vec![text_a.to_string(), text_b.to_string()],
            categories: Vec::new(),
            example_count,
            subjects: vec![a, b],
        }
    }

    pub fn pseudo_label(node: usize, text: &str, categories: &[String]) -> Self {
        Self {
            kind: PromptKind::PseudoLabel,
            texts: vec![text.to_string()],
            categories: categories.to_vec(),
            example_count: 0,
            subjects: vec![node],
        }
    }
}

/// Why a backend call failed.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection resets, 429 and 5xx responses.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Not worth retrying: bad credentials, malformed requests.
    #[error("backend rejected the request: {0}")]
    Fatal(String),
    /// A label-aware mock was asked about a node without a ground-truth label.
    #[error("mock backend needs a ground-truth label for node {0}")]
    MissingLabel(usize),
}

/// Something that answers a rendered prompt.
pub trait Backend: Send + Sync {
    /// Stable identifier folded into cache keys.
    fn id(&self) -> String;
    fn complete(&self, request: &PromptRequest, prompt: &str) -> Result<String, BackendError>;
}

/// Behaviour of the offline mock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockMode {
    /// Similarity 0.9 within a class and 0.1 across; rankings put the true label first.
    ClassOracle,
    /// Similarity is the Jaccard overlap of token sets; rankings follow keyword overlap.
    Lexical,
    /// Each node gets a seeded label that is correct with probability `p`;
    /// similarity is 0.9 when two nodes' noisy labels agree, else 0.1.
    Noisy { p: f64 },
}

impl MockMode {
    pub const DEFAULT_NOISE_P: f64 = 0.8;

    pub fn noisy() -> Self {
        Self::Noisy { p: Self::DEFAULT_NOISE_P }
    }
}

/// Deterministic offline backend; answers are pure functions of the request and seed.
#[derive(Debug, Clone)]
pub struct MockBackend {
    mode: MockMode,
    seed: u64,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

/// Lowercase alphanumeric tokens of at least two characters.
pub fn token_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| t.chars().count() >= 2).map(str::to_lowercase).collect()
}

/// Jaccard overlap rounded to one decimal; two empty sets count as identical.
pub fn jaccard_rounded(a: &str, b: &str) -> f64 {
    let (sa, sb) = (token_set(a), token_set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    let j = sa.intersection(&sb).count() as f64 / union as f64;
    (j * 10.0).round() / 10.0
}

impl MockBackend {
    /// `labels` are ground truth per node; the lexical mode ignores them.
    pub fn new(mode: MockMode, seed: u64, labels: Vec<Option<usize>>, num_classes: usize) -> Self {
        Self { mode, seed, labels, num_classes }
    }

    pub fn mode(&self) -> MockMode {
        self.mode
    }

    fn true_label(&self, node: usize) -> Result<usize, BackendError> {
        self.labels.get(node).copied().flatten().ok_or(BackendError::MissingLabel(node))
    }

    /// Per-node label from the noisy labeler: seeded by (seed, node) alone, so
    /// every question about a node sees the same answer.
    pub fn noisy_label(&self, node: usize, p: f64) -> Result<usize, BackendError> {
        let truth = self.true_label(node)?;
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((node as u64).to_le_bytes());
        let digest = h.finalize();
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        if self.num_classes < 2 || rng.random::<f64>() < p {
            return Ok(truth);
        }
        let wrong = rng.random_range(0..self.num_classes - 1);
        Ok(if wrong >= truth { wrong + 1 } else { wrong })
    }

    fn label_for(&self, node: usize) -> Result<usize, BackendError> {
        match self.mode {
            MockMode::Noisy { p } => self.noisy_label(node, p),
            _ => self.true_label(node),
        }
    }

    fn similarity(&self, request: &PromptRequest) -> Result<(f64, &'static str), BackendError> {
        match self.mode {
            MockMode::Lexical => Ok((jaccard_rounded(&request.texts[0], &request.texts[1]), "token overlap")),
            _ => {
                let (a, b) = (self.label_for(request.subjects[0])?, self.label_for(request.subjects[1])?);
                Ok(if a == b { (0.9, "same topic") } else { (0.1, "different topics") })
            }
        }
    }

    fn ranking(&self, request: &PromptRequest) -> Result<Vec<usize>, BackendError> {
        let n = request.categories.len();
        let first = match self.mode {
            MockMode::Lexical => {
                let tokens = token_set(&request.texts[0]);
                let score = |c: usize| {
                    let stems: Vec<String> = token_set(&request.categories[c]).into_iter().collect();
                    tokens.iter().filter(|t| stems.iter().any(|s| t.starts_with(s.as_str()))).count()
                };
                // Highest overlap first, ties by index.
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by_key(|&c| std::cmp::Reverse(score(c)));
                return Ok(order);
            }
            _ => self.label_for(request.subjects[0])?,
        };
        Ok(std::iter::once(first).chain((0..n).filter(|&c| c != first)).collect())
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        match self.mode {
            MockMode::ClassOracle => format!("mock:class-oracle:{}", self.seed),
            MockMode::Lexical => format!("mock:lexical:{}", self.seed),
            MockMode::Noisy { p } => format!("mock:noisy:{p}:{}", self.seed),
        }
    }

    fn complete(&self, request: &PromptRequest, _prompt: &str) -> Result<String, BackendError> {
        match request.kind {
            PromptKind::Similarity => {
                let (ratio, why) = self.similarity(request)?;
                Ok(format!("Related ratio = {ratio:.1}, Reason: {why}."))
            }
            PromptKind::PseudoLabel => {
                let order = self.ranking(request)?;
                let letters: Vec<String> = order.iter().take(2).map(|&c| option_letter(c)).collect();
                Ok(format!("{}. {} is the closest match.", letters.join(", "), option_letter(order[0])))
            }
        }
    }
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Bearer token; usually supplied through the environment instead of a file.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub requests_per_minute: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key: None,
            temperature: 0.0,
            timeout_secs: 60,
            requests_per_minute: 60,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// Spaces requests evenly so no more than the configured number start per minute.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_minute: u32) -> Self {
        let interval = if per_minute == 0 { Duration::ZERO } else { Duration::from_secs(60) / per_minute };
        Self { interval, next: Mutex::new(Instant::now()) }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Blocking client for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        let limiter = RateLimiter::new(config.requests_per_minute);
        Ok(Self { config, client, limiter })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}:{}:{}", self.config.endpoint, self.config.model, self.config.temperature)
    }

    fn complete(&self, _request: &PromptRequest, prompt: &str) -> Result<String, BackendError> {
        self.limiter.acquire();
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: self.config.temperature,
        };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| BackendError::Transient(format!("malformed response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Transient("response carried no message content".into()))
    }
}
