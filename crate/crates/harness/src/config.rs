//! Experiment specification: a TOML file plus environment overrides for secrets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tagtopo_core::graph::SplitPolicy;
use tagtopo_core::synth::SbmConfig;
use tagtopo_core::train::TrainConfig;
use tagtopo_llm::{GatewayConfig, HttpConfig, MockMode};

use crate::HarnessError;

/// Environment variable holding the endpoint key.
pub const ENV_KEY: &str = "TAGTOPO_LLM_KEY";
/// Fallback key variable understood by most OpenAI-compatible tooling.
pub const ENV_KEY_FALLBACK: &str = "OPENAI_API_KEY";
pub const ENV_ENDPOINT: &str = "TAGTOPO_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "TAGTOPO_LLM_MODEL";

/// What a run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// GCN on the given graph, no propagation losses.
    PlainGcn,
    /// GCN with the true-label propagation loss only.
    GcnLpa,
    /// GCN on the model-refined graph.
    #[value(name = "a-d")]
    AD,
    /// GCN with true-label and pseudo-label propagation losses.
    LlmLpa,
    /// Refined graph plus both propagation losses.
    #[value(name = "a-d-and-lpa")]
    ADAndLpa,
    /// Accuracy as ground-truth cross-class edges are removed.
    DeletionSweep,
    /// Accuracy over a grid of deletion/addition thresholds.
    ThresholdGrid,
    /// Accuracy over a grid of propagation-loss weights.
    ParamSweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::PlainGcn => "plain-gcn",
            Self::GcnLpa => "gcn-lpa",
            Self::AD => "a-d",
            Self::LlmLpa => "llm-lpa",
            Self::ADAndLpa => "a-d-and-lpa",
            Self::DeletionSweep => "deletion-sweep",
            Self::ThresholdGrid => "threshold-grid",
            Self::ParamSweep => "param-sweep",
        }
    }

    pub fn refines(self) -> bool {
        matches!(self, Self::AD | Self::ADAndLpa | Self::ThresholdGrid)
    }

    pub fn needs_pseudo_labels(self) -> bool {
        matches!(self, Self::LlmLpa | Self::ADAndLpa | Self::ParamSweep)
    }

    /// Modes that train more than one variant.
    pub fn is_sweep(self) -> bool {
        matches!(self, Self::DeletionSweep | Self::ThresholdGrid | Self::ParamSweep)
    }

    pub fn needs_backend(self) -> bool {
        self.refines() || self.needs_pseudo_labels()
    }

    /// Propagation-loss weights this mode trains with, given the configured ones.
    pub fn coefficients(self, lambda: f64, beta: f64) -> (f64, f64) {
        match self {
            Self::PlainGcn | Self::AD | Self::DeletionSweep | Self::ThresholdGrid => (0.0, 0.0),
            Self::GcnLpa => (lambda, 0.0),
            Self::LlmLpa | Self::ADAndLpa | Self::ParamSweep => (lambda, beta),
        }
    }
}

/// Which split policy to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    #[default]
    General,
    FewShot,
}

impl SplitKind {
    pub fn policy(self) -> SplitPolicy {
        match self {
            Self::General => SplitPolicy::general(),
            Self::FewShot => SplitPolicy::few_shot(),
        }
    }
}

/// Where the graph comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Precomputed per-node feature vectors; bag-of-words over the texts otherwise.
    pub features: Option<PathBuf>,
    /// Generate a stochastic-block-model graph instead of reading files.
    pub synth: Option<SbmConfig>,
    /// Human-readable class names used in ranking prompts.
    pub categories: Option<Vec<String>>,
    /// Keep only this many nodes, chosen by the root seed.
    pub subsample: Option<usize>,
    pub split: SplitKind,
    /// Vocabulary size of the bag-of-words fallback.
    pub vocab: Option<usize>,
}

/// Backend selector as written on the command line: `http` or `mock:<mode>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "http")]
    Http,
    #[default]
    #[serde(rename = "mock:class-oracle")]
    ClassOracle,
    #[serde(rename = "mock:lexical")]
    Lexical,
    #[serde(rename = "mock:noisy")]
    Noisy,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Self::Http),
            "mock:class-oracle" => Ok(Self::ClassOracle),
            "mock:lexical" => Ok(Self::Lexical),
            "mock:noisy" => Ok(Self::Noisy),
            other => Err(format!("unknown backend {other:?}; expected http, mock:class-oracle, mock:lexical or mock:noisy")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Probability the noisy mock returns the true label.
    pub noise_p: f64,
    /// Reply cache; defaults to `llm_cache.jsonl` in the output directory.
    pub cache: Option<PathBuf>,
    /// Worked examples in the similarity prompt.
    pub example_count: usize,
    pub http: HttpConfig,
    pub gateway: GatewayConfig,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self {
            kind: BackendKind::default(),
            noise_p: MockMode::DEFAULT_NOISE_P,
            cache: None,
            example_count: tagtopo_llm::prompt::DEFAULT_EXAMPLE_COUNT,
            http: HttpConfig::default(),
            gateway: GatewayConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSpec {
    /// Maximum deletion and addition candidates each.
    pub cap: usize,
}

impl Default for RefineSpec {
    fn default() -> Self {
        Self { cap: 1000 }
    }
}

/// Grids for the sweep modes. Defaults are the desk-scale grids; `full`
/// switches to the fine grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub deletion_ratios: Vec<f64>,
    pub xi_del: Vec<f64>,
    pub xi_add: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub full: bool,
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| ((lo + k as f64 * step) * 10.0).round() / 10.0).collect()
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            deletion_ratios: steps(0.0, 1.0, 0.2),
            xi_del: vec![0.1, 0.5, 0.9],
            xi_add: vec![0.1, 0.5, 0.9],
            lambda: vec![0.0, 1.0, 2.0, 5.0],
            beta: vec![0.0, 1.0, 2.0, 5.0],
            full: false,
        }
    }
}

impl SweepSpec {
    /// Threshold grids to run: `{0.1, …, 0.9}` each when `full`.
    pub fn threshold_grids(&self) -> (Vec<f64>, Vec<f64>) {
        if self.full {
            (steps(0.1, 0.9, 0.1), steps(0.1, 0.9, 0.1))
        } else {
            (self.xi_del.clone(), self.xi_add.clone())
        }
    }

    /// Loss-weight grids to run: `{0, 0.1, …, 5}` each when `full`.
    pub fn weight_grids(&self) -> (Vec<f64>, Vec<f64>) {
        if self.full {
            (steps(0.0, 5.0, 0.1), steps(0.0, 5.0, 0.1))
        } else {
            (self.lambda.clone(), self.beta.clone())
        }
    }
}

/// Training defaults for experiments: both propagation losses on at weight 1
/// (modes switch off what they do not use).
pub fn default_train() -> TrainConfig {
    TrainConfig { lambda: 1.0, beta: 1.0, ..TrainConfig::default() }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: Mode,
    /// Root seed for the split, candidate sampling, subsampling and mocks.
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads for seeds and grid cells (0 = all cores).
    pub workers: usize,
    pub data: DataSpec,
    pub train: TrainConfig,
    pub backend: BackendSpec,
    pub refine: RefineSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            mode: Mode::PlainGcn,
            seed: 0,
            out: PathBuf::from("results"),
            workers: 0,
            data: DataSpec { synth: Some(SbmConfig::default()), ..DataSpec::default() },
            train: default_train(),
            backend: BackendSpec::default(),
            refine: RefineSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl ExperimentSpec {
    /// Parse TOML; relative data and cache paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let mut spec: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut().filter(|p| p.is_relative()) {
                *path = base.join(&*path);
            }
        };
        resolve(&mut spec.data.nodes);
        resolve(&mut spec.data.edges);
        resolve(&mut spec.data.features);
        resolve(&mut spec.backend.cache);
        if spec.out.is_relative() {
            spec.out = base.join(&spec.out);
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Fill secrets and endpoint settings from the environment.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(key) = get(ENV_KEY).or_else(|| get(ENV_KEY_FALLBACK)) {
            self.backend.http.api_key = Some(key);
        }
        if let Some(url) = get(ENV_ENDPOINT) {
            self.backend.http.endpoint = url;
        }
        if let Some(model) = get(ENV_MODEL) {
            self.backend.http.model = model;
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let files = self.data.nodes.is_some() && self.data.edges.is_some();
        if !files && self.data.synth.is_none() {
            return Err(HarnessError::Config("data needs either nodes and edges files or a synth section".into()));
        }
        if self.data.subsample == Some(0) {
            return Err(HarnessError::Config("subsample must be at least 1".into()));
        }
        if self.refine.cap == 0 {
            return Err(HarnessError::Config("refine.cap must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.backend.noise_p) {
            return Err(HarnessError::Config(format!("noise_p {} outside [0, 1]", self.backend.noise_p)));
        }
        if self.mode.needs_backend() && self.backend.kind == BackendKind::Http && self.backend.http.api_key.is_none() {
            return Err(HarnessError::Config(format!("http backend needs a key in {ENV_KEY} or {ENV_KEY_FALLBACK}")));
        }
        let unit = |name: &str, v: &[f64]| {
            if v.is_empty() || v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                Err(HarnessError::Config(format!("{name} grid must be non-empty within [0, 1]")))
            } else {
                Ok(())
            }
        };
        match self.mode {
            Mode::DeletionSweep => unit("deletion_ratios", &self.sweep.deletion_ratios)?,
            Mode::ThresholdGrid => {
                let (d, a) = self.sweep.threshold_grids();
                unit("xi_del", &d)?;
                unit("xi_add", &a)?;
            }
            Mode::ParamSweep => {
                let (l, b) = self.sweep.weight_grids();
                if l.is_empty() || b.is_empty() || l.iter().chain(&b).any(|x| !(0.0..=5.0).contains(x)) {
                    return Err(HarnessError::Config("lambda/beta grids must be non-empty within [0, 5]".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}
