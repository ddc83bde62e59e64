//! Stochastic-block-model fixtures with class-indicative features and texts.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NodeRecord, TextAttributedGraph};
use crate::rng;

const CATEGORY_NAMES: [&str; 8] =
    ["Agents", "Databases", "Learning", "Retrieval", "Vision", "Theory", "Robotics", "Networks"];

const FILLER_WORDS: [&str; 24] = [
    "method", "approach", "results", "paper", "study", "propose", "novel", "analysis", "framework", "evaluate",
    "performance", "system", "model", "data", "experiments", "efficient", "problem", "technique", "show",
    "present", "based", "new", "using", "improve",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("degenerate fixture: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub n_per_class: usize,
    pub classes: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    /// Standard deviation of the per-entry Gaussian noise around unit-norm class centroids.
    pub feature_noise: f64,
    /// Class keywords per node text (the rest is shared filler).
    pub keywords_per_text: usize,
    pub filler_per_text: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            n_per_class: 150,
            classes: 2,
            p_intra: 0.05,
            p_inter: 0.02,
            feature_dim: 16,
            feature_noise: 0.5,
            keywords_per_text: 3,
            filler_per_text: 6,
            seed: 0,
        }
    }
}

/// A generated graph plus the human-readable category names of its classes.
#[derive(Debug, Clone)]
pub struct SynthGraph {
    pub graph: TextAttributedGraph,
    pub categories: Vec<String>,
}

pub fn category_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| CATEGORY_NAMES.get(c).map_or_else(|| format!("Category {c}"), |s| s.to_string()))
        .collect()
}

fn class_keywords(name: &str) -> Vec<String> {
    let stem: String = name.to_lowercase().chars().filter(|c| c.is_alphanumeric()).collect();
    let mut words = vec![stem.clone()];
    words.extend((1..8).map(|k| format!("{stem}{k}")));
    words
}

/// Samples the fixture. Nodes `c·n_per_class .. (c+1)·n_per_class` belong to class `c`.
pub fn synth_fixture(cfg: &SbmConfig) -> Result<SynthGraph, SynthError> {
    if cfg.classes < 2 || cfg.n_per_class == 0 || cfg.feature_dim == 0 {
        return Err(SynthError::Degenerate(format!(
            "{} classes of {} nodes, feature dim {}",
            cfg.classes, cfg.n_per_class, cfg.feature_dim
        )));
    }
    for p in [cfg.p_intra, cfg.p_inter] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SynthError::Degenerate(format!("probability {p} outside [0, 1]")));
        }
    }
    if !(cfg.feature_noise >= 0.0 && cfg.feature_noise.is_finite()) {
        return Err(SynthError::Degenerate(format!("feature noise {}", cfg.feature_noise)));
    }
    let n = cfg.n_per_class * cfg.classes;
    let label = |i: usize| i / cfg.n_per_class;

    let mut edge_rng = rng::stream(cfg.seed, "synth-edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if label(u) == label(v) { cfg.p_intra } else { cfg.p_inter };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut feat_rng = rng::stream(cfg.seed, "synth-features");
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let centroids: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.feature_dim).map(|_| std_normal.sample(&mut feat_rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let categories = category_names(cfg.classes);
    let keywords: Vec<Vec<String>> = categories.iter().map(|c| class_keywords(c)).collect();
    let mut text_rng = rng::stream(cfg.seed, "synth-text");
    let nodes = (0..n)
        .map(|i| {
            let c = label(i);
            let feature = centroids[c].iter().map(|m| m + cfg.feature_noise * std_normal.sample(&mut feat_rng)).collect();
            let mut words: Vec<&str> = keywords[c].choose_multiple(&mut text_rng, cfg.keywords_per_text).map(String::as_str).collect();
            words.extend(FILLER_WORDS.choose_multiple(&mut text_rng, cfg.filler_per_text).copied());
            NodeRecord { id: i, text: words.join(" "), label: Some(c), feature: Some(feature) }
        })
        .collect();
    let graph = TextAttributedGraph::new(nodes, edges, cfg.classes)?;
    Ok(SynthGraph { graph, categories })
}
