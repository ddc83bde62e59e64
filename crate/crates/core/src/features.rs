//! Node feature matrices: precomputed vectors when every node has one,
//! otherwise an L2-normalized bag-of-words over node texts.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::TextAttributedGraph;
use crate::tensor::Tensor;

pub const DEFAULT_VOCAB: usize = 500;

/// Lowercased alphanumeric tokens of length ≥ 2.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
}

/// Feature matrix `|V| × d` for the graph.
pub fn feature_matrix(graph: &TextAttributedGraph, max_vocab: usize) -> Tensor {
    let nodes = graph.nodes();
    if !nodes.is_empty() && nodes.iter().all(|n| n.feature.is_some()) {
        let rows: Vec<Vec<f64>> = nodes.iter().map(|n| n.feature.clone().expect("checked")).collect();
        return Tensor::from_rows(&rows).expect("graph validates feature dimension");
    }
    bag_of_words(nodes.iter().map(|n| n.text.as_str()), max_vocab)
}

/// Term-count vectors over the `max_vocab` tokens with the highest document
/// frequency (ties broken alphabetically), each row scaled to unit length.
pub fn bag_of_words<'a>(texts: impl Iterator<Item = &'a str> + Clone, max_vocab: usize) -> Tensor {
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for t in texts.clone() {
        let unique: BTreeSet<String> = tokenize(t).collect();
        for tok in unique {
            *df.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_vocab.max(1));
    let vocab: BTreeMap<String, usize> = ranked.into_iter().enumerate().map(|(i, (t, _))| (t, i)).collect();
    let d = vocab.len().max(1);
    let rows: Vec<Vec<f64>> = texts
        .map(|t| {
            let mut row = vec![0.0; d];
            for tok in tokenize(t) {
                if let Some(&j) = vocab.get(&tok) {
                    row[j] += 1.0;
                }
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect();
    Tensor::from_rows(&rows).expect("uniform width")
}
