//! Turning a data section into a graph, feature matrix, labels and split.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use tagtopo_core::features::{feature_matrix, DEFAULT_VOCAB};
use tagtopo_core::graph::{load_graph, make_split, DatasetSplit, TextAttributedGraph};
use tagtopo_core::rng;
use tagtopo_core::synth::synth_fixture;
use tagtopo_core::tensor::Tensor;

use crate::config::DataSpec;
use crate::HarnessError;

/// Everything an experiment reads about its dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: TextAttributedGraph,
    pub features: Tensor,
    pub labels: Vec<Option<usize>>,
    pub categories: Vec<String>,
    pub split: DatasetSplit,
}

/// Seeded choice of `k` node indices, returned in ascending order.
pub fn subsample_nodes(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.shuffle(&mut rng::stream(seed, "subsample"));
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

/// Load or generate the graph, subsample it, build features and draw the split.
pub fn load_dataset(spec: &DataSpec, seed: u64) -> Result<Dataset, HarnessError> {
    let data = |e: &dyn std::fmt::Display| HarnessError::Data(e.to_string());
    let (graph, default_names) = match (&spec.nodes, &spec.edges) {
        (Some(nodes), Some(edges)) => {
            let g = load_graph(nodes, edges, spec.features.as_deref()).map_err(|e| {
                HarnessError::Data(format!("loading {} / {}: {e}", nodes.display(), edges.display()))
            })?;
            let names = (0..g.num_classes()).map(|c| format!("Class {c}")).collect();
            (g, names)
        }
        _ => {
            let cfg = spec.synth.clone().ok_or_else(|| HarnessError::Config("no data source".into()))?;
            let s = synth_fixture(&cfg).map_err(|e| data(&e))?;
            (s.graph, s.categories)
        }
    };
    let graph = match spec.subsample {
        Some(k) if k < graph.num_nodes() => {
            graph.induced_subgraph(&subsample_nodes(graph.num_nodes(), k, seed)).map_err(|e| data(&e))?
        }
        _ => graph,
    };
    let categories = spec.categories.clone().unwrap_or(default_names);
    if categories.len() != graph.num_classes() {
        return Err(HarnessError::Config(format!(
            "{} category names for {} classes",
            categories.len(),
            graph.num_classes()
        )));
    }
    let features = feature_matrix(&graph, spec.vocab.unwrap_or(DEFAULT_VOCAB));
    let split = make_split(&graph, spec.split.policy(), seed).map_err(|e| data(&e))?;
    let labels = graph.labels();
    Ok(Dataset { graph, features, labels, categories, split })
}

pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.csv";
pub const FEATURES_FILE: &str = "features.csv";

/// Write `graph` in the loader's file format: `nodes.jsonl`, `edges.csv` and,
/// when every node carries a feature vector, a headerless `features.csv`.
/// Returns whether a feature file was written.
pub fn write_graph_files(graph: &TextAttributedGraph, dir: &Path) -> Result<bool, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let ids = graph.original_ids();
    let mut nodes = BufWriter::new(File::create(dir.join(NODES_FILE))?);
    for (i, n) in graph.nodes().iter().enumerate() {
        let line = serde_json::json!({ "id": ids[i], "text": n.text, "label": n.label });
        writeln!(nodes, "{line}")?;
    }
    nodes.flush()?;
    crate::pipeline::write_edges(BufWriter::new(File::create(dir.join(EDGES_FILE))?), graph)?;
    let feats: Option<Vec<&Vec<f64>>> = graph.nodes().iter().map(|n| n.feature.as_ref()).collect();
    let Some(feats) = feats else { return Ok(false) };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(FEATURES_FILE))?;
    for row in feats {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(true)
}
