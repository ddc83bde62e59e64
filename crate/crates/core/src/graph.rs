//! Text-attributed graphs: data model, file ingestion, splits and edge statistics.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::sparse::{AdjacencyError, WeightedAdjacency};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("edge on line {line} references unknown node id {id}")]
    DanglingEndpoint { line: usize, id: i64 },
    #[error("edge ({0}, {1}) out of range")]
    EdgeOutOfRange(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("feature row {row} has {got} columns, expected {expected}")]
    FeatureDim { row: usize, expected: usize, got: usize },
    #[error("feature file has {got} rows for {expected} nodes")]
    FeatureRows { expected: usize, got: usize },
    #[error("node {0} has neither text nor a feature vector")]
    NoFeatureSource(usize),
    #[error("node {node} label {label} outside [0, {num_classes})")]
    BadLabel { node: usize, label: usize, num_classes: usize },
    #[error("node {0} is unlabeled")]
    Unlabeled(usize),
    #[error("class {0} has no labeled nodes")]
    EmptyClass(usize),
    #[error("graph has no labeled nodes")]
    NoLabels,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Adjacency(#[from] AdjacencyError),
}

/// One node: dense index, free text, optional class and optional precomputed feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub text: String,
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

/// Nodes with text and labels plus an undirected, loop-free, duplicate-free
/// edge list kept sorted as `(u, v)` pairs with `u < v`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextAttributedGraph {
    nodes: Vec<NodeRecord>,
    edges: Vec<(usize, usize)>,
    num_classes: usize,
    original_ids: Vec<i64>,
}

impl TextAttributedGraph {
    /// Validates and builds a graph. Edges are stored as `(u, v)` with `u < v`.
    pub fn new(nodes: Vec<NodeRecord>, edges: Vec<(usize, usize)>, num_classes: usize) -> Result<Self, GraphError> {
        let n = nodes.len();
        let mut seen = BTreeSet::new();
        let mut norm = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::EdgeOutOfRange(u, v));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            let e = (u.min(v), u.max(v));
            if !seen.insert(e) {
                return Err(GraphError::DuplicateEdge(e.0, e.1));
            }
            norm.push(e);
        }
        let mut dim = None;
        for (i, node) in nodes.iter().enumerate() {
            if let Some(label) = node.label {
                if label >= num_classes {
                    return Err(GraphError::BadLabel { node: i, label, num_classes });
                }
            }
            match &node.feature {
                Some(f) => match dim {
                    None => dim = Some(f.len()),
                    Some(d) if d != f.len() => {
                        return Err(GraphError::FeatureDim { row: i, expected: d, got: f.len() })
                    }
                    _ => {}
                },
                None if node.text.trim().is_empty() => return Err(GraphError::NoFeatureSource(i)),
                None => {}
            }
        }
        norm.sort_unstable();
        let original_ids = (0..n as i64).collect();
        let nodes = nodes.into_iter().enumerate().map(|(i, r)| NodeRecord { id: i, ..r }).collect();
        Ok(Self { nodes, edges: norm, num_classes, original_ids })
    }

    pub fn with_original_ids(mut self, ids: Vec<i64>) -> Self {
        assert_eq!(ids.len(), self.nodes.len());
        self.original_ids = ids;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn original_ids(&self) -> &[i64] {
        &self.original_ids
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(|n| n.label).collect()
    }

    pub fn text(&self, i: usize) -> &str {
        &self.nodes[i].text
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Unit-weight adjacency over this graph's edges.
    pub fn adjacency(&self, self_loop: bool) -> WeightedAdjacency {
        WeightedAdjacency::new(self.nodes.len(), &self.edges, self_loop).expect("graph edges are validated")
    }

    /// Same nodes, different edge set.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        let g = Self::new(self.nodes.clone(), edges, self.num_classes)?;
        Ok(g.with_original_ids(self.original_ids.clone()))
    }

    /// Induced subgraph on `keep` (order preserved, indices remapped densely).
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Self, GraphError> {
        let mut map = HashMap::with_capacity(keep.len());
        for (new, &old) in keep.iter().enumerate() {
            map.insert(old, new);
        }
        let nodes = keep.iter().map(|&i| self.nodes[i].clone()).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|(u, v)| Some((*map.get(u)?, *map.get(v)?)))
            .collect();
        let ids = keep.iter().map(|&i| self.original_ids[i]).collect();
        Ok(Self::new(nodes, edges, self.num_classes)?.with_original_ids(ids))
    }
}

#[derive(Deserialize)]
struct NodeLine {
    id: i64,
    #[serde(default)]
    text: String,
    #[serde(default)]
    label: Option<i64>,
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Malformed { file: path.display().to_string(), line, msg: msg.into() }
}

/// Loads a graph from a JSONL node file, a `src,dst` CSV edge file and an
/// optional headerless feature CSV (row `i` belongs to the `i`-th node line).
///
/// Node ids are remapped densely in file order. Reversed and repeated edges
/// collapse to one undirected edge; self-loops in the edge file are dropped
/// because normalization adds them uniformly.
pub fn load_graph(node_file: &Path, edge_file: &Path, feature_file: Option<&Path>) -> Result<TextAttributedGraph, GraphError> {
    let reader = BufReader::new(File::open(node_file)?);
    let mut nodes = Vec::new();
    let mut ids = Vec::new();
    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut max_label = None;
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeLine = serde_json::from_str(&line).map_err(|e| malformed(node_file, ln + 1, e.to_string()))?;
        if index.insert(rec.id, nodes.len()).is_some() {
            return Err(malformed(node_file, ln + 1, format!("duplicate node id {}", rec.id)));
        }
        let label = match rec.label {
            Some(l) if l < 0 => return Err(malformed(node_file, ln + 1, format!("negative label {l}"))),
            Some(l) => Some(l as usize),
            None => None,
        };
        if let Some(l) = label {
            max_label = Some(max_label.map_or(l, |m: usize| m.max(l)));
        }
        ids.push(rec.id);
        nodes.push(NodeRecord { id: nodes.len(), text: rec.text, label, feature: None });
    }

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(edge_file).map_err(csv_io)?;
    let headers = rdr.headers().map_err(csv_io)?.clone();
    if headers.len() < 2 || &headers[0] != "src" || &headers[1] != "dst" {
        return Err(malformed(edge_file, 1, "expected header `src,dst`"));
    }
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| malformed(edge_file, line, e.to_string()))?;
        if rec.len() < 2 {
            return Err(malformed(edge_file, line, "expected two columns"));
        }
        let parse = |s: &str| s.parse::<i64>().map_err(|e| malformed(edge_file, line, format!("{s:?}: {e}")));
        let (a, b) = (parse(&rec[0])?, parse(&rec[1])?);
        let u = *index.get(&a).ok_or(GraphError::DanglingEndpoint { line, id: a })?;
        let v = *index.get(&b).ok_or(GraphError::DanglingEndpoint { line, id: b })?;
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if seen.insert(e) {
            edges.push(e);
        }
    }

    if let Some(path) = feature_file {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path).map_err(csv_io)?;
        let mut rows = 0;
        let mut dim = None;
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| malformed(path, k + 1, e.to_string()))?;
            let row: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| malformed(path, k + 1, format!("{s:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            let d = *dim.get_or_insert(row.len());
            if row.len() != d {
                return Err(GraphError::FeatureDim { row: k, expected: d, got: row.len() });
            }
            if k < nodes.len() {
                nodes[k].feature = Some(row);
            }
            rows += 1;
        }
        if rows != nodes.len() {
            return Err(GraphError::FeatureRows { expected: nodes.len(), got: rows });
        }
    }

    let num_classes = max_label.map_or(0, |m| m + 1);
    Ok(TextAttributedGraph::new(nodes, edges, num_classes)?.with_original_ids(ids))
}

fn csv_io(e: csv::Error) -> GraphError {
    GraphError::Io(std::io::Error::other(e.to_string()))
}

/// How labeled nodes are divided into train/val/test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// Fractions of all labeled nodes; test takes the remainder.
    General { train: f64, val: f64 },
    /// `per_class` training nodes per class, then `val` and `test` from the rest.
    FewShot { per_class: usize, val: usize, test: usize },
}

impl SplitPolicy {
    pub fn general() -> Self {
        SplitPolicy::General { train: 0.6, val: 0.2 }
    }

    pub fn few_shot() -> Self {
        SplitPolicy::FewShot { per_class: 20, val: 500, test: 1000 }
    }
}

/// Disjoint train/val/test node sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(skip, default = "SplitPolicy::general")]
    pub policy: SplitPolicy,
}

impl DatasetSplit {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Seeded split of labeled nodes.
///
/// Under the few-shot policy, when fewer than `val + test` nodes remain after
/// the training draw, the remainder is divided one third to validation and the
/// rest to test.
pub fn make_split(graph: &TextAttributedGraph, policy: SplitPolicy, seed: u64) -> Result<DatasetSplit, GraphError> {
    let mut rng = rng::stream(seed, "split");
    let labeled: Vec<usize> = (0..graph.num_nodes()).filter(|&i| graph.nodes[i].label.is_some()).collect();
    if labeled.is_empty() {
        return Err(GraphError::NoLabels);
    }
    let (mut train, mut val, mut test) = match policy {
        SplitPolicy::General { train, val } => {
            let mut pool = labeled;
            pool.shuffle(&mut rng);
            let n = pool.len();
            let n_train = (train * n as f64).round() as usize;
            let n_val = ((val * n as f64).round() as usize).min(n - n_train);
            let test = pool.split_off(n_train + n_val);
            let val = pool.split_off(n_train);
            (pool, val, test)
        }
        SplitPolicy::FewShot { per_class, val, test } => {
            let mut by_class = vec![Vec::new(); graph.num_classes];
            for &i in &labeled {
                by_class[graph.nodes[i].label.expect("filtered")].push(i);
            }
            let mut train = Vec::new();
            let mut rest = Vec::new();
            for (c, mut members) in by_class.into_iter().enumerate() {
                if members.is_empty() {
                    return Err(GraphError::EmptyClass(c));
                }
                members.shuffle(&mut rng);
                let k = per_class.min(members.len());
                rest.extend_from_slice(&members[k..]);
                members.truncate(k);
                train.extend(members);
            }
            rest.sort_unstable();
            rest.shuffle(&mut rng);
            let (n_val, n_test) = if rest.len() >= val + test {
                (val, test)
            } else {
                let v = rest.len() / 3;
                (v, rest.len() - v)
            };
            let val_set = rest[..n_val].to_vec();
            let test_set = rest[n_val..n_val + n_test].to_vec();
            (train, val_set, test_set)
        }
    };
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit { train, val, test, policy })
}

/// Share of edges whose endpoints carry different labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnreliableEdgeStats {
    pub total_edges: usize,
    pub cross_class_edges: usize,
    pub overall: f64,
    /// Ratio over edges with at least one endpoint in the class; `None` when no
    /// edge touches the class.
    pub per_class: Vec<Option<f64>>,
}

pub fn unreliable_edge_ratio(graph: &TextAttributedGraph) -> Result<UnreliableEdgeStats, GraphError> {
    let k = graph.num_classes;
    let mut touching = vec![0usize; k];
    let mut cross_touching = vec![0usize; k];
    let mut cross = 0;
    for &(u, v) in &graph.edges {
        let a = graph.nodes[u].label.ok_or(GraphError::Unlabeled(u))?;
        let b = graph.nodes[v].label.ok_or(GraphError::Unlabeled(v))?;
        let is_cross = a != b;
        cross += usize::from(is_cross);
        touching[a] += 1;
        cross_touching[a] += usize::from(is_cross);
        if b != a {
            touching[b] += 1;
            cross_touching[b] += 1;
        }
    }
    let total = graph.edges.len();
    let overall = if total == 0 { 0.0 } else { cross as f64 / total as f64 };
    let per_class = (0..k)
        .map(|c| (touching[c] > 0).then(|| cross_touching[c] as f64 / touching[c] as f64))
        .collect();
    Ok(UnreliableEdgeStats { total_edges: total, cross_class_edges: cross, overall, per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn node(text: &str, label: Option<usize>) -> NodeRecord {
        NodeRecord { id: 0, text: text.into(), label, feature: None }
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn load_dedups_reversed_edges() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write(
            dir.path(),
            "n.jsonl",
            "{\"id\": 10, \"text\": \"a\", \"label\": 0}\n{\"id\": 11, \"text\": \"b\", \"label\": 1}\n{\"id\": 12, \"text\": \"c\", \"label\": null}\n",
        );
        let edges = write(dir.path(), "e.csv", "src,dst\n10,11\n11,10\n11,12\n");
        let g = load_graph(&nodes, &edges, None).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.original_ids(), &[10, 11, 12]);
        assert_eq!(g.num_classes(), 2);
    }

    #[test]
    fn dangling_endpoint_reported() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write(dir.path(), "n.jsonl", "{\"id\":0,\"text\":\"a\"}\n{\"id\":1,\"text\":\"b\"}\n{\"id\":2,\"text\":\"c\"}\n");
        let edges = write(dir.path(), "e.csv", "src,dst\n0,1\n2,99\n");
        match load_graph(&nodes, &edges, None) {
            Err(GraphError::DanglingEndpoint { line, id }) => assert_eq!((line, id), (3, 99)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_has_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write(dir.path(), "n.jsonl", "{\"id\":0,\"text\":\"a\"}\n{\"id\": oops}\n");
        let edges = write(dir.path(), "e.csv", "src,dst\n");
        let err = load_graph(&nodes, &edges, None).unwrap_err();
        assert!(matches!(err, GraphError::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn feature_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write(dir.path(), "n.jsonl", "{\"id\":0,\"text\":\"a\"}\n{\"id\":1,\"text\":\"b\"}\n");
        let edges = write(dir.path(), "e.csv", "src,dst\n0,1\n");
        let feats = write(dir.path(), "f.csv", "1.0,2.0\n3.0\n");
        let err = load_graph(&nodes, &edges, Some(&feats)).unwrap_err();
        assert!(matches!(err, GraphError::FeatureDim { row: 1, expected: 2, got: 1 }));
        let feats = write(dir.path(), "g.csv", "1.0,2.0\n3.0,4.0\n");
        let g = load_graph(&nodes, &edges, Some(&feats)).unwrap();
        assert_eq!(g.nodes()[1].feature.as_deref(), Some(&[3.0, 4.0][..]));
    }

    #[test]
    fn node_without_text_or_feature_rejected() {
        let err = TextAttributedGraph::new(vec![node("", None)], vec![], 1).unwrap_err();
        assert!(matches!(err, GraphError::NoFeatureSource(0)));
    }

    fn labeled_graph(labels: &[usize], edges: Vec<(usize, usize)>) -> TextAttributedGraph {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let nodes = labels.iter().map(|&l| node("t", Some(l))).collect();
        TextAttributedGraph::new(nodes, edges, k).unwrap()
    }

    #[test]
    fn general_split_sizes() {
        let g = labeled_graph(&vec![0; 100], vec![]);
        let s = make_split(&g, SplitPolicy::general(), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
        let mut all: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, make_split(&g, SplitPolicy::general(), 3).unwrap());
    }

    #[test]
    fn few_shot_twenty_per_class() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let g = labeled_graph(&labels, vec![]);
        let s = make_split(&g, SplitPolicy::few_shot(), 1).unwrap();
        assert_eq!(s.train.len(), 80);
        for c in 0..4 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 20);
        }
        assert_eq!(s.val.len() + s.test.len(), 320);
    }

    #[test]
    fn few_shot_empty_class_errors() {
        let mut nodes: Vec<_> = (0..10).map(|_| node("t", Some(0))).collect();
        nodes.push(node("t", None));
        let g = TextAttributedGraph::new(nodes, vec![], 2).unwrap();
        assert!(matches!(make_split(&g, SplitPolicy::few_shot(), 0), Err(GraphError::EmptyClass(1))));
    }

    #[test]
    fn split_json_has_three_arrays() {
        let s = DatasetSplit { train: vec![0], val: vec![1], test: vec![2, 3], policy: SplitPolicy::general() };
        assert_eq!(s.to_json(), r#"{"train":[0],"val":[1],"test":[2,3]}"#);
        assert_eq!(DatasetSplit::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn unreliable_ratio_planted() {
        // 100 edges on 200 nodes, first 30 join different classes.
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let edges: Vec<_> = (0..100).map(|k| if k < 30 { (2 * k, 2 * k + 1) } else { (2 * k, (2 * k + 2) % 200) }).collect();
        let g = labeled_graph(&labels, edges);
        let stats = unreliable_edge_ratio(&g).unwrap();
        assert_eq!(stats.cross_class_edges, 30);
        assert_eq!(stats.overall, 0.30);
    }

    #[test]
    fn unreliable_ratio_same_class_is_zero() {
        let g = labeled_graph(&[0, 0, 1, 1], vec![(0, 1), (2, 3)]);
        let stats = unreliable_edge_ratio(&g).unwrap();
        assert_eq!(stats.overall, 0.0);
        assert_eq!(stats.per_class, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn unreliable_ratio_needs_labels() {
        let g = TextAttributedGraph::new(vec![node("a", Some(0)), node("b", None)], vec![(0, 1)], 1).unwrap();
        assert!(matches!(unreliable_edge_ratio(&g), Err(GraphError::Unlabeled(1))));
    }
}
