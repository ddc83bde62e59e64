//! Candidate selection and the thresholded edge deletion/addition rule.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tagtopo_core::graph::TextAttributedGraph;
use tagtopo_core::rng;
use tagtopo_llm::{Gateway, PromptRequest};
use tracing::warn;

use crate::HarnessError;

/// Sampled existing edges (deletion pool) and non-adjacent second-order pairs
/// (addition pool). Pairs are stored `(low, high)` and sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub deletions: Vec<(usize, usize)>,
    pub additions: Vec<(usize, usize)>,
    pub cap: usize,
}

/// All unordered non-adjacent pairs that share at least one neighbour.
pub fn second_order_pairs(graph: &TextAttributedGraph) -> Vec<(usize, usize)> {
    let nbrs = graph.neighbors();
    let mut pairs = BTreeSet::new();
    for list in &nbrs {
        for (i, &u) in list.iter().enumerate() {
            for &w in &list[i + 1..] {
                if u != w && !graph.has_edge(u, w) {
                    pairs.insert((u.min(w), u.max(w)));
                }
            }
        }
    }
    pairs.into_iter().collect()
}

fn sample_sorted(pool: &[(usize, usize)], cap: usize, rng: &mut impl rand::Rng) -> Vec<(usize, usize)> {
    if pool.len() <= cap {
        return pool.to_vec();
    }
    let mut picked: Vec<(usize, usize)> = sample(rng, pool.len(), cap).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Uniform seeded samples of at most `cap` deletion and `cap` addition candidates.
pub fn select_candidates(graph: &TextAttributedGraph, cap: usize, seed: u64) -> Result<CandidateSet, HarnessError> {
    if cap == 0 {
        return Err(HarnessError::Config("candidate cap must be at least 1".into()));
    }
    if graph.num_edges() == 0 {
        return Err(HarnessError::Data("graph has no edges to refine".into()));
    }
    let mut existing: Vec<(usize, usize)> = graph.edges().iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    existing.sort_unstable();
    let deletions = sample_sorted(&existing, cap, &mut rng::stream(seed, "candidates-delete"));
    let additions = sample_sorted(&second_order_pairs(graph), cap, &mut rng::stream(seed, "candidates-add"));
    Ok(CandidateSet { deletions, additions, cap })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Delete,
    Add,
}

/// The model's relatedness score for one candidate, or why there is none.
#[derive(Debug, Clone, PartialEq)]
pub struct PairJudgment {
    pub pair: (usize, usize),
    pub kind: CandidateKind,
    pub ratio: Result<f64, String>,
}

/// Scores for every candidate, in candidate order (deletions then additions).
#[derive(Debug, Clone, PartialEq)]
pub struct Judgments {
    pub pairs: Vec<PairJudgment>,
}

impl Judgments {
    pub fn failures(&self) -> usize {
        self.pairs.iter().filter(|p| p.ratio.is_err()).count()
    }
}

/// Ask the gateway about every candidate (concurrently on the current rayon
/// pool). Individual failures are recorded; more than half failing aborts.
pub fn judge(
    graph: &TextAttributedGraph,
    candidates: &CandidateSet,
    gateway: &Gateway,
    example_count: usize,
) -> Result<Judgments, HarnessError> {
    let jobs: Vec<((usize, usize), CandidateKind)> = candidates
        .deletions
        .iter()
        .map(|&p| (p, CandidateKind::Delete))
        .chain(candidates.additions.iter().map(|&p| (p, CandidateKind::Add)))
        .collect();
    let pairs: Vec<PairJudgment> = jobs
        .par_iter()
        .map(|&((u, v), kind)| {
            let request = PromptRequest::similarity(u, graph.text(u), v, graph.text(v), example_count);
            let ratio = gateway.query(&request).map_err(|e| e.to_string()).and_then(|j| j.ratio.ok_or_else(|| "no ratio".into()));
            if let Err(e) = &ratio {
                warn!(u, v, error = %e, "candidate left undecided");
            }
            PairJudgment { pair: (u, v), kind, ratio }
        })
        .collect();
    let out = Judgments { pairs };
    if !out.pairs.is_empty() && 2 * out.failures() > out.pairs.len() {
        let first = out.pairs.iter().find_map(|p| p.ratio.as_ref().err()).cloned().unwrap_or_default();
        return Err(HarnessError::Backend(format!(
            "{} of {} similarity queries failed (first: {first})",
            out.failures(),
            out.pairs.len()
        )));
    }
    Ok(out)
}

/// What happened to one candidate. `Keep` leaves the graph as it was: an
/// existing edge survives, an addition candidate stays absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Keep,
    Delete,
    Add,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeVerdict {
    pub src: usize,
    pub dst: usize,
    pub kind: CandidateKind,
    pub ratio: Option<f64>,
    pub action: Action,
    pub threshold: f64,
}

/// Action for a scored candidate: an edge is present after refinement
/// exactly when its ratio is strictly above the threshold.
pub fn decide(kind: CandidateKind, ratio: Option<f64>, threshold: f64) -> Action {
    match (kind, ratio) {
        (_, None) => Action::Skip,
        (CandidateKind::Delete, Some(r)) if r > threshold => Action::Keep,
        (CandidateKind::Delete, Some(_)) => Action::Delete,
        (CandidateKind::Add, Some(r)) if r > threshold => Action::Add,
        (CandidateKind::Add, Some(_)) => Action::Keep,
    }
}

/// Refined graph plus the verdict for every candidate.
#[derive(Debug, Clone)]
pub struct Refined {
    pub graph: TextAttributedGraph,
    pub verdicts: Vec<EdgeVerdict>,
}

impl Refined {
    pub fn count(&self, action: Action) -> usize {
        self.verdicts.iter().filter(|v| v.action == action).count()
    }
}

/// Apply the threshold rule. Skipped candidates are neutral (deletions kept,
/// additions not added); edges that were not candidates are untouched and
/// keep their original order, with additions appended.
pub fn apply_thresholds(graph: &TextAttributedGraph, judgments: &Judgments, xi_del: f64, xi_add: f64) -> Result<Refined, HarnessError> {
    for (name, xi) in [("xi_del", xi_del), ("xi_add", xi_add)] {
        if !(0.0..=1.0).contains(&xi) {
            return Err(HarnessError::Config(format!("{name} = {xi} outside [0, 1]")));
        }
    }
    let mut verdicts = Vec::with_capacity(judgments.pairs.len());
    let mut removed = HashSet::new();
    let mut added = Vec::new();
    for p in &judgments.pairs {
        let threshold = match p.kind {
            CandidateKind::Delete => xi_del,
            CandidateKind::Add => xi_add,
        };
        let action = decide(p.kind, p.ratio.as_ref().ok().copied(), threshold);
        match action {
            Action::Delete => {
                removed.insert(p.pair);
            }
            Action::Add => added.push(p.pair),
            _ => {}
        }
        verdicts.push(EdgeVerdict { src: p.pair.0, dst: p.pair.1, kind: p.kind, ratio: p.ratio.as_ref().ok().copied(), action, threshold });
    }
    let mut edges: Vec<(usize, usize)> =
        graph.edges().iter().copied().filter(|&(u, v)| !removed.contains(&(u.min(v), u.max(v)))).collect();
    edges.extend(added);
    let refined = graph.with_edges(edges).map_err(|e| HarnessError::Data(e.to_string()))?;
    Ok(Refined { graph: refined, verdicts })
}

#[derive(Serialize)]
struct VerdictRow {
    src: i64,
    dst: i64,
    kind: CandidateKind,
    ratio: Option<f64>,
    action: Action,
    threshold: f64,
}

/// Verdict log as CSV `src,dst,kind,ratio,action,threshold`, using file ids.
pub fn write_verdicts<W: Write>(out: W, verdicts: &[EdgeVerdict], original_ids: &[i64]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for v in verdicts {
        w.serialize(VerdictRow {
            src: original_ids[v.src],
            dst: original_ids[v.dst],
            kind: v.kind,
            ratio: v.ratio,
            action: v.action,
            threshold: v.threshold,
        })?;
    }
    w.flush()?;
    Ok(())
}
