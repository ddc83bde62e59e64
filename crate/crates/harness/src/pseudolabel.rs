//! Category rankings from the model for every node outside the training set.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use tagtopo_llm::{Gateway, PromptRequest};
use tracing::warn;

use crate::data::Dataset;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelOrigin {
    /// First-ranked category from the model.
    Model,
    /// Most frequent training class, used when the model gave no usable answer.
    Fallback,
    /// Training node: its true label is used, no question was asked.
    Train,
}

/// Pseudo-label per node (`None` on training nodes) with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<Option<usize>>,
    pub rankings: Vec<Option<Vec<usize>>>,
    pub origin: Vec<LabelOrigin>,
}

impl PseudoLabels {
    /// Share of pseudo-labelled nodes whose pseudo-label equals the truth.
    pub fn accuracy(&self, truth: &[Option<usize>]) -> Option<f64> {
        let judged: Vec<bool> = self
            .labels
            .iter()
            .zip(truth)
            .filter_map(|(p, t)| Some(p.as_ref()? == t.as_ref()?))
            .collect();
        (!judged.is_empty()).then(|| judged.iter().filter(|&&b| b).count() as f64 / judged.len() as f64)
    }

    pub fn fallbacks(&self) -> usize {
        self.origin.iter().filter(|o| **o == LabelOrigin::Fallback).count()
    }
}

/// Most frequent class among training nodes; ties go to the lower index.
pub fn majority_train_class(ds: &Dataset) -> usize {
    let mut counts = vec![0usize; ds.graph.num_classes()];
    for &i in &ds.split.train {
        if let Some(l) = ds.labels[i] {
            counts[l] += 1;
        }
    }
    (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0)
}

/// Query a ranking for every non-training node (concurrently on the current
/// rayon pool). Unusable answers fall back to the majority training class;
/// more than half failing aborts.
pub fn pseudo_label(ds: &Dataset, gateway: &Gateway) -> Result<PseudoLabels, HarnessError> {
    let n = ds.graph.num_nodes();
    let mut is_train = vec![false; n];
    for &i in &ds.split.train {
        is_train[i] = true;
    }
    let fallback = majority_train_class(ds);
    let answers: Vec<Option<Result<Vec<usize>, String>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if is_train[i] {
                return None;
            }
            let request = PromptRequest::pseudo_label(i, ds.graph.text(i), &ds.categories);
            let answer = gateway
                .query(&request)
                .map_err(|e| e.to_string())
                .and_then(|j| j.ranked_categories.ok_or_else(|| "no ranking".into()));
            if let Err(e) = &answer {
                warn!(node = i, error = %e, "falling back to the majority training class");
            }
            Some(answer)
        })
        .collect();
    let asked = answers.iter().flatten().count();
    let failed = answers.iter().flatten().filter(|a| a.is_err()).count();
    if asked > 0 && 2 * failed > asked {
        return Err(HarnessError::Backend(format!("{failed} of {asked} ranking queries failed")));
    }
    let mut out = PseudoLabels { labels: vec![None; n], rankings: vec![None; n], origin: vec![LabelOrigin::Train; n] };
    for (i, a) in answers.into_iter().enumerate() {
        match a {
            None => {}
            Some(Ok(r)) => {
                out.labels[i] = r.first().copied();
                out.rankings[i] = Some(r);
                out.origin[i] = LabelOrigin::Model;
            }
            Some(Err(_)) => {
                out.labels[i] = Some(fallback);
                out.origin[i] = LabelOrigin::Fallback;
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct PseudoRow {
    node_id: i64,
    pseudo_label: Option<usize>,
    ranking: String,
    origin: LabelOrigin,
}

/// CSV `node_id,pseudo_label,ranking,origin`; the ranking is `;`-separated.
pub fn write_pseudo_labels<W: Write>(out: W, p: &PseudoLabels, original_ids: &[i64]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for i in 0..p.labels.len() {
        let ranking = p.rankings[i]
            .as_ref()
            .map(|r| r.iter().map(usize::to_string).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        w.serialize(PseudoRow { node_id: original_ids[i], pseudo_label: p.labels[i], ranking, origin: p.origin[i] })?;
    }
    w.flush()?;
    Ok(())
}
