//! Post-training diagnostics: does the learned topology shrink embedding
//! variation under gradient steps, and how separated are the embeddings.

use std::fs::File;
use std::io::BufWriter;

use serde::Serialize;
use tagtopo_core::diagnostics::{
    degree_scaled_propagation, export_embeddings, shrinking_check, silhouette, variation_gradient_step, StepRule,
    VariationReport,
};
use tagtopo_core::sparse::SparseMatrix;
use tagtopo_core::tensor::Tensor;
use tagtopo_core::train::{edge_weight_stats, EdgeWeightStats};
use tracing::info;

use crate::data::load_dataset;
use crate::pipeline::run;
use crate::config::ExperimentSpec;
use crate::HarnessError;

pub const DIAGNOSTICS_DIR: &str = "diagnostics";
pub const REPORT_FILE: &str = "diagnostics.json";
pub const EMBEDDINGS_FILE: &str = "embeddings_hidden.csv";
pub const DEFAULT_ETAS: [f64; 4] = [0.1, 0.25, 0.5, 0.9];
pub const DEFAULT_STEPS: usize = 10;
/// Largest allowed gap between a half propagation-rule step and `A·D⁻¹·H`.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Everything the diagnose verb measures for one trained model.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub variant: String,
    pub seed: u64,
    pub steps: usize,
    /// Shrinking check starting from the input features.
    pub input: Vec<VariationReport>,
    /// Shrinking check starting from the first hidden layer.
    pub hidden: Vec<VariationReport>,
    pub violations: usize,
    /// Max-norm gap of the half-step identity, relative to `max(1, ‖A·D⁻¹·H‖∞)`.
    pub identity_gap: f64,
    pub silhouette_input: f64,
    pub silhouette_hidden: f64,
    pub edge_weights: EdgeWeightStats,
}

/// Relative max-norm difference between a `η = ½` propagation-rule step and
/// the degree-scaled propagation of `h`.
pub fn identity_gap(h: &Tensor, a: &SparseMatrix) -> Result<f64, HarnessError> {
    let check = |e: tagtopo_core::diagnostics::DiagnosticsError| HarnessError::Check(e.to_string());
    let step = variation_gradient_step(h, a, 0.5, StepRule::Propagation).map_err(check)?;
    let prop = degree_scaled_propagation(h, a).map_err(check)?;
    let scale = prop.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let gap = step.data().iter().zip(prop.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(gap / scale)
}

/// Silhouette over the labeled rows only.
fn labeled_silhouette(points: &Tensor, labels: &[Option<usize>]) -> f64 {
    let keep: Vec<(usize, usize)> = labels.iter().enumerate().filter_map(|(i, l)| Some((i, (*l)?))).collect();
    let data = keep.iter().flat_map(|&(i, _)| points.row(i).to_vec()).collect();
    let sub = Tensor::from_vec(keep.len(), points.cols(), data).expect("row-aligned");
    silhouette(&sub, &keep.iter().map(|&(_, c)| c).collect::<Vec<_>>())
}

/// Train the spec's mode on its first seed, then run the shrinking check on
/// the learned adjacency (from the features and from the hidden layer) for
/// every `η` in `etas`. Writes `diagnostics/` under the output directory and
/// fails with a check error on any violation.
pub fn diagnose(spec: &ExperimentSpec, etas: &[f64], steps: usize) -> Result<DiagnosticsReport, HarnessError> {
    if spec.mode.is_sweep() {
        return Err(HarnessError::Config(format!("diagnose needs a single-variant mode, not {}", spec.mode.name())));
    }
    let seed = *spec.train.seeds.first().ok_or_else(|| HarnessError::Config("no training seeds".into()))?;
    let mut single = spec.clone();
    single.train.seeds = vec![seed];
    let result = run(&single)?;
    let ds = load_dataset(&spec.data, spec.seed)?;
    let variant = result.variants.first().expect("single-variant mode");
    let outcome = variant.outcomes.first().expect("one seed");

    let check = |e: &dyn std::fmt::Display| HarnessError::Check(e.to_string());
    let a = outcome.adjacency.matrix();
    let norm = outcome.adjacency.normalize().map_err(|e| check(&e))?;
    let (_, hidden) = outcome.model.infer(&norm.pattern, &norm.values, &ds.features).map_err(|e| check(&e))?;
    let h1 = hidden.first().cloned().unwrap_or_else(|| ds.features.clone());

    let input = shrinking_check(&ds.features, &a, etas, steps, StepRule::ExactGradient).map_err(|e| check(&e))?;
    let hidden_reports = shrinking_check(&h1, &a, etas, steps, StepRule::ExactGradient).map_err(|e| check(&e))?;
    let violations = input.iter().chain(&hidden_reports).map(|r| r.violations).sum();
    let gap = identity_gap(&ds.features, &a)?.max(identity_gap(&h1, &a)?);

    let report = DiagnosticsReport {
        variant: variant.variant.clone(),
        seed,
        steps,
        input,
        hidden: hidden_reports,
        violations,
        identity_gap: gap,
        silhouette_input: labeled_silhouette(&ds.features, &ds.labels),
        silhouette_hidden: labeled_silhouette(&h1, &ds.labels),
        edge_weights: edge_weight_stats(&outcome.adjacency, &ds.labels, ds.graph.num_classes()),
    };

    let dir = spec.out.join(DIAGNOSTICS_DIR);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    export_embeddings(BufWriter::new(File::create(dir.join(EMBEDDINGS_FILE))?), &h1, &ds.labels, ds.graph.original_ids(), None)
        .map_err(|e| check(&e))?;
    info!(violations, identity_gap = gap, "diagnostics written");

    if violations > 0 {
        return Err(HarnessError::Check(format!("{violations} variation increases under gradient steps")));
    }
    if gap > IDENTITY_TOLERANCE {
        return Err(HarnessError::Check(format!("half-step identity off by {gap:e}")));
    }
    Ok(report)
}
