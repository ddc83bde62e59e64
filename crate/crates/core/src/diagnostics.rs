//! Embedding variation `M(H)`, gradient steps on it, the shrinking check,
//! embedding export and a silhouette score.
//!
//! `M(H) = ½ Σ_{(i,j)} ‖(A(i,j)/D(i,i)) h_i − (A(j,i)/D(j,j)) h_j‖²` summed over
//! the stored entries of `A`, with `D` its row sums.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;

/// Violations below this size are treated as rounding noise.
pub const SHRINK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("node {node} has an edge but non-positive degree")]
    ZeroDegree { node: usize },
    #[error("step size {0} outside (0, 1)")]
    StepSize(f64),
    #[error("embedding has {rows} rows for a {n}-node graph")]
    Shape { rows: usize, n: usize },
    #[error("csv: {0}")]
    Csv(String),
}

/// Which direction a variation step follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// The exact gradient of `M` (degrees held fixed).
    #[default]
    ExactGradient,
    /// `2 Σ_j [A(i,j)/D(i,i) · h_i − A(i,j)/D(j,j) · h_j]`, whose half-step is
    /// the propagation `H ← A·D⁻¹·H`.
    Propagation,
}

fn degrees(a: &SparseMatrix, h: &Tensor) -> Result<Vec<f64>, DiagnosticsError> {
    let n = a.n();
    if h.rows() != n {
        return Err(DiagnosticsError::Shape { rows: h.rows(), n });
    }
    let d = a.row_sums();
    let p = &a.pattern;
    for k in 0..p.nnz() {
        if a.values[k] != 0.0 {
            for node in [p.rows()[k], p.cols()[k]] {
                if d[node] <= 0.0 {
                    return Err(DiagnosticsError::ZeroDegree { node });
                }
            }
        }
    }
    Ok(d)
}

/// `A(j,i)` for every stored `(i,j)`; assumes the pattern is symmetric and
/// falls back to `A(i,j)` otherwise.
fn transposed_values(a: &SparseMatrix) -> Vec<f64> {
    let p = &a.pattern;
    (0..p.nnz())
        .map(|k| {
            let (i, j) = (p.rows()[k], p.cols()[k]);
            let range = p.row_range(j);
            let cols = &p.cols()[range.clone()];
            match cols.binary_search(&i) {
                Ok(off) => a.values[range.start + off],
                Err(_) => a.values[k],
            }
        })
        .collect()
}

/// `M(H)` over the stored entries of `a`.
pub fn embedding_variation(h: &Tensor, a: &SparseMatrix) -> Result<f64, DiagnosticsError> {
    let d = degrees(a, h)?;
    let at = transposed_values(a);
    let p = &a.pattern;
    let mut total = 0.0;
    for k in 0..p.nnz() {
        let (i, j) = (p.rows()[k], p.cols()[k]);
        if a.values[k] == 0.0 && at[k] == 0.0 {
            continue;
        }
        let (ci, cj) = (a.values[k] / d[i], at[k] / d[j]);
        total += h.row(i).iter().zip(h.row(j)).map(|(x, y)| (ci * x - cj * y).powi(2)).sum::<f64>();
    }
    Ok(0.5 * total)
}

/// Exact `∂M/∂H`.
pub fn variation_gradient(h: &Tensor, a: &SparseMatrix) -> Result<Tensor, DiagnosticsError> {
    let d = degrees(a, h)?;
    let at = transposed_values(a);
    let p = &a.pattern;
    let mut g = Tensor::zeros(h.rows(), h.cols());
    // Entry (i,j) contributes r = c_ij h_i − c_ji h_j; ∂/∂h_i = c_ij r and ∂/∂h_j = −c_ji r.
    for k in 0..p.nnz() {
        let (i, j) = (p.rows()[k], p.cols()[k]);
        if i == j || (a.values[k] == 0.0 && at[k] == 0.0) {
            continue;
        }
        let (ci, cj) = (a.values[k] / d[i], at[k] / d[j]);
        let r: Vec<f64> = h.row(i).iter().zip(h.row(j)).map(|(x, y)| ci * x - cj * y).collect();
        for (o, rv) in g.row_mut(i).iter_mut().zip(&r) {
            *o += ci * rv;
        }
        for (o, rv) in g.row_mut(j).iter_mut().zip(&r) {
            *o -= cj * rv;
        }
    }
    Ok(g)
}

/// `2 Σ_j [A(i,j)/D(i,i) · h_i − A(i,j)/D(j,j) · h_j]` for every node.
pub fn propagation_direction(h: &Tensor, a: &SparseMatrix) -> Result<Tensor, DiagnosticsError> {
    let d = degrees(a, h)?;
    let p = &a.pattern;
    let mut g = Tensor::zeros(h.rows(), h.cols());
    for k in 0..p.nnz() {
        let (i, j) = (p.rows()[k], p.cols()[k]);
        let (ci, cj) = (a.values[k] / d[i], a.values[k] / d[j]);
        let hj = h.row(j).to_vec();
        let hi = h.row(i).to_vec();
        for ((o, x), y) in g.row_mut(i).iter_mut().zip(&hi).zip(&hj) {
            *o += 2.0 * (ci * x - cj * y);
        }
    }
    Ok(g)
}

/// `H − η · direction(H)`; `η` must lie in `(0, 1)`.
pub fn variation_gradient_step(h: &Tensor, a: &SparseMatrix, eta: f64, rule: StepRule) -> Result<Tensor, DiagnosticsError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(DiagnosticsError::StepSize(eta));
    }
    let g = match rule {
        StepRule::ExactGradient => variation_gradient(h, a)?,
        StepRule::Propagation => propagation_direction(h, a)?,
    };
    let data = h.data().iter().zip(g.data()).map(|(x, gx)| x - eta * gx).collect();
    Ok(Tensor::from_vec(h.rows(), h.cols(), data).expect("same shape"))
}

/// `A·D⁻¹·H`, the propagation a half step of [`StepRule::Propagation`] reproduces.
pub fn degree_scaled_propagation(h: &Tensor, a: &SparseMatrix) -> Result<Tensor, DiagnosticsError> {
    let d = degrees(a, h)?;
    let p = &a.pattern;
    let mut out = Tensor::zeros(h.rows(), h.cols());
    for k in 0..p.nnz() {
        let (i, j) = (p.rows()[k], p.cols()[k]);
        let c = a.values[k] / d[j];
        let hj = h.row(j).to_vec();
        for (o, y) in out.row_mut(i).iter_mut().zip(&hj) {
            *o += c * y;
        }
    }
    Ok(out)
}

/// Per-step variation values for one step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub eta: f64,
    pub rule: StepRule,
    /// `M(H^(k))` for `k = 0..=steps`.
    pub values: Vec<f64>,
    pub monotone: bool,
    /// Largest `M(k+1) − M(k)` (negative when every step shrinks).
    pub max_increase: f64,
    pub violations: usize,
}

impl VariationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Iterates [`variation_gradient_step`] `steps` times for each `η` and records `M`.
pub fn shrinking_check(
    h0: &Tensor,
    a: &SparseMatrix,
    etas: &[f64],
    steps: usize,
    rule: StepRule,
) -> Result<Vec<VariationReport>, DiagnosticsError> {
    etas.iter()
        .map(|&eta| {
            let mut h = h0.clone();
            let mut values = vec![embedding_variation(&h, a)?];
            for _ in 0..steps {
                h = variation_gradient_step(&h, a, eta, rule)?;
                values.push(embedding_variation(&h, a)?);
            }
            let increases: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
            let violations = increases.iter().filter(|&&x| x > SHRINK_TOLERANCE).count();
            let max_increase = increases.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(VariationReport { eta, rule, values, monotone: violations == 0, max_increase, violations })
        })
        .collect()
}

/// Writes `id,class,h0..h{d−1}` for each node whose class passes `class_filter`.
/// Unlabeled nodes are written with an empty class unless a filter is given.
pub fn export_embeddings<W: Write>(
    out: W,
    embeddings: &Tensor,
    labels: &[Option<usize>],
    ids: &[i64],
    class_filter: Option<&[usize]>,
) -> Result<usize, DiagnosticsError> {
    let csv_err = |e: csv::Error| DiagnosticsError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "class".to_string()];
    header.extend((0..embeddings.cols()).map(|k| format!("h{k}")));
    w.write_record(&header).map_err(csv_err)?;
    let mut written = 0;
    for i in 0..embeddings.rows() {
        let keep = match (class_filter, labels[i]) {
            (None, _) => true,
            (Some(f), Some(c)) => f.contains(&c),
            (Some(_), None) => false,
        };
        if !keep {
            continue;
        }
        let mut rec = vec![ids[i].to_string(), labels[i].map(|c| c.to_string()).unwrap_or_default()];
        rec.extend(embeddings.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
        written += 1;
    }
    w.flush().map_err(|e| DiagnosticsError::Csv(e.to_string()))?;
    Ok(written)
}

/// Mean silhouette coefficient under Euclidean distance. Points in singleton
/// clusters score 0; returns 0 when fewer than two clusters are present.
pub fn silhouette(points: &Tensor, labels: &[usize]) -> f64 {
    let n = points.rows();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return 0.0;
    }
    let dist = |i: usize, j: usize| -> f64 {
        points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}
