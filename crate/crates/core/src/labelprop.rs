//! K-step label propagation over the learnable normalized adjacency, and the
//! propagation loss used to fit edge weights.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DatasetSplit;
use crate::kernel::{KernelError, Tape, Var};
use crate::sparse::{SparseMatrix, SparsePattern};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum LabelPropError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("training node {0} has no label")]
    UnlabeledTrain(usize),
    #[error("node {0} has neither a true training label nor a pseudo-label")]
    NoLabelSource(usize),
    #[error("label {label} of node {node} outside [0, {num_classes})")]
    BadLabel { node: usize, label: usize, num_classes: usize },
    #[error("propagation needs at least one step")]
    ZeroSteps,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    TrueLabels,
    LlmPseudo,
    Mixed,
}

/// Row-per-node label distributions; initialized rows are one-hot, others zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub rows: Tensor,
    pub source: LabelSource,
}

impl LabelMatrix {
    pub fn num_classes(&self) -> usize {
        self.rows.cols()
    }

    /// Number of rows carrying any mass.
    pub fn initialized_rows(&self) -> usize {
        (0..self.rows.rows()).filter(|&r| self.rows.row(r).iter().any(|&v| v != 0.0)).count()
    }
}

fn one_hot(m: &mut Tensor, node: usize, label: usize) -> Result<(), LabelPropError> {
    if label >= m.cols() {
        return Err(LabelPropError::BadLabel { node, label, num_classes: m.cols() });
    }
    m.set(node, label, 1.0);
    Ok(())
}

/// One-hot true labels on training nodes, zero rows elsewhere.
pub fn init_true(split: &DatasetSplit, labels: &[Option<usize>], num_classes: usize) -> Result<LabelMatrix, LabelPropError> {
    if split.train.is_empty() {
        return Err(LabelPropError::EmptyTrain);
    }
    let mut rows = Tensor::zeros(labels.len(), num_classes);
    for &i in &split.train {
        let l = labels[i].ok_or(LabelPropError::UnlabeledTrain(i))?;
        one_hot(&mut rows, i, l)?;
    }
    Ok(LabelMatrix { rows, source: LabelSource::TrueLabels })
}

/// True labels on training nodes, pseudo-labels on every other node.
pub fn init_llm(
    split: &DatasetSplit,
    labels: &[Option<usize>],
    pseudo_labels: &[Option<usize>],
    num_classes: usize,
) -> Result<LabelMatrix, LabelPropError> {
    if split.train.is_empty() {
        return Err(LabelPropError::EmptyTrain);
    }
    let n = labels.len();
    let mut is_train = vec![false; n];
    for &i in &split.train {
        is_train[i] = true;
    }
    let mut rows = Tensor::zeros(n, num_classes);
    for i in 0..n {
        let l = if is_train[i] {
            labels[i].ok_or(LabelPropError::UnlabeledTrain(i))?
        } else {
            pseudo_labels.get(i).copied().flatten().ok_or(LabelPropError::NoLabelSource(i))?
        };
        one_hot(&mut rows, i, l)?;
    }
    Ok(LabelMatrix { rows, source: LabelSource::LlmPseudo })
}

/// `Y^(K) = Ā^K · Y^(0)` on the tape; `values` are the stored entries of `Ā`.
pub fn propagate(
    tape: &mut Tape,
    pattern: &Arc<SparsePattern>,
    values: Var,
    y0: &LabelMatrix,
    steps: usize,
) -> Result<Var, LabelPropError> {
    if steps == 0 {
        return Err(LabelPropError::ZeroSteps);
    }
    let mut y = tape.constant(y0.rows.clone());
    for _ in 0..steps {
        y = tape.spmm(pattern, values, y)?;
    }
    Ok(y)
}

/// Tape-free propagation for reporting and inference.
pub fn propagate_plain(norm: &SparseMatrix, y0: &Tensor, steps: usize) -> Tensor {
    (0..steps).fold(y0.clone(), |y, _| norm.spmm(&y))
}

/// One-hot training targets as an `n × C` matrix.
pub fn train_targets(labels: &[Option<usize>], num_classes: usize, train: &[usize]) -> Result<Tensor, LabelPropError> {
    let mut t = Tensor::zeros(labels.len(), num_classes);
    for &i in train {
        let l = labels[i].ok_or(LabelPropError::UnlabeledTrain(i))?;
        one_hot(&mut t, i, l)?;
    }
    Ok(t)
}

/// Cross-entropy of row-renormalized propagated labels against true labels,
/// averaged over training nodes.
pub fn lpa_loss(
    tape: &mut Tape,
    propagated: Var,
    targets: &Arc<Tensor>,
    train: &Arc<Vec<usize>>,
) -> Result<Var, LabelPropError> {
    let dist = tape.row_normalize(propagated)?;
    Ok(tape.cross_entropy(dist, targets, train)?)
}
