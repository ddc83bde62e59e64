//! Graph convolutional network `H^(k) = σ(Ā H^(k−1) W^(k−1))` and the
//! three-term joint objective.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::{KernelError, Tape, Var};
use crate::sparse::SparsePattern;
use crate::tensor::Tensor;

/// Nonlinearity applied after every layer except the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    /// `weights[k]` maps layer `k` inputs to layer `k + 1`.
    pub weights: Vec<Tensor>,
    pub dropout: f64,
    pub activation: Activation,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct GcnOutput {
    pub logits: Var,
    /// Post-activation hidden embeddings, one per hidden layer.
    pub hidden: Vec<Var>,
}

impl GcnModel {
    /// Glorot-uniform initialization of a `layers`-deep network
    /// (`layers = 1` is a single linear propagation layer).
    pub fn new<R: Rng>(
        d_in: usize,
        hidden: usize,
        num_classes: usize,
        layers: usize,
        dropout: f64,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let layers = layers.max(1);
        let mut dims = vec![d_in];
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(num_classes);
        let weights = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.random_range(-limit..=limit)).collect();
                Tensor::from_vec(w[0], w[1], data).expect("sized")
            })
            .collect();
        Self { weights, dropout, activation }
    }

    pub fn from_weights(weights: Vec<Tensor>, dropout: f64, activation: Activation) -> Result<Self, KernelError> {
        if weights.is_empty() {
            return Err(KernelError::Shape("model needs at least one layer".into()));
        }
        for w in weights.windows(2) {
            if w[0].cols() != w[1].rows() {
                return Err(KernelError::Shape(format!(
                    "layer chain: {}x{} then {}x{}",
                    w[0].rows(),
                    w[0].cols(),
                    w[1].rows(),
                    w[1].cols()
                )));
            }
        }
        Ok(Self { weights, dropout, activation })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.last().expect("nonempty").cols()
    }

    /// Width of each hidden layer's output.
    pub fn hidden_dims(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1].iter().map(Tensor::cols).collect()
    }

    /// Inverted-dropout masks for each hidden layer (entries 0 or `1/(1−p)`).
    pub fn dropout_masks<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Tensor> {
        let keep = 1.0 - self.dropout;
        self.hidden_dims()
            .into_iter()
            .map(|d| {
                let data = (0..n * d)
                    .map(|_| if self.dropout > 0.0 && rng.random::<f64>() < self.dropout { 0.0 } else { 1.0 / keep })
                    .collect();
                Tensor::from_vec(n, d, data).expect("sized")
            })
            .collect()
    }

    /// Records the weights as tape leaves.
    pub fn params(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.weights.iter().map(|w| tape.leaf(w.clone(), trainable)).collect()
    }

    /// Logits and hidden embeddings without dropout, off the training tape.
    pub fn infer(&self, pattern: &Arc<SparsePattern>, values: &[f64], features: &Tensor) -> Result<(Tensor, Vec<Tensor>), KernelError> {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::column(values.to_vec()));
        let h0 = tape.constant(features.clone());
        let w = self.params(&mut tape, false);
        let out = forward(&mut tape, pattern, v, h0, &w, self.activation, &[])?;
        let hidden = out.hidden.iter().map(|&h| tape.value(h).clone()).collect();
        Ok((tape.value(out.logits).clone(), hidden))
    }
}

/// Runs the network on the tape. `masks`, when nonempty, holds one dropout
/// mask per hidden layer, applied after the activation.
pub fn forward(
    tape: &mut Tape,
    pattern: &Arc<SparsePattern>,
    values: Var,
    h0: Var,
    weights: &[Var],
    activation: Activation,
    masks: &[Tensor],
) -> Result<GcnOutput, KernelError> {
    if weights.is_empty() {
        return Err(KernelError::Shape("model needs at least one layer".into()));
    }
    if !masks.is_empty() && masks.len() != weights.len() - 1 {
        return Err(KernelError::Shape(format!("{} dropout masks for {} hidden layers", masks.len(), weights.len() - 1)));
    }
    let mut h = h0;
    let mut hidden = Vec::with_capacity(weights.len() - 1);
    for (k, &w) in weights.iter().enumerate() {
        let hw = tape.matmul(h, w)?;
        let z = tape.spmm(pattern, values, hw)?;
        if k + 1 == weights.len() {
            return Ok(GcnOutput { logits: z, hidden });
        }
        let a = match activation {
            Activation::Relu => tape.relu(z)?,
            Activation::Identity => z,
        };
        hidden.push(a);
        h = match masks.get(k) {
            Some(m) => {
                let m = tape.constant(m.clone());
                tape.hadamard(a, m)?
            }
            None => a,
        };
    }
    unreachable!("loop returns on the last layer")
}

/// Handles to the individual objective terms.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub gcn: Var,
    pub lpa: Option<Var>,
    pub llm: Option<Var>,
    pub total: Var,
}

/// `L_gcn + λ·L_lpa + β·L_llm` on the tape. A term whose coefficient is zero
/// (or whose loss is absent) is left out entirely.
pub fn joint_loss(
    tape: &mut Tape,
    gcn: Var,
    lpa: Option<Var>,
    llm: Option<Var>,
    lambda: f64,
    beta: f64,
) -> Result<LossTerms, KernelError> {
    let mut total = gcn;
    for (term, coef) in [(lpa, lambda), (llm, beta)] {
        if let Some(t) = term {
            if coef != 0.0 {
                let s = tape.scale(t, coef)?;
                total = tape.add(total, s)?;
            }
        }
    }
    Ok(LossTerms { gcn, lpa, llm, total })
}

/// Scalar form of the joint objective.
pub fn combine_losses(gcn: f64, lpa: f64, llm: f64, lambda: f64, beta: f64) -> f64 {
    gcn + lambda * lpa + beta * llm
}
