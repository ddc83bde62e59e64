//! Symmetric normalization built on the tape from raw edge parameters.

use crate::kernel::{KernelError, Tape, Var};
use crate::sparse::{SparseMatrix, WeightedAdjacency};
use crate::tensor::Tensor;

/// `D^{-1/2} (exp(θ) ⊕ I) D^{-1/2}` as stored values (`nnz × 1`) on `tape`.
///
/// `theta` must be an `m × 1` column, one entry per undirected edge of `adj`.
pub fn normalized_values(tape: &mut Tape, adj: &WeightedAdjacency, theta: Var) -> Result<Var, KernelError> {
    let w = tape.exp(theta)?;
    let values = tape.expand_edges(w, adj.sources())?;
    let deg = tape.degree_sum(adj.pattern(), values)?;
    let inv_sqrt = tape.rsqrt(deg)?;
    tape.edge_scale(adj.pattern(), values, inv_sqrt, inv_sqrt)
}

/// Records `θ` as a leaf and returns `(θ, normalized values)`.
pub fn normalized_from_params(tape: &mut Tape, adj: &WeightedAdjacency, trainable: bool) -> Result<(Var, Var), KernelError> {
    let theta = tape.leaf(Tensor::column(adj.theta().to_vec()), trainable);
    let values = normalized_values(tape, adj, theta)?;
    Ok((theta, values))
}

/// Records an already-normalized matrix as constant values.
pub fn constant_values(tape: &mut Tape, m: &SparseMatrix) -> Var {
    tape.constant(Tensor::column(m.values.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_normalization_matches_direct() {
        let adj = WeightedAdjacency::new(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], true)
            .unwrap()
            .with_theta(vec![0.1, -0.4, 0.9, 0.0])
            .unwrap();
        let mut tape = Tape::new();
        let (_, v) = normalized_from_params(&mut tape, &adj, true).unwrap();
        let direct = adj.normalize().unwrap();
        let diff = tape.value(v).data().iter().zip(&direct.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-15);
    }
}
