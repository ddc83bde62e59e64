//! Sparse symmetric adjacency with per-edge parameters and degree normalization.
//!
//! An undirected edge `e = (u, v)` owns one raw parameter `θ_e`; its weight is
//! `w_e = exp(θ_e)` and appears at both `(u, v)` and `(v, u)` in the matrix, so
//! symmetry holds by construction. With self-loops enabled every node also gets
//! a fixed unit diagonal entry (`Ã = A + I`).

use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum AdjacencyError {
    #[error("node {node} has zero degree; enable self-loops or drop isolated nodes")]
    ZeroDegree { node: usize },
    #[error("edge ({0}, {1}) is out of range for {2} nodes")]
    OutOfRange(usize, usize, usize),
    #[error("self-loop ({0}, {0}) in raw edge list")]
    SelfLoop(usize),
    #[error("expected {expected} edge parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
}

/// Where a stored matrix entry takes its value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntrySource {
    /// Shares the weight of undirected edge `e`.
    Edge(usize),
    /// Fixed unit self-loop.
    SelfLoop,
}

/// Row-compressed sparsity pattern of an `n × n` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsePattern {
    n: usize,
    row_ptr: Vec<usize>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl SparsePattern {
    /// Builds a pattern from `(row, col)` coordinates. Returns the pattern and,
    /// for each stored entry, the index of the input coordinate it came from.
    pub fn from_coords(n: usize, coords: &[(usize, usize)]) -> (Self, Vec<usize>) {
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&k| coords[k]);
        let mut row_ptr = vec![0usize; n + 1];
        let mut rows = Vec::with_capacity(coords.len());
        let mut cols = Vec::with_capacity(coords.len());
        for &k in &order {
            let (r, c) = coords[k];
            assert!(r < n && c < n, "coordinate ({r}, {c}) out of range");
            row_ptr[r + 1] += 1;
            rows.push(r);
            cols.push(c);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        (Self { n, row_ptr, rows, cols }, order)
    }

    pub fn identity(n: usize) -> Self {
        let coords: Vec<_> = (0..n).map(|i| (i, i)).collect();
        Self::from_coords(n, &coords).0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    /// Range of stored-entry indices belonging to row `r`.
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }
}

/// A sparse matrix: shared pattern plus one value per stored entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub pattern: Arc<SparsePattern>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        Self { pattern: Arc::new(SparsePattern::identity(n)), values: vec![1.0; n] }
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn to_dense(&self) -> Tensor {
        let n = self.pattern.n();
        let mut out = Tensor::zeros(n, n);
        for (k, &v) in self.values.iter().enumerate() {
            let (r, c) = (self.pattern.rows[k], self.pattern.cols[k]);
            out.set(r, c, out.get(r, c) + v);
        }
        out
    }

    /// `self · x` for a dense `x` with `n` rows.
    pub fn spmm(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.n(), "spmm row mismatch");
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..self.n() {
            for k in self.pattern.row_range(r) {
                let v = self.values[k];
                let src = x.row(self.pattern.cols[k]);
                for (o, &s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// Row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n()];
        for (k, &v) in self.values.iter().enumerate() {
            d[self.pattern.rows[k]] += v;
        }
        d
    }
}

/// Symmetric weighted adjacency with one learnable parameter per undirected edge.
#[derive(Debug)]
pub struct WeightedAdjacency {
    n: usize,
    edges: Vec<(usize, usize)>,
    theta: Vec<f64>,
    self_loop: bool,
    pattern: Arc<SparsePattern>,
    sources: Arc<Vec<EntrySource>>,
    degree_cache: OnceLock<Vec<f64>>,
}

impl Clone for WeightedAdjacency {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            edges: self.edges.clone(),
            theta: self.theta.clone(),
            self_loop: self.self_loop,
            pattern: Arc::clone(&self.pattern),
            sources: Arc::clone(&self.sources),
            degree_cache: OnceLock::new(),
        }
    }
}

impl WeightedAdjacency {
    /// Unit-weight (`θ = 0`) adjacency over undirected `edges`.
    ///
    /// Each edge must be listed once; orientation is normalized to `u < v`.
    pub fn new(n: usize, edges: &[(usize, usize)], self_loop: bool) -> Result<Self, AdjacencyError> {
        let mut norm = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(AdjacencyError::OutOfRange(u, v, n));
            }
            if u == v {
                return Err(AdjacencyError::SelfLoop(u));
            }
            norm.push((u.min(v), u.max(v)));
        }
        let mut coords = Vec::with_capacity(2 * norm.len() + n);
        let mut coord_src = Vec::with_capacity(coords.capacity());
        for (e, &(u, v)) in norm.iter().enumerate() {
            coords.push((u, v));
            coord_src.push(EntrySource::Edge(e));
            coords.push((v, u));
            coord_src.push(EntrySource::Edge(e));
        }
        if self_loop {
            for i in 0..n {
                coords.push((i, i));
                coord_src.push(EntrySource::SelfLoop);
            }
        }
        let (pattern, order) = SparsePattern::from_coords(n, &coords);
        let sources = order.iter().map(|&k| coord_src[k]).collect();
        Ok(Self {
            n,
            theta: vec![0.0; norm.len()],
            edges: norm,
            self_loop,
            pattern: Arc::new(pattern),
            sources: Arc::new(sources),
            degree_cache: OnceLock::new(),
        })
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self, AdjacencyError> {
        self.set_theta(&theta)?;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges, each as `(u, v)` with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn self_loop(&self) -> bool {
        self.self_loop
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Replaces all edge parameters and invalidates the degree cache.
    pub fn set_theta(&mut self, theta: &[f64]) -> Result<(), AdjacencyError> {
        if theta.len() != self.theta.len() {
            return Err(AdjacencyError::ParamCount { expected: self.theta.len(), got: theta.len() });
        }
        self.theta.copy_from_slice(theta);
        self.degree_cache = OnceLock::new();
        Ok(())
    }

    /// Edge weights `exp(θ_e)`.
    pub fn weights(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.exp()).collect()
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn sources(&self) -> &Arc<Vec<EntrySource>> {
        &self.sources
    }

    /// The (un-normalized) matrix `A`, or `A + I` with self-loops.
    pub fn matrix(&self) -> SparseMatrix {
        let w = self.weights();
        let values = self
            .sources
            .iter()
            .map(|s| match *s {
                EntrySource::Edge(e) => w[e],
                EntrySource::SelfLoop => 1.0,
            })
            .collect();
        SparseMatrix { pattern: Arc::clone(&self.pattern), values }
    }

    /// Degree vector `D(i,i) = Σ_j A(i,j)`, computed lazily and cached until the
    /// next parameter change.
    pub fn degrees(&self) -> &[f64] {
        self.degree_cache.get_or_init(|| self.matrix().row_sums())
    }

    /// `D^{-1/2} A D^{-1/2}`.
    pub fn normalize(&self) -> Result<SparseMatrix, AdjacencyError> {
        let d = self.degrees();
        if let Some(node) = d.iter().position(|&x| x <= 0.0) {
            return Err(AdjacencyError::ZeroDegree { node });
        }
        let mut m = self.matrix();
        for k in 0..m.values.len() {
            m.values[k] /= (d[self.pattern.rows[k]] * d[self.pattern.cols[k]]).sqrt();
        }
        Ok(m)
    }

    /// Adjacency restricted to a subset of edges (by index), parameters carried over.
    pub fn retain_edges(&self, keep: impl Fn(usize) -> bool) -> Self {
        let kept: Vec<usize> = (0..self.edges.len()).filter(|&e| keep(e)).collect();
        let edges: Vec<_> = kept.iter().map(|&e| self.edges[e]).collect();
        let theta: Vec<_> = kept.iter().map(|&e| self.theta[e]).collect();
        Self::new(self.n, &edges, self.self_loop)
            .expect("subset of valid edges is valid")
            .with_theta(theta)
            .expect("parameter count matches")
    }
}
