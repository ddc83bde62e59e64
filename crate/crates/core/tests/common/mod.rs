//! Shared fixtures and dense reference implementations for integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagtopo_core::sparse::WeightedAdjacency;
use tagtopo_core::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Undirected edges, each pair present with probability `p`.
pub fn random_edges(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn random_tensor(r: usize, c: usize, scale: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..r * c).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(r, c, data).unwrap()
}

/// Self-looped adjacency with random edge parameters in [-1, 1].
pub fn random_adjacency(n: usize, p: f64, rng: &mut impl Rng) -> WeightedAdjacency {
    let edges = random_edges(n, p, rng);
    let theta = (0..edges.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    WeightedAdjacency::new(n, &edges, true).unwrap().with_theta(theta).unwrap()
}

/// Dense `A` (self-loops included when flagged), straight from edges and weights.
pub fn dense_adjacency(adj: &WeightedAdjacency) -> Vec<Vec<f64>> {
    let n = adj.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (&(u, v), w) in adj.edges().iter().zip(adj.weights()) {
        a[u][v] = w;
        a[v][u] = w;
    }
    if adj.self_loop() {
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
    }
    a
}

/// Dense `D^{-1/2} A D^{-1/2}`.
pub fn dense_normalized(adj: &WeightedAdjacency) -> Vec<Vec<f64>> {
    let a = dense_adjacency(adj);
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    a.iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, &x)| x / d[i].sqrt() / d[j].sqrt()).collect())
        .collect()
}

pub fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, p) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
