mod common;

use std::sync::Arc;

use common::{random_adjacency, random_tensor, rng};
use proptest::prelude::*;
use tagtopo_core::kernel::{grad_check, KernelError, Tape, Var};
use tagtopo_core::normalize::normalized_values;
use tagtopo_core::sparse::{SparseMatrix, SparsePattern};
use tagtopo_core::tensor::Tensor;

const H: f64 = 1e-5;
/// Step for the randomized sweeps: the primitives are smooth enough that the
/// truncation error stays below 1e-8 while rounding noise drops tenfold.
const H_SWEEP: f64 = 1e-4;

/// Reduces a matrix-valued var to a scalar through a fixed random probe.
fn probe(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, KernelError> {
    let (r, c) = tape.shape(v);
    let w = tape.constant(random_tensor(r, c, 1.0, &mut rng(seed)));
    let p = tape.hadamard(v, w)?;
    tape.reduce_sum(p)
}

/// Entries bounded away from zero so kinks and poles stay out of the stencil.
fn away_from_zero(t: Tensor, min: f64) -> Tensor {
    t.map(|v| if v.abs() < min { min } else { v })
}

#[test]
fn identity_spmm_is_passthrough() {
    let eye = SparseMatrix::identity(4);
    let x = random_tensor(4, 3, 1.0, &mut rng(1));
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::column(eye.values.clone()));
    let xv = tape.constant(x.clone());
    let y = tape.spmm(&eye.pattern, v, xv).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn exp_derivative_at_zero_is_one() {
    let mut tape = Tape::new();
    let t = tape.param(Tensor::scalar(0.0));
    let e = tape.exp(t).unwrap();
    let g = tape.backward(e).unwrap();
    assert_eq!(g.get(t).item(), 1.0);
}

#[test]
fn quadratic_gradient_is_analytic() {
    let report = grad_check(
        |tape, v| {
            let sq = tape.hadamard(v[0], v[0])?;
            tape.reduce_sum(sq)
        },
        &[Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap()],
        H,
    )
    .unwrap();
    assert_eq!(report.analytic[0].data(), &[2.0, 4.0]);
    assert!(report.max_rel_error <= 1e-8, "{}", report.max_rel_error);
}

#[test]
fn independent_leaf_gets_exact_zero() {
    let report = grad_check(
        |tape, v| {
            let e = tape.exp(v[0])?;
            tape.reduce_sum(e)
        },
        &[Tensor::column(vec![0.3, -0.2]), Tensor::column(vec![5.0, 6.0, 7.0])],
        H,
    )
    .unwrap();
    assert!(report.analytic[1].data().iter().all(|&g| g == 0.0));
    assert!(report.numeric[1].data().iter().all(|&g| g == 0.0));
}

#[test]
fn softmax_probe_on_4x3_matches_central_differences() {
    let z = random_tensor(4, 3, 2.0, &mut rng(11));
    let target = random_tensor(4, 3, 1.0, &mut rng(12));
    let report = grad_check(
        move |tape, v| {
            let s = tape.row_softmax(v[0])?;
            let t = tape.constant(target.clone());
            let p = tape.hadamard(s, t)?;
            tape.reduce_sum(p)
        },
        &[z],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn non_finite_loss_is_rejected() {
    let err = grad_check(
        |tape, v| {
            let l = tape.scale(v[0], f64::INFINITY)?;
            tape.reduce_sum(l)
        },
        &[Tensor::scalar(1.0)],
        H,
    );
    assert!(err.is_err());
}

#[test]
fn rsqrt_rejects_non_positive_and_shapes_are_checked() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::column(vec![1.0, 0.0]));
    assert!(matches!(tape.rsqrt(x), Err(KernelError::NonPositive { index: 1, .. })));
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    assert!(matches!(tape.matmul(a, b), Err(KernelError::Shape(_))));
}

#[test]
fn cross_entropy_edge_cases() {
    let mut tape = Tape::new();
    let onehot = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let targets = Arc::new(onehot.clone());
    let p = tape.constant(onehot);
    let l = tape.cross_entropy(p, &targets, &Arc::new(vec![0, 1])).unwrap();
    assert!(tape.value(l).item().abs() < 1e-11);
    let u = tape.constant(Tensor::filled(2, 4, 0.25));
    let t4 = Arc::new(Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]).unwrap());
    let l = tape.cross_entropy(u, &t4, &Arc::new(vec![0, 1])).unwrap();
    assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-10);
    assert!(matches!(tape.cross_entropy(u, &t4, &Arc::new(vec![])), Err(KernelError::EmptySubset)));
}

#[test]
fn cross_entropy_matches_scalar_loop() {
    let mut r = rng(5);
    let pred = random_tensor(6, 3, 1.0, &mut r).map(f64::abs);
    let mut targets = Tensor::zeros(6, 3);
    let labels = [2, 0, 1, 1, 0, 2];
    for (i, &l) in labels.iter().enumerate() {
        targets.set(i, l, 1.0);
    }
    let subset = vec![0, 2, 3, 5];
    let mut oracle = 0.0;
    for &i in &subset {
        oracle -= (pred.get(i, labels[i]) + 1e-12).ln();
    }
    oracle /= subset.len() as f64;
    let mut tape = Tape::new();
    let p = tape.constant(pred);
    let l = tape.cross_entropy(p, &Arc::new(targets), &Arc::new(subset)).unwrap();
    assert!((tape.value(l).item() - oracle).abs() < 1e-10);
}

#[test]
fn perturbing_one_edge_moves_both_endpoint_degrees() {
    let adj = random_adjacency(6, 0.6, &mut rng(21));
    let (u, v) = adj.edges()[0];
    let mut bumped = adj.clone();
    let mut theta = adj.theta().to_vec();
    theta[0] += 0.1;
    bumped.set_theta(&theta).unwrap();
    for i in 0..6 {
        let moved = (adj.degrees()[i] - bumped.degrees()[i]).abs() > 0.0;
        assert_eq!(moved, i == u || i == v, "node {i}");
    }
}

#[test]
fn gradient_through_normalization_matches_differences() {
    let adj = random_adjacency(8, 0.5, &mut rng(31));
    let x = random_tensor(8, 3, 1.0, &mut rng(32));
    let theta = Tensor::column(adj.theta().to_vec());
    let report = grad_check(
        |tape, v| {
            let vals = normalized_values(tape, &adj, v[0])?;
            let xv = tape.constant(x.clone());
            let y = tape.spmm(adj.pattern(), vals, xv)?;
            probe(tape, y, 33)
        },
        &[theta],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn replay_is_bitwise_deterministic() {
    let adj = random_adjacency(10, 0.4, &mut rng(41));
    let x = random_tensor(10, 4, 1.0, &mut rng(42));
    let run = || {
        let mut tape = Tape::new();
        let t = tape.param(Tensor::column(adj.theta().to_vec()));
        let vals = normalized_values(&mut tape, &adj, t).unwrap();
        let xv = tape.param(x.clone());
        let y = tape.spmm(adj.pattern(), vals, xv).unwrap();
        let s = tape.row_softmax(y).unwrap();
        let l = probe(&mut tape, s, 43).unwrap();
        let g = tape.backward(l).unwrap();
        (g.get(t), g.get(xv))
    };
    assert_eq!(run(), run());
}

#[test]
fn tape_dump_lists_ops() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::identity(2));
    let b = tape.exp(a).unwrap();
    tape.reduce_sum(b).unwrap();
    let dump = tape.dump();
    assert_eq!(dump.lines().count(), 3);
    assert!(dump.contains("exp"), "{dump}");
}

fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=16, 1usize..=16, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_primitives_pass_grad_check((r, c, seed) in dims(), k in 1usize..=16, which in 0usize..9) {
        let mut g = rng(seed);
        let a = away_from_zero(random_tensor(r, k, 1.0, &mut g), 1e-3);
        let b = random_tensor(k, c, 1.0, &mut g);
        let x = away_from_zero(random_tensor(r, c, 1.0, &mut g), 1e-3);
        let y = random_tensor(r, c, 1.0, &mut g);
        let report = grad_check(
            |tape, v| {
                let out = match which {
                    0 => tape.matmul(v[0], v[1])?,
                    1 => tape.add(v[2], v[3])?,
                    2 => tape.sub(v[2], v[3])?,
                    3 => tape.scale(v[2], -1.7)?,
                    4 => tape.hadamard(v[2], v[3])?,
                    5 => tape.exp(v[2])?,
                    6 => {
                        let e = tape.exp(v[2])?;
                        tape.log(e)?
                    }
                    7 => tape.relu(v[2])?,
                    _ => tape.row_softmax(v[2])?,
                };
                probe(tape, out, seed ^ 1)
            },
            &[a, b, x, y],
            H_SWEEP,
        ).unwrap();
        prop_assert!(report.max_rel_error <= 1e-6, "op {} max rel error {}", which, report.max_rel_error);
    }

    #[test]
    fn row_ops_pass_grad_check((r, c, seed) in dims()) {
        let mut g = rng(seed);
        let x = random_tensor(r, c, 1.0, &mut g).map(|v| v.abs() + 0.1);
        let idx: Vec<usize> = (0..r).rev().chain(0..r.min(3)).collect();
        let report = grad_check(
            |tape, v| {
                let n = tape.row_normalize(v[0])?;
                let gth = tape.gather_rows(n, &idx)?;
                probe(tape, gth, seed ^ 2)
            },
            &[x],
            H_SWEEP,
        ).unwrap();
        prop_assert!(report.max_rel_error <= 1e-6, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn sparse_primitives_pass_grad_check(n in 2usize..=16, c in 1usize..=16, seed in any::<u64>(), which in 0usize..5) {
        let mut g = rng(seed);
        let adj = random_adjacency(n, 0.4, &mut g);
        let pattern: Arc<SparsePattern> = Arc::clone(adj.pattern());
        let sources = Arc::clone(adj.sources());
        let nnz = pattern.nnz();
        let values = random_tensor(nnz, 1, 1.0, &mut g).map(|v| v.abs() + 0.1);
        let x = random_tensor(n, c, 1.0, &mut g);
        let row = random_tensor(n, 1, 1.0, &mut g).map(|v| v.abs() + 0.1);
        let col = random_tensor(n, 1, 1.0, &mut g);
        let weights = random_tensor(adj.num_edges(), 1, 1.0, &mut g);
        let report = grad_check(
            |tape, v| {
                let out = match which {
                    0 => tape.spmm(&pattern, v[0], v[1])?,
                    1 => tape.degree_sum(&pattern, v[0])?,
                    2 => tape.rsqrt(v[2])?,
                    3 => tape.edge_scale(&pattern, v[0], v[2], v[3])?,
                    _ => tape.expand_edges(v[4], &sources)?,
                };
                probe(tape, out, seed ^ 3)
            },
            &[values, x, row, col, weights],
            H_SWEEP,
        ).unwrap();
        prop_assert!(report.max_rel_error <= 1e-6, "op {} max rel error {}", which, report.max_rel_error);
    }

    #[test]
    fn losses_pass_grad_check((r, c, seed) in dims()) {
        let mut g = rng(seed);
        let z = random_tensor(r, c, 2.0, &mut g);
        let p = random_tensor(r, c, 1.0, &mut g).map(|v| v.abs() + 0.2);
        let mut t = Tensor::zeros(r, c);
        for i in 0..r {
            t.set(i, (seed as usize + i) % c, 1.0);
        }
        let targets = Arc::new(t);
        let subset = Arc::new((0..r).step_by(2).collect::<Vec<_>>());
        let report = grad_check(
            |tape, v| {
                let a = tape.softmax_cross_entropy(v[0], &targets, &subset)?;
                let b = tape.cross_entropy(v[1], &targets, &subset)?;
                tape.add(a, b)
            },
            &[z, p],
            H_SWEEP,
        ).unwrap();
        prop_assert!(report.max_rel_error <= 1e-6, "max rel error {}", report.max_rel_error);
    }
}
