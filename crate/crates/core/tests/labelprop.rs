mod common;

use std::sync::Arc;

use common::{dense_matmul, dense_normalized, max_diff, random_adjacency, rng, to_rows};
use proptest::prelude::*;
use rand::Rng;
use tagtopo_core::graph::{make_split, NodeRecord, SplitPolicy, TextAttributedGraph};
use tagtopo_core::kernel::{grad_check, Tape};
use tagtopo_core::labelprop::{init_llm, init_true, lpa_loss, propagate, train_targets, LabelMatrix, LabelSource};
use tagtopo_core::normalize::normalized_values;
use tagtopo_core::sparse::WeightedAdjacency;
use tagtopo_core::tensor::Tensor;

fn ten_node_graph() -> TextAttributedGraph {
    let nodes = (0..10).map(|i| NodeRecord { id: i, text: "t".into(), label: Some(i % 3), feature: None }).collect();
    TextAttributedGraph::new(nodes, vec![(0, 1), (1, 2)], 3).unwrap()
}

fn one_hot_rows(m: &LabelMatrix) -> usize {
    (0..m.rows.rows())
        .filter(|&r| {
            let row = m.rows.row(r);
            row.iter().filter(|&&v| v == 1.0).count() == 1 && row.iter().filter(|&&v| v == 0.0).count() == row.len() - 1
        })
        .count()
}

fn dense_propagate(adj: &WeightedAdjacency, y0: &Tensor, k: usize) -> Vec<Vec<f64>> {
    let a = dense_normalized(adj);
    (0..k).fold(to_rows(y0), |y, _| dense_matmul(&a, &y))
}

fn tape_propagate(adj: &WeightedAdjacency, y0: &LabelMatrix, k: usize) -> Tensor {
    let norm = adj.normalize().unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::column(norm.values.clone()));
    let y = propagate(&mut tape, &norm.pattern, v, y0, k).unwrap();
    tape.value(y).clone()
}

#[test]
fn general_split_gives_six_initialized_rows() {
    let g = ten_node_graph();
    let split = make_split(&g, SplitPolicy::general(), 4).unwrap();
    let m = init_true(&split, &g.labels(), 3).unwrap();
    assert_eq!(split.train.len(), 6);
    assert_eq!(one_hot_rows(&m), 6);
    assert_eq!(m.initialized_rows(), 6);
}

#[test]
fn six_true_plus_four_pseudo_gives_ten_rows() {
    let g = ten_node_graph();
    let split = make_split(&g, SplitPolicy::general(), 4).unwrap();
    let pseudo: Vec<Option<usize>> = (0..10).map(|i| Some((i + 1) % 3)).collect();
    let m = init_llm(&split, &g.labels(), &pseudo, 3).unwrap();
    assert_eq!(one_hot_rows(&m), 10);
    assert_eq!(m.source, LabelSource::LlmPseudo);
    for &i in &split.train {
        assert_eq!(m.rows.argmax_row(i), i % 3);
    }
}

#[test]
fn fallback_pseudo_label_is_one_hot() {
    let g = ten_node_graph();
    let split = make_split(&g, SplitPolicy::general(), 4).unwrap();
    let labels = g.labels();
    let mut counts = [0usize; 3];
    for &i in &split.train {
        counts[labels[i].unwrap()] += 1;
    }
    let most_frequent = (0..3).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
    let pseudo = vec![Some(most_frequent); 10];
    let m = init_llm(&split, &labels, &pseudo, 3).unwrap();
    for i in (0..10).filter(|i| !split.train.contains(i)) {
        assert_eq!(m.rows.row(i).iter().sum::<f64>(), 1.0);
        assert_eq!(m.rows.get(i, most_frequent), 1.0);
    }
}

#[test]
fn three_node_path_two_steps_matches_dense() {
    let adj = WeightedAdjacency::new(3, &[(0, 1), (1, 2)], true).unwrap();
    let y0 = LabelMatrix { rows: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap(), source: LabelSource::TrueLabels };
    let got = tape_propagate(&adj, &y0, 2);
    assert!(max_diff(&to_rows(&got), &dense_propagate(&adj, &y0.rows, 2)) <= 1e-12);
}

#[test]
fn lpa_loss_edge_gradient_matches_differences() {
    let mut r = rng(77);
    let adj = random_adjacency(8, 0.5, &mut r);
    let labels: Vec<Option<usize>> = (0..8).map(|_| Some(r.random_range(0..3))).collect();
    let train = vec![0, 2, 3, 5, 7];
    let split = tagtopo_core::graph::DatasetSplit { train: train.clone(), val: vec![], test: vec![], policy: SplitPolicy::general() };
    let y0 = init_true(&split, &labels, 3).unwrap();
    let targets = Arc::new(train_targets(&labels, 3, &train).unwrap());
    let subset = Arc::new(train);
    let report = grad_check(
        |tape, v| {
            let vals = normalized_values(tape, &adj, v[0])?;
            let y = propagate(tape, adj.pattern(), vals, &y0, 3).map_err(|e| match e {
                tagtopo_core::labelprop::LabelPropError::Kernel(k) => k,
                other => panic!("{other}"),
            })?;
            lpa_loss(tape, y, &targets, &subset).map_err(|e| match e {
                tagtopo_core::labelprop::LabelPropError::Kernel(k) => k,
                other => panic!("{other}"),
            })
        },
        &[Tensor::column(adj.theta().to_vec())],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn propagation_matches_dense_power(n in 1usize..=10, k in 1usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let adj = random_adjacency(n, 0.4, &mut r);
        let classes = r.random_range(2..5);
        let mut rows = Tensor::zeros(n, classes);
        for i in 0..n {
            if r.random::<f64>() < 0.6 {
                rows.set(i, r.random_range(0..classes), 1.0);
            }
        }
        let y0 = LabelMatrix { rows, source: LabelSource::TrueLabels };
        let got = tape_propagate(&adj, &y0, k);
        prop_assert!(max_diff(&to_rows(&got), &dense_propagate(&adj, &y0.rows, k)) <= 1e-12);
    }

    #[test]
    fn perfect_pseudo_labels_equal_true_initialization(n in 3usize..40, classes in 2usize..5, seed in any::<u64>()) {
        let nodes = (0..n).map(|i| NodeRecord { id: i, text: "t".into(), label: Some(i % classes), feature: None }).collect();
        let g = TextAttributedGraph::new(nodes, vec![], classes).unwrap();
        let split = make_split(&g, SplitPolicy::general(), seed).unwrap();
        let labels = g.labels();
        let everything = tagtopo_core::graph::DatasetSplit { train: (0..n).collect(), val: vec![], test: vec![], policy: SplitPolicy::general() };
        prop_assert_eq!(init_llm(&split, &labels, &labels, classes).unwrap().rows, init_true(&everything, &labels, classes).unwrap().rows);
    }
}
