use tagtopo_core::graph::unreliable_edge_ratio;
use tagtopo_core::synth::{synth_fixture, SbmConfig};

#[test]
fn no_inter_block_edges_means_no_unreliable_edges() {
    let s = synth_fixture(&SbmConfig { p_inter: 0.0, n_per_class: 40, classes: 3, ..SbmConfig::default() }).unwrap();
    assert!(s.graph.num_edges() > 0);
    assert_eq!(unreliable_edge_ratio(&s.graph).unwrap().overall, 0.0);
}

#[test]
fn cross_class_count_within_three_binomial_sigma() {
    for seed in 0..5 {
        let cfg = SbmConfig { seed, ..SbmConfig::default() };
        let s = synth_fixture(&cfg).unwrap();
        let pairs = (cfg.n_per_class * cfg.n_per_class * cfg.classes * (cfg.classes - 1) / 2) as f64;
        let expected = cfg.p_inter * pairs;
        let sigma = (pairs * cfg.p_inter * (1.0 - cfg.p_inter)).sqrt();
        let got = unreliable_edge_ratio(&s.graph).unwrap().cross_class_edges as f64;
        assert!((got - expected).abs() <= 3.0 * sigma, "seed {seed}: {got} vs {expected} ± {sigma}");
    }
}

#[test]
fn same_seed_reproduces_graph() {
    let cfg = SbmConfig { n_per_class: 25, seed: 42, ..SbmConfig::default() };
    let (a, b) = (synth_fixture(&cfg).unwrap(), synth_fixture(&cfg).unwrap());
    assert_eq!(a.graph.edges(), b.graph.edges());
    assert_eq!(a.graph.nodes(), b.graph.nodes());
    assert_eq!(a.categories, b.categories);
}
