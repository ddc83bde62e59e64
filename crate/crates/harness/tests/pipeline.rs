use std::path::Path;

use tagtopo::config::{BackendKind, ExperimentSpec, Mode};
use tagtopo::diagnose::{diagnose, DIAGNOSTICS_DIR, EMBEDDINGS_FILE, REPORT_FILE};
use tagtopo::pipeline::{
    run, run_pseudolabel, run_refine, trend_holds, DeletionRow, DELETION_FILE, GRID_FILE, METRICS_FILE, PARAM_FILE,
    PSEUDO_FILE, REFINED_EDGES_FILE, SUMMARY_FILE, VERDICT_FILE,
};
use tagtopo::pseudolabel::LabelOrigin;
use tagtopo::exit;
use tagtopo_core::synth::SbmConfig;

/// A small, quick experiment on a 60-node two-block fixture.
fn small(mode: Mode, out: &Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec { mode, out: out.to_path_buf(), workers: 2, ..ExperimentSpec::default() };
    spec.data.synth = Some(SbmConfig { n_per_class: 30, p_intra: 0.15, p_inter: 0.05, ..SbmConfig::default() });
    spec.train.epochs = 20;
    spec.train.patience = 20;
    spec.train.seeds = vec![0, 1];
    spec.refine.cap = 50;
    spec
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn csv_rows(path: impl AsRef<Path>) -> usize {
    read(path).lines().count() - 1
}

#[test]
fn param_sweep_default_grid_has_sixteen_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small(Mode::ParamSweep, tmp.path());
    spec.train.seeds = vec![0];
    let r = run(&spec).unwrap();
    assert_eq!(r.grid.len(), 16);
    assert_eq!(csv_rows(tmp.path().join(SUMMARY_FILE)), 16);
    let grid = read(tmp.path().join(PARAM_FILE));
    assert_eq!(grid.lines().next(), Some("lambda\\beta,0.0,1.0,2.0,5.0"));
    assert_eq!(grid.lines().count(), 5);
    assert!(r.variants.iter().any(|v| v.variant == "lambda=2.0,beta=5.0"));
}

#[test]
fn full_threshold_grid_has_eighty_one_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small(Mode::ThresholdGrid, tmp.path());
    spec.sweep.full = true;
    spec.train.seeds = vec![0];
    spec.train.epochs = 5;
    let r = run(&spec).unwrap();
    assert_eq!(r.grid.len(), 81);
    assert_eq!(csv_rows(tmp.path().join(SUMMARY_FILE)), 81);
    let grid = read(tmp.path().join(GRID_FILE));
    assert_eq!(grid.lines().count(), 10);
    assert!(grid.starts_with("xi_add\\xi_del,0.1,0.2,"));
    // The similarity queries are made once and reused by every cell.
    assert_eq!(r.backend_calls, 100);
}

#[test]
fn refinement_that_changes_nothing_reduces_to_plain_gcn() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ad = small(Mode::AD, &tmp.path().join("ad"));
    ad.train.xi_del = 0.0;
    ad.train.xi_add = 1.0;
    let plain = small(Mode::PlainGcn, &tmp.path().join("plain"));
    let a = run(&ad).unwrap();
    let p = run(&plain).unwrap();
    let refined = a.refined.as_ref().unwrap();
    assert_eq!(refined.count(tagtopo::refine::Action::Delete), 0);
    assert_eq!(refined.count(tagtopo::refine::Action::Add), 0);
    let strip = |s: String| s.replace("a-d,", "").replace("plain-gcn,", "");
    assert_eq!(strip(read(tmp.path().join("ad").join(METRICS_FILE))), strip(read(tmp.path().join("plain").join(METRICS_FILE))));
    assert_eq!(a.variants[0].metrics.len(), p.variants[0].metrics.len());
}

#[test]
fn runs_are_byte_reproducible_and_cached() {
    let tmp = tempfile::tempdir().unwrap();
    let one = small(Mode::ADAndLpa, &tmp.path().join("one"));
    let two = small(Mode::ADAndLpa, &tmp.path().join("two"));
    let r1 = run(&one).unwrap();
    let r2 = run(&two).unwrap();
    assert!(r1.backend_calls > 0);
    assert_eq!(r1.backend_calls, r2.backend_calls);
    for f in [METRICS_FILE, SUMMARY_FILE, VERDICT_FILE, PSEUDO_FILE, "history_seed1.csv", "edge_weights_seed0.csv"] {
        assert_eq!(read(tmp.path().join("one").join(f)), read(tmp.path().join("two").join(f)), "{f}");
    }
    // Rerunning into the same directory answers everything from the cache.
    let again = run(&one).unwrap();
    assert_eq!(again.backend_calls, 0);
    assert_eq!(read(tmp.path().join("one").join(METRICS_FILE)), read(tmp.path().join("two").join(METRICS_FILE)));
}

#[test]
fn deletion_sweep_removes_nested_cross_class_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small(Mode::DeletionSweep, tmp.path());
    spec.sweep.deletion_ratios = vec![0.0, 0.5, 1.0];
    let r = run(&spec).unwrap();
    assert_eq!(r.deletion.len(), 3);
    assert_eq!(r.deletion[0].removed, 0);
    assert!(r.deletion[1].removed <= r.deletion[2].removed);
    let info: serde_json::Value = serde_json::from_str(&read(tmp.path().join("run.json"))).unwrap();
    let edges = info["edges"].as_f64().unwrap();
    let cross = (info["cross_class_ratio"].as_f64().unwrap() * edges).round() as usize;
    assert_eq!(r.deletion[2].removed, cross);
    assert_eq!(csv_rows(tmp.path().join(DELETION_FILE)), 3);
}

#[test]
fn trend_allows_dips_within_pooled_std() {
    let row = |m: f64, s: f64| DeletionRow { ratio: 0.0, removed: 0, test_mean: m, test_std: s, seeds: 5 };
    assert!(trend_holds(&[row(0.80, 0.02), row(0.79, 0.02), row(0.85, 0.0)]));
    assert!(!trend_holds(&[row(0.80, 0.01), row(0.75, 0.01)]));
}

#[test]
fn pseudo_labels_skip_training_nodes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small(Mode::LlmLpa, tmp.path());
    let p = run_pseudolabel(&spec).unwrap();
    let train = p.origin.iter().filter(|o| **o == LabelOrigin::Train).count();
    assert!(train > 0);
    assert!(p.labels.iter().zip(&p.origin).all(|(l, o)| l.is_none() == (*o == LabelOrigin::Train)));
    assert_eq!(p.fallbacks(), 0);
    let csv = read(tmp.path().join(PSEUDO_FILE));
    assert_eq!(csv.lines().next(), Some("node_id,pseudo_label,ranking,origin"));
    assert_eq!(csv.lines().count(), 61);
    let info = run(&spec).unwrap();
    assert_eq!(info.pseudo.unwrap().accuracy(&tagtopo::data::load_dataset(&spec.data, 0).unwrap().labels), Some(1.0));
}

#[test]
fn refine_verb_writes_refined_edges() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small(Mode::AD, tmp.path());
    let r = run_refine(&spec).unwrap();
    assert_eq!(csv_rows(tmp.path().join(REFINED_EDGES_FILE)), r.graph.num_edges());
    assert_eq!(csv_rows(tmp.path().join(VERDICT_FILE)), r.verdicts.len());
}

#[test]
fn diagnose_finds_no_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small(Mode::ADAndLpa, tmp.path());
    let r = diagnose(&spec, &[0.1, 0.25, 0.5, 0.9], 10).unwrap();
    assert_eq!(r.violations, 0);
    assert_eq!(r.input.len(), 4);
    assert!(r.input.iter().all(|x| x.values.len() == 11));
    assert!(r.identity_gap <= 1e-12);
    let json: serde_json::Value = serde_json::from_str(&read(tmp.path().join(DIAGNOSTICS_DIR).join(REPORT_FILE))).unwrap();
    assert_eq!(json["hidden"].as_array().unwrap().len(), 4);
    assert_eq!(csv_rows(tmp.path().join(DIAGNOSTICS_DIR).join(EMBEDDINGS_FILE)), 60);
    let sweep = small(Mode::DeletionSweep, tmp.path());
    assert_eq!(diagnose(&sweep, &[0.5], 1).unwrap_err().exit_code(), exit::CONFIG);
}

#[test]
fn failures_carry_stage_and_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small(Mode::PlainGcn, tmp.path());
    spec.data.nodes = Some(tmp.path().join("missing.jsonl"));
    spec.data.edges = Some(tmp.path().join("missing.csv"));
    let e = run(&spec).unwrap_err();
    assert_eq!(e.exit_code(), exit::DATA);
    assert!(e.to_string().starts_with("stage load"), "{e}");

    let mut spec = small(Mode::AD, tmp.path());
    spec.backend.kind = BackendKind::Http;
    spec.backend.http.api_key = Some("test".into());
    spec.backend.http.endpoint = "http://127.0.0.1:9/v1/chat/completions".into();
    spec.backend.http.timeout_secs = 1;
    spec.backend.gateway.max_retries = 0;
    spec.refine.cap = 2;
    let e = run(&spec).unwrap_err();
    assert_eq!(e.exit_code(), exit::BACKEND, "{e}");
    assert!(e.to_string().starts_with("stage refine"), "{e}");

    let mut spec = small(Mode::PlainGcn, tmp.path());
    spec.train.epochs = 0;
    assert_eq!(run(&spec).unwrap_err().exit_code(), exit::CONFIG);
}

#[test]
fn subsample_restricts_nodes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small(Mode::PlainGcn, tmp.path());
    spec.data.subsample = Some(40);
    run(&spec).unwrap();
    let info: serde_json::Value = serde_json::from_str(&read(tmp.path().join("run.json"))).unwrap();
    assert_eq!(info["nodes"], 40);
}

/// The 300-node two-block fixture with three seeds.
fn desk(mode: Mode, out: &Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec { mode, out: out.to_path_buf(), ..ExperimentSpec::default() };
    spec.train.seeds = vec![0, 1, 2];
    spec
}

#[test]
fn removing_every_cross_edge_does_not_hurt() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = desk(Mode::DeletionSweep, tmp.path());
    spec.sweep.deletion_ratios = vec![0.0, 1.0];
    let r = run(&spec).unwrap();
    assert!(r.deletion[1].test_mean >= r.deletion[0].test_mean, "{:?}", r.deletion);
}

#[test]
fn aggressive_thresholds_beat_timid_ones_under_the_class_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = desk(Mode::ThresholdGrid, tmp.path());
    spec.sweep.xi_del = vec![0.1, 0.9];
    spec.sweep.xi_add = vec![0.1, 0.9];
    let r = run(&spec).unwrap();
    let cell = |a: f64, d: f64| r.grid.iter().find(|c| c.row == a && c.col == d).unwrap().test_mean;
    assert!(cell(0.1, 0.1) >= cell(0.9, 0.9), "{:?}", r.grid);
}
