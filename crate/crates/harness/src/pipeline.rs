//! Mode pipelines: refine → pseudo-label → train → evaluate, and the sweeps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tagtopo_core::graph::{unreliable_edge_ratio, TextAttributedGraph};
use tagtopo_core::labelprop::{init_llm, LabelMatrix};
use tagtopo_core::rng;
use tagtopo_core::train::{
    edge_weight_stats, train, write_edge_weights, write_history, MeanStd, TrainConfig, TrainInput, TrainOutcome,
};
use tagtopo_llm::{Backend, Gateway, HttpBackend, MockBackend, MockMode, ResponseCache};
use tracing::info;

use crate::config::{BackendKind, ExperimentSpec, Mode};
use crate::data::{load_dataset, Dataset};
use crate::pseudolabel::{pseudo_label, write_pseudo_labels, PseudoLabels};
use crate::refine::{apply_thresholds, judge, select_candidates, write_verdicts, Action, Judgments, Refined};
use crate::{stage, HarnessError};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";
pub const DELETION_FILE: &str = "deletion_sweep.csv";
pub const GRID_FILE: &str = "threshold_grid.csv";
pub const PARAM_FILE: &str = "param_sweep.csv";
pub const VERDICT_FILE: &str = "verdicts.csv";
pub const PSEUDO_FILE: &str = "pseudo_labels.csv";
pub const CACHE_FILE: &str = "llm_cache.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const REFINED_EDGES_FILE: &str = "refined_edges.csv";

/// Build the configured backend. Label-aware mocks read ground truth from the dataset.
pub fn make_backend(spec: &ExperimentSpec, ds: &Dataset) -> Result<Arc<dyn Backend>, HarnessError> {
    let mock = |mode| Arc::new(MockBackend::new(mode, spec.seed, ds.labels.clone(), ds.graph.num_classes())) as Arc<dyn Backend>;
    Ok(match spec.backend.kind {
        BackendKind::Http => {
            Arc::new(HttpBackend::new(spec.backend.http.clone()).map_err(|e| HarnessError::Backend(e.to_string()))?)
        }
        BackendKind::ClassOracle => mock(MockMode::ClassOracle),
        BackendKind::Lexical => mock(MockMode::Lexical),
        BackendKind::Noisy => mock(MockMode::Noisy { p: spec.backend.noise_p }),
    })
}

/// Gateway over the configured backend with the on-disk reply cache.
pub fn make_gateway(spec: &ExperimentSpec, ds: &Dataset) -> Result<Gateway, HarnessError> {
    let path = spec.backend.cache.clone().unwrap_or_else(|| spec.out.join(CACHE_FILE));
    let cache = ResponseCache::open(&path).map_err(|e| HarnessError::Backend(format!("cache {}: {e}", path.display())))?;
    Ok(Gateway::new(make_backend(spec, ds)?, Arc::new(cache), spec.backend.gateway.clone()))
}

/// Worker pool sized by the spec (0 = one thread per core).
pub fn make_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| HarnessError::Config(e.to_string()))
}

/// Accuracy of one seed of one variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedMetrics {
    pub variant: String,
    pub seed: u64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub same_class_weight: Option<f64>,
    pub cross_class_weight: Option<f64>,
}

/// Mean ± std over seeds of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub train_mean: f64,
    pub train_std: f64,
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    pub seeds: usize,
}

impl SummaryRow {
    pub fn of(variant: &str, seeds: &[SeedMetrics]) -> Self {
        let col = |f: fn(&SeedMetrics) -> f64| MeanStd::of(&seeds.iter().map(f).collect::<Vec<_>>());
        let (tr, va, te) = (col(|s| s.train_acc), col(|s| s.val_acc), col(|s| s.test_acc));
        Self {
            variant: variant.to_string(),
            train_mean: tr.mean,
            train_std: tr.std,
            val_mean: va.mean,
            val_std: va.std,
            test_mean: te.mean,
            test_std: te.std,
            seeds: seeds.len(),
        }
    }

    pub fn test(&self) -> MeanStd {
        MeanStd { mean: self.test_mean, std: self.test_std, n: self.seeds }
    }
}

/// All runs of one variant.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: String,
    pub outcomes: Vec<TrainOutcome>,
    pub metrics: Vec<SeedMetrics>,
    pub summary: SummaryRow,
}

/// Train every configured seed on `input` (in parallel on the current pool).
pub fn run_seeds(variant: &str, input: &TrainInput, cfg: &TrainConfig) -> Result<VariantResult, HarnessError> {
    let outcomes: Vec<TrainOutcome> = cfg.seeds.par_iter().map(|&s| train(input, cfg, s)).collect::<Result<_, _>>()?;
    let metrics: Vec<SeedMetrics> = outcomes
        .iter()
        .map(|o| {
            let stats = edge_weight_stats(&o.adjacency, &input.labels, input.num_classes);
            SeedMetrics {
                variant: variant.to_string(),
                seed: o.seed,
                train_acc: o.accuracy.train,
                val_acc: o.accuracy.val,
                test_acc: o.accuracy.test,
                best_epoch: o.best_epoch,
                same_class_weight: stats.same_class_mean,
                cross_class_weight: stats.cross_class_mean,
            }
        })
        .collect();
    let summary = SummaryRow::of(variant, &metrics);
    info!(variant, test = %summary.test(), "variant done");
    Ok(VariantResult { variant: variant.to_string(), outcomes, metrics, summary })
}

/// One row of the deletion sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeletionRow {
    pub ratio: f64,
    pub removed: usize,
    pub test_mean: f64,
    pub test_std: f64,
    pub seeds: usize,
}

/// One cell of a two-parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub row: f64,
    pub col: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

/// What a run produced, beyond the files it wrote.
#[derive(Debug, Clone, Default)]
pub struct RunResult {
    pub variants: Vec<VariantResult>,
    pub deletion: Vec<DeletionRow>,
    /// Rows are ξ_add (threshold grid) or λ (param sweep); columns ξ_del or β.
    pub grid: Vec<GridCell>,
    pub refined: Option<Refined>,
    pub pseudo: Option<PseudoLabels>,
    pub backend_calls: usize,
}

impl RunResult {
    pub fn summaries(&self) -> Vec<SummaryRow> {
        self.variants.iter().map(|v| v.summary.clone()).collect()
    }
}

/// Non-decreasing within one pooled standard deviation between consecutive rows.
pub fn trend_holds(rows: &[DeletionRow]) -> bool {
    rows.windows(2).all(|w| {
        let pooled = ((w[0].test_std.powi(2) + w[1].test_std.powi(2)) / 2.0).sqrt();
        w[1].test_mean >= w[0].test_mean - pooled
    })
}

#[derive(Serialize)]
struct RunInfo<'a> {
    mode: &'a str,
    seed: u64,
    config_hash: String,
    nodes: usize,
    edges: usize,
    classes: usize,
    train: usize,
    val: usize,
    test: usize,
    cross_class_ratio: Option<f64>,
    deleted: Option<usize>,
    added: Option<usize>,
    skipped: Option<usize>,
    pseudo_label_accuracy: Option<f64>,
    pseudo_label_fallbacks: Option<usize>,
    backend_calls: usize,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, HarnessError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_rows<T: Serialize>(path: PathBuf, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Format a grid value the same way in headers and labels.
pub fn grid_label(v: f64) -> String {
    format!("{v:.1}")
}

fn write_grid(path: PathBuf, corner: &str, rows: &[f64], cols: &[f64], cells: &[GridCell]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![corner.to_string()];
    header.extend(cols.iter().map(|&c| grid_label(c)));
    w.write_record(&header)?;
    for &r in rows {
        let mut rec = vec![grid_label(r)];
        for &c in cols {
            let cell = cells.iter().find(|x| x.row == r && x.col == c).expect("every cell was run");
            rec.push(cell.test_mean.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Training input over `graph` with the dataset's features, split and labels.
pub fn train_input(ds: &Dataset, graph: &TextAttributedGraph, cfg: &TrainConfig, llm_init: Option<LabelMatrix>) -> TrainInput {
    TrainInput {
        adjacency: graph.adjacency(cfg.self_loop),
        features: ds.features.clone(),
        split: ds.split.clone(),
        labels: ds.labels.clone(),
        num_classes: ds.graph.num_classes(),
        llm_init,
    }
}

/// Randomly remove `⌊ρ·#cross⌋` ground-truth cross-class edges for each ratio
/// and retrain. The removal order is one seeded permutation, so larger ratios
/// remove a superset of the edges removed at smaller ones.
pub fn deletion_sweep(ds: &Dataset, ratios: &[f64], cfg: &TrainConfig, seed: u64) -> Result<(Vec<DeletionRow>, Vec<VariantResult>), HarnessError> {
    let labels = &ds.labels;
    let mut cross: Vec<usize> = Vec::new();
    for (e, &(u, v)) in ds.graph.edges().iter().enumerate() {
        match (labels[u], labels[v]) {
            (Some(a), Some(b)) if a != b => cross.push(e),
            (Some(_), Some(_)) => {}
            _ => return Err(HarnessError::Data(format!("edge ({u}, {v}) has an unlabeled endpoint"))),
        }
    }
    cross.shuffle(&mut rng::stream(seed, "deletion-sweep"));
    let runs: Vec<(f64, usize, VariantResult)> = ratios
        .par_iter()
        .map(|&rho| {
            let k = ((rho * cross.len() as f64) + 1e-9).floor() as usize;
            let drop: std::collections::HashSet<usize> = cross[..k.min(cross.len())].iter().copied().collect();
            let edges = ds.graph.edges().iter().enumerate().filter(|(e, _)| !drop.contains(e)).map(|(_, &p)| p).collect();
            let graph = ds.graph.with_edges(edges).map_err(|e| HarnessError::Data(e.to_string()))?;
            let result = run_seeds(&format!("rho={}", grid_label(rho)), &train_input(ds, &graph, cfg, None), cfg)?;
            Ok((rho, k, result))
        })
        .collect::<Result<_, HarnessError>>()?;
    let rows = runs
        .iter()
        .map(|(rho, k, r)| DeletionRow {
            ratio: *rho,
            removed: *k,
            test_mean: r.summary.test_mean,
            test_std: r.summary.test_std,
            seeds: r.summary.seeds,
        })
        .collect();
    Ok((rows, runs.into_iter().map(|(_, _, r)| r).collect()))
}

/// Pseudo-label initialization for the propagation loss.
fn llm_init(ds: &Dataset, pseudo: &PseudoLabels) -> Result<LabelMatrix, HarnessError> {
    init_llm(&ds.split, &ds.labels, &pseudo.labels, ds.graph.num_classes()).map_err(|e| HarnessError::Data(e.to_string()))
}

/// Candidate scores for the dataset's graph.
pub fn score_candidates(spec: &ExperimentSpec, ds: &Dataset, gateway: &Gateway) -> Result<Judgments, HarnessError> {
    let candidates = select_candidates(&ds.graph, spec.refine.cap, spec.seed)?;
    info!(deletions = candidates.deletions.len(), additions = candidates.additions.len(), "scoring candidates");
    judge(&ds.graph, &candidates, gateway, spec.backend.example_count)
}

/// Execute `spec`: write every artifact to `spec.out` and return the results.
pub fn run(spec: &ExperimentSpec) -> Result<RunResult, HarnessError> {
    stage("config", spec.validate())?;
    let out = spec.out.clone();
    stage("output", std::fs::create_dir_all(&out).map_err(|e| HarnessError::Config(format!("{}: {e}", out.display()))))?;
    let ds = stage("load", load_dataset(&spec.data, spec.seed))?;
    std::fs::write(out.join("split.json"), ds.split.to_json())?;
    let pool = make_pool(spec.workers)?;
    pool.install(|| run_loaded(spec, &ds, &out))
}

fn run_loaded(spec: &ExperimentSpec, ds: &Dataset, out: &Path) -> Result<RunResult, HarnessError> {
    let mode = spec.mode;
    let gateway = if mode.needs_backend() { Some(stage("backend", make_gateway(spec, ds))?) } else { None };
    let mut result = RunResult::default();

    let judgments = match (&gateway, mode.refines()) {
        (Some(g), true) => Some(stage("refine", score_candidates(spec, ds, g))?),
        _ => None,
    };
    let mut graph = ds.graph.clone();
    if let (Some(j), Mode::AD | Mode::ADAndLpa) = (&judgments, mode) {
        let refined = stage("refine", apply_thresholds(&ds.graph, j, spec.train.xi_del, spec.train.xi_add))?;
        write_verdicts(create(out, VERDICT_FILE)?, &refined.verdicts, ds.graph.original_ids())?;
        graph = refined.graph.clone();
        result.refined = Some(refined);
    }
    let pseudo = match (&gateway, mode.needs_pseudo_labels()) {
        (Some(g), true) => {
            let p = stage("pseudolabel", pseudo_label(ds, g))?;
            write_pseudo_labels(create(out, PSEUDO_FILE)?, &p, ds.graph.original_ids())?;
            Some(p)
        }
        _ => None,
    };
    let init = pseudo.as_ref().map(|p| llm_init(ds, p)).transpose()?;
    let (lambda, beta) = mode.coefficients(spec.train.lambda, spec.train.beta);
    let base = TrainConfig { lambda, beta, ..spec.train.clone() };

    match mode {
        Mode::PlainGcn | Mode::GcnLpa | Mode::AD | Mode::LlmLpa | Mode::ADAndLpa => {
            let v = stage("train", run_seeds(mode.name(), &train_input(ds, &graph, &base, init), &base))?;
            for o in &v.outcomes {
                write_history(create(out, &format!("history_seed{}.csv", o.seed))?, &o.history)?;
                write_edge_weights(
                    create(out, &format!("edge_weights_seed{}.csv", o.seed))?,
                    &o.adjacency,
                    &ds.labels,
                    Some(graph.original_ids()),
                )?;
            }
            result.variants.push(v);
        }
        Mode::DeletionSweep => {
            let (rows, variants) = stage("train", deletion_sweep(ds, &spec.sweep.deletion_ratios, &base, spec.seed))?;
            write_rows(out.join(DELETION_FILE), &rows)?;
            result.deletion = rows;
            result.variants = variants;
        }
        Mode::ThresholdGrid => {
            let judgments = judgments.as_ref().expect("threshold grid scores candidates");
            let (xi_del, xi_add) = spec.sweep.threshold_grids();
            let cells: Vec<(f64, f64)> = xi_add.iter().flat_map(|&a| xi_del.iter().map(move |&d| (a, d))).collect();
            let runs: Vec<(GridCell, VariantResult)> = stage(
                "train",
                cells
                    .par_iter()
                    .map(|&(a, d)| {
                        let refined = apply_thresholds(&ds.graph, judgments, d, a)?;
                        let label = format!("xi_add={},xi_del={}", grid_label(a), grid_label(d));
                        let v = run_seeds(&label, &train_input(ds, &refined.graph, &base, None), &base)?;
                        Ok((GridCell { row: a, col: d, test_mean: v.summary.test_mean, test_std: v.summary.test_std }, v))
                    })
                    .collect::<Result<_, HarnessError>>(),
            )?;
            let (grid, variants): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
            write_grid(out.join(GRID_FILE), "xi_add\\xi_del", &xi_add, &xi_del, &grid)?;
            result.grid = grid;
            result.variants = variants;
        }
        Mode::ParamSweep => {
            let (lambdas, betas) = spec.sweep.weight_grids();
            let cells: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| betas.iter().map(move |&b| (l, b))).collect();
            let runs: Vec<(GridCell, VariantResult)> = stage(
                "train",
                cells
                    .par_iter()
                    .map(|&(l, b)| {
                        let cfg = TrainConfig { lambda: l, beta: b, ..base.clone() };
                        let label = format!("lambda={},beta={}", grid_label(l), grid_label(b));
                        let v = run_seeds(&label, &train_input(ds, &graph, &cfg, init.clone()), &cfg)?;
                        Ok((GridCell { row: l, col: b, test_mean: v.summary.test_mean, test_std: v.summary.test_std }, v))
                    })
                    .collect::<Result<_, HarnessError>>(),
            )?;
            let (grid, variants): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
            write_grid(out.join(PARAM_FILE), "lambda\\beta", &lambdas, &betas, &grid)?;
            result.grid = grid;
            result.variants = variants;
        }
    }

    let metrics: Vec<SeedMetrics> = result.variants.iter().flat_map(|v| v.metrics.clone()).collect();
    write_rows(out.join(METRICS_FILE), &metrics)?;
    write_rows(out.join(SUMMARY_FILE), &result.summaries())?;
    let mut text = create(out, SUMMARY_TEXT_FILE)?;
    for row in result.summaries() {
        writeln!(text, "{}\ttest {}", row.variant, row.test())?;
    }
    text.flush()?;

    result.backend_calls = gateway.as_ref().map_or(0, Gateway::backend_calls);
    result.pseudo = pseudo;
    let info = RunInfo {
        mode: mode.name(),
        seed: spec.seed,
        config_hash: base.hash(),
        nodes: ds.graph.num_nodes(),
        edges: graph.num_edges(),
        classes: ds.graph.num_classes(),
        train: ds.split.train.len(),
        val: ds.split.val.len(),
        test: ds.split.test.len(),
        cross_class_ratio: unreliable_edge_ratio(&ds.graph).ok().map(|s| s.overall),
        deleted: result.refined.as_ref().map(|r| r.count(Action::Delete)),
        added: result.refined.as_ref().map(|r| r.count(Action::Add)),
        skipped: result.refined.as_ref().map(|r| r.count(Action::Skip)),
        pseudo_label_accuracy: result.pseudo.as_ref().and_then(|p| p.accuracy(&ds.labels)),
        pseudo_label_fallbacks: result.pseudo.as_ref().map(PseudoLabels::fallbacks),
        backend_calls: result.backend_calls,
    };
    std::fs::write(out.join(RUN_FILE), serde_json::to_string_pretty(&info)?)?;
    Ok(result)
}

/// Write edges as CSV `src,dst` using file ids.
pub fn write_edges<W: Write>(out: W, graph: &TextAttributedGraph) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["src", "dst"])?;
    let ids = graph.original_ids();
    for &(u, v) in graph.edges() {
        w.write_record([ids[u].to_string(), ids[v].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Refinement alone: score candidates, apply `train.xi_del`/`train.xi_add`,
/// and write the verdict log and the refined edge list.
pub fn run_refine(spec: &ExperimentSpec) -> Result<Refined, HarnessError> {
    stage("config", spec.validate())?;
    std::fs::create_dir_all(&spec.out)?;
    let ds = stage("load", load_dataset(&spec.data, spec.seed))?;
    make_pool(spec.workers)?.install(|| {
        let gateway = stage("backend", make_gateway(spec, &ds))?;
        let judgments = stage("refine", score_candidates(spec, &ds, &gateway))?;
        let refined = stage("refine", apply_thresholds(&ds.graph, &judgments, spec.train.xi_del, spec.train.xi_add))?;
        write_verdicts(create(&spec.out, VERDICT_FILE)?, &refined.verdicts, ds.graph.original_ids())?;
        write_edges(create(&spec.out, REFINED_EDGES_FILE)?, &refined.graph)?;
        info!(
            deleted = refined.count(Action::Delete),
            added = refined.count(Action::Add),
            skipped = refined.count(Action::Skip),
            "refinement written"
        );
        Ok(refined)
    })
}

/// Pseudo-labelling alone: query rankings and write `pseudo_labels.csv`.
pub fn run_pseudolabel(spec: &ExperimentSpec) -> Result<PseudoLabels, HarnessError> {
    stage("config", spec.validate())?;
    std::fs::create_dir_all(&spec.out)?;
    let ds = stage("load", load_dataset(&spec.data, spec.seed))?;
    make_pool(spec.workers)?.install(|| {
        let gateway = stage("backend", make_gateway(spec, &ds))?;
        let p = stage("pseudolabel", pseudo_label(&ds, &gateway))?;
        write_pseudo_labels(create(&spec.out, PSEUDO_FILE)?, &p, ds.graph.original_ids())?;
        info!(accuracy = ?p.accuracy(&ds.labels), fallbacks = p.fallbacks(), "pseudo-labels written");
        Ok(p)
    })
}
