use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tagtopo::config::{BackendKind, ExperimentSpec, Mode};
use tagtopo::data::{load_dataset, write_graph_files};
use tagtopo::diagnose::{diagnose, DEFAULT_ETAS, DEFAULT_STEPS};
use tagtopo::pipeline::{run, run_pseudolabel, run_refine};
use tagtopo::{exit, report, HarnessError};
use tagtopo_core::graph::unreliable_edge_ratio;
use tagtopo_core::synth::{synth_fixture, SbmConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "tagtopo", version, about = "Language-model guided topology refinement and label propagation for GCNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset and print its statistics.
    LoadCheck(Common),
    /// Score candidate edges and write the refined graph and verdict log.
    Refine(Common),
    /// Rank categories for every non-training node and write pseudo-labels.
    Pseudolabel(Common),
    /// Run a single-variant mode across all training seeds.
    Train(Common),
    /// Run a sweep mode (deletion-sweep, threshold-grid, param-sweep).
    Sweep(Common),
    /// Train once and check that gradient steps shrink embedding variation.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Step sizes, each in (0, 1).
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ETAS)]
        eta: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
    },
    /// Tabulate completed runs with best and second-best marked.
    Report {
        /// Run directories, or directories containing run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write a stochastic-block-model fixture in the loader's file format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        p_intra: Option<f64>,
        #[arg(long)]
        p_inter: Option<f64>,
        #[arg(long)]
        feature_noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Flags shared by every experiment verb; each overrides the config file.
#[derive(Args)]
struct Common {
    /// TOML experiment spec.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for split, sampling and mocks.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// http, mock:class-oracle, mock:lexical or mock:noisy.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Keep only this many nodes.
    #[arg(long)]
    subsample: Option<usize>,
    /// JSONL node file (replaces the synthetic fixture).
    #[arg(long, requires = "edges")]
    nodes: Option<PathBuf>,
    /// CSV edge file with a `src,dst` header.
    #[arg(long, requires = "nodes")]
    edges: Option<PathBuf>,
    /// Headerless CSV of per-node feature vectors.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Train seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Use the fine sweep grids.
    #[arg(long)]
    full: bool,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec, HarnessError> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        spec.apply_env();
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(mode) = self.mode {
            spec.mode = mode;
        }
        if let Some(out) = &self.out {
            spec.out = out.clone();
        }
        if let Some(kind) = self.backend {
            spec.backend.kind = kind;
        }
        if let Some(k) = self.subsample {
            spec.data.subsample = Some(k);
        }
        if let (Some(nodes), Some(edges)) = (&self.nodes, &self.edges) {
            spec.data.nodes = Some(nodes.clone());
            spec.data.edges = Some(edges.clone());
            spec.data.synth = None;
        }
        if let Some(f) = &self.features {
            spec.data.features = Some(f.clone());
        }
        if let Some(n) = self.seeds {
            spec.train.seeds = (0..n).collect();
        }
        if let Some(w) = self.workers {
            spec.workers = w;
        }
        spec.sweep.full |= self.full;
        Ok(spec)
    }
}

fn load_check(spec: &ExperimentSpec) -> Result<(), HarnessError> {
    let ds = load_dataset(&spec.data, spec.seed)?;
    let g = &ds.graph;
    let stats = serde_json::json!({
        "nodes": g.num_nodes(),
        "edges": g.num_edges(),
        "classes": g.num_classes(),
        "categories": ds.categories,
        "labeled": ds.labels.iter().filter(|l| l.is_some()).count(),
        "feature_dim": ds.features.cols(),
        "cross_class_ratio": unreliable_edge_ratio(g).ok().map(|s| s.overall),
        "train": ds.split.train.len(),
        "val": ds.split.val.len(),
        "test": ds.split.test.len(),
    });
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn print_summaries(spec: &ExperimentSpec) -> Result<(), HarnessError> {
    let text = std::fs::read_to_string(spec.out.join(tagtopo::pipeline::SUMMARY_TEXT_FILE))?;
    print!("{text}");
    Ok(())
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::LoadCheck(c) => load_check(&c.spec()?),
        Command::Refine(c) => {
            let r = run_refine(&c.spec()?)?;
            println!(
                "deleted {}, added {}, skipped {}; {} edges",
                r.count(tagtopo::refine::Action::Delete),
                r.count(tagtopo::refine::Action::Add),
                r.count(tagtopo::refine::Action::Skip),
                r.graph.num_edges()
            );
            Ok(())
        }
        Command::Pseudolabel(c) => {
            let p = run_pseudolabel(&c.spec()?)?;
            let asked = p.origin.iter().filter(|o| **o != tagtopo::pseudolabel::LabelOrigin::Train).count();
            println!("{asked} nodes labelled, {} fallbacks", p.fallbacks());
            Ok(())
        }
        Command::Train(c) => {
            let spec = c.spec()?;
            if spec.mode.is_sweep() {
                return Err(HarnessError::Config(format!("{} is a sweep; use the sweep verb", spec.mode.name())));
            }
            run(&spec)?;
            print_summaries(&spec)
        }
        Command::Sweep(c) => {
            let spec = c.spec()?;
            if !spec.mode.is_sweep() {
                return Err(HarnessError::Config(format!(
                    "{} is not a sweep; pass --mode deletion-sweep, threshold-grid or param-sweep",
                    spec.mode.name()
                )));
            }
            run(&spec)?;
            print_summaries(&spec)
        }
        Command::Diagnose { common, eta, steps } => {
            let spec = common.spec()?;
            let r = diagnose(&spec, &eta, steps)?;
            println!(
                "{}: {} violations, identity gap {:e}, silhouette {:.4} → {:.4}",
                r.variant, r.violations, r.identity_gap, r.silhouette_input, r.silhouette_hidden
            );
            Ok(())
        }
        Command::Report { runs, out } => {
            let r = report::report(&runs, &out)?;
            print!("{}", r.text);
            Ok(())
        }
        Command::Synth { out, n_per_class, classes, p_intra, p_inter, feature_noise, seed } => {
            let d = SbmConfig::default();
            let cfg = SbmConfig {
                n_per_class: n_per_class.unwrap_or(d.n_per_class),
                classes: classes.unwrap_or(d.classes),
                p_intra: p_intra.unwrap_or(d.p_intra),
                p_inter: p_inter.unwrap_or(d.p_inter),
                feature_noise: feature_noise.unwrap_or(d.feature_noise),
                seed: seed.unwrap_or(d.seed),
                ..d
            };
            let s = synth_fixture(&cfg).map_err(|e| HarnessError::Data(e.to_string()))?;
            write_graph_files(&s.graph, &out)?;
            println!("{} nodes, {} edges; categories: {}", s.graph.num_nodes(), s.graph.num_edges(), s.categories.join(", "));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
