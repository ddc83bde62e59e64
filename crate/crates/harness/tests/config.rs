use std::collections::HashMap;
use std::path::Path;

use tagtopo::config::{BackendKind, ExperimentSpec, Mode, ENV_KEY, ENV_KEY_FALLBACK, ENV_MODEL};
use tagtopo::{exit, HarnessError};

const SPEC: &str = r#"
mode = "a-d-and-lpa"
seed = 7
out = "runs/ad"

[data]
nodes = "data/nodes.jsonl"
edges = "data/edges.csv"
features = "/abs/features.csv"
subsample = 200
split = "few-shot"

[train]
lambda = 2.0
beta = 0.5
seeds = [0, 1, 2]

[backend]
kind = "mock:noisy"
noise_p = 0.7

[sweep]
lambda = [0.0, 1.0]
"#;

#[test]
fn toml_spec_parses_and_resolves_paths() {
    let spec = ExperimentSpec::from_toml(SPEC, Path::new("/base")).unwrap();
    assert_eq!(spec.mode, Mode::ADAndLpa);
    assert_eq!(spec.seed, 7);
    assert_eq!(spec.out, Path::new("/base/runs/ad"));
    assert_eq!(spec.data.nodes.as_deref(), Some(Path::new("/base/data/nodes.jsonl")));
    assert_eq!(spec.data.features.as_deref(), Some(Path::new("/abs/features.csv")));
    assert_eq!(spec.data.subsample, Some(200));
    assert_eq!(spec.train.lambda, 2.0);
    assert_eq!(spec.train.seeds, vec![0, 1, 2]);
    assert_eq!(spec.train.epochs, 200, "unspecified training fields keep their defaults");
    assert_eq!(spec.backend.kind, BackendKind::Noisy);
    assert_eq!(spec.backend.noise_p, 0.7);
    assert_eq!(spec.sweep.lambda, vec![0.0, 1.0]);
    assert_eq!(spec.sweep.beta, vec![0.0, 1.0, 2.0, 5.0]);
    spec.validate().unwrap();
}

#[test]
fn unknown_fields_are_config_errors() {
    let e = ExperimentSpec::from_toml("mode = \"plain-gcn\"\nbogus = 1\n", Path::new(".")).unwrap_err();
    assert_eq!(e.exit_code(), exit::CONFIG);
    let e = ExperimentSpec::from_toml("mode = \"gcn-plus\"\n", Path::new(".")).unwrap_err();
    assert!(matches!(e, HarnessError::Config(_)));
}

#[test]
fn environment_supplies_the_key() {
    let mut spec = ExperimentSpec::from_toml("mode = \"a-d\"\n[backend]\nkind = \"http\"\n", Path::new(".")).unwrap();
    assert_eq!(spec.validate().unwrap_err().exit_code(), exit::CONFIG);
    let env: HashMap<&str, &str> = HashMap::from([(ENV_KEY_FALLBACK, "sk-fallback"), (ENV_MODEL, "gpt-4o-mini")]);
    spec.apply_env_from(|k| env.get(k).map(|v| v.to_string()));
    assert_eq!(spec.backend.http.api_key.as_deref(), Some("sk-fallback"));
    assert_eq!(spec.backend.http.model, "gpt-4o-mini");
    spec.validate().unwrap();
    let env: HashMap<&str, &str> = HashMap::from([(ENV_KEY_FALLBACK, "sk-fallback"), (ENV_KEY, "sk-primary")]);
    spec.apply_env_from(|k| env.get(k).map(|v| v.to_string()));
    assert_eq!(spec.backend.http.api_key.as_deref(), Some("sk-primary"));
}

#[test]
fn key_is_never_serialized() {
    let mut spec = ExperimentSpec::default();
    spec.backend.http.api_key = Some("sk-secret".into());
    let text = toml::to_string(&spec).unwrap();
    assert!(!text.contains("sk-secret"));
}

#[test]
fn plain_modes_do_not_need_a_key() {
    let spec = ExperimentSpec::from_toml("mode = \"plain-gcn\"\n[backend]\nkind = \"http\"\n", Path::new(".")).unwrap();
    spec.validate().unwrap();
}

#[test]
fn backend_names_round_trip() {
    for (name, kind) in [
        ("http", BackendKind::Http),
        ("mock:class-oracle", BackendKind::ClassOracle),
        ("mock:lexical", BackendKind::Lexical),
        ("mock:noisy", BackendKind::Noisy),
    ] {
        assert_eq!(name.parse::<BackendKind>().unwrap(), kind);
    }
    assert!("mock:psychic".parse::<BackendKind>().is_err());
}

#[test]
fn mode_coefficients() {
    assert_eq!(Mode::PlainGcn.coefficients(1.0, 2.0), (0.0, 0.0));
    assert_eq!(Mode::AD.coefficients(1.0, 2.0), (0.0, 0.0));
    assert_eq!(Mode::GcnLpa.coefficients(1.0, 2.0), (1.0, 0.0));
    assert_eq!(Mode::LlmLpa.coefficients(1.0, 2.0), (1.0, 2.0));
    assert_eq!(Mode::ADAndLpa.coefficients(1.0, 2.0), (1.0, 2.0));
    assert!(Mode::ThresholdGrid.refines() && !Mode::ThresholdGrid.needs_pseudo_labels());
    assert!(Mode::ParamSweep.is_sweep() && !Mode::ADAndLpa.is_sweep());
}

#[test]
fn full_grids() {
    let mut spec = ExperimentSpec::default();
    assert_eq!(spec.sweep.weight_grids().0.len(), 4);
    spec.sweep.full = true;
    let (xd, xa) = spec.sweep.threshold_grids();
    assert_eq!((xd.len(), xa.len()), (9, 9));
    assert_eq!(xd.first().copied(), Some(0.1));
    assert_eq!(xd.last().copied(), Some(0.9));
    let (l, b) = spec.sweep.weight_grids();
    assert_eq!((l.len(), b.len()), (51, 51));
    assert_eq!(l[37], 3.7);
}

#[test]
fn invalid_grids_are_rejected() {
    let spec = ExperimentSpec::from_toml("mode = \"deletion-sweep\"\n[sweep]\ndeletion_ratios = [0.0, 1.5]\n", Path::new(".")).unwrap();
    assert_eq!(spec.validate().unwrap_err().exit_code(), exit::CONFIG);
    let spec = ExperimentSpec::from_toml("mode = \"param-sweep\"\n[sweep]\nbeta = [6.0]\n", Path::new(".")).unwrap();
    assert_eq!(spec.validate().unwrap_err().exit_code(), exit::CONFIG);
}
