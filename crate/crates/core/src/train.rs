//! Joint optimization of network weights and edge parameters, evaluation,
//! aggregation across seeds, and the training artifacts (history, learned
//! edge weights, checkpoints).

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gcn::{forward, joint_loss, Activation, GcnModel, LossTerms};
use crate::graph::DatasetSplit;
use crate::kernel::{KernelError, Tape, Var};
use crate::labelprop::{init_true, lpa_loss, propagate, train_targets, LabelMatrix, LabelPropError};
use crate::normalize::normalized_values;
use crate::rng;
use crate::sparse::{AdjacencyError, WeightedAdjacency};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("evaluation subset is empty")]
    EmptySplit,
    #[error("non-finite loss at epoch {epoch}; tape:\n{dump}")]
    NonFinite { epoch: usize, dump: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    LabelProp(#[from] LabelPropError),
    #[error(transparent)]
    Adjacency(#[from] AdjacencyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

/// All hyperparameters of one training run (the seed list drives repeats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the true-label propagation loss.
    pub lambda: f64,
    /// Weight of the pseudo-label propagation loss.
    pub beta: f64,
    pub xi_del: f64,
    pub xi_add: f64,
    /// Number of GCN layers.
    pub k_gcn: usize,
    /// Number of label-propagation steps.
    pub k_lpa: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub activation: Activation,
    /// Learn edge parameters (otherwise every edge keeps weight `exp(θ)` as given).
    pub learn_edges: bool,
    /// Let the GCN term also push gradients into the edge parameters. Off by
    /// default, so edge weights are driven only by the propagation losses and
    /// zero propagation weights reduce exactly to a plain GCN.
    pub joint_edge_gradient: bool,
    pub self_loop: bool,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            beta: 0.0,
            xi_del: 0.5,
            xi_add: 0.5,
            k_gcn: 2,
            k_lpa: 5,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            patience: 50,
            hidden: 16,
            dropout: 0.5,
            activation: Activation::Relu,
            learn_edges: true,
            joint_edge_gradient: false,
            self_loop: true,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [("lambda", self.lambda), ("beta", self.beta)] {
            if !(v.is_finite() && (0.0..=5.0).contains(&v)) {
                return bad(format!("{name} = {v} outside [0, 5]"));
            }
        }
        for (name, v) in [("xi_del", self.xi_del), ("xi_add", self.xi_add)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.k_gcn == 0 || self.k_lpa == 0 {
            return bad("k_gcn and k_lpa must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return bad("learning rate must be positive and weight decay non-negative".into());
        }
        if self.epochs == 0 || self.hidden == 0 {
            return bad("epochs and hidden must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn uses_edges(&self) -> bool {
        self.learn_edges && (self.lambda > 0.0 || self.beta > 0.0 || self.joint_edge_gradient)
    }
}

/// Everything a training run reads.
#[derive(Debug, Clone)]
pub struct TrainInput {
    pub adjacency: WeightedAdjacency,
    pub features: Tensor,
    pub split: DatasetSplit,
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
    /// Initialization for the pseudo-label propagation term (needed when β > 0).
    pub llm_init: Option<LabelMatrix>,
}

/// How the GCN term sees the edge parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeCoupling {
    /// The GCN propagates over the same differentiable `Ā(θ)` as the
    /// propagation losses.
    Shared,
    /// The GCN propagates over a constant copy of the current `Ā(θ)`.
    Detached,
}

/// The data side of the objective, independent of parameter values.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub adjacency: &'a WeightedAdjacency,
    pub features: &'a Tensor,
    pub targets: Arc<Tensor>,
    pub train: Arc<Vec<usize>>,
    pub lpa_init: Option<&'a LabelMatrix>,
    pub llm_init: Option<&'a LabelMatrix>,
    pub lambda: f64,
    pub beta: f64,
    pub k_lpa: usize,
    pub activation: Activation,
}

impl Objective<'_> {
    /// Records the full loss on `tape` given weight leaves and, optionally,
    /// an edge-parameter leaf. Without `theta` the current adjacency is a
    /// constant and the propagation terms are still evaluated.
    pub fn record(
        &self,
        tape: &mut Tape,
        weights: &[Var],
        theta: Option<Var>,
        coupling: EdgeCoupling,
        masks: &[Tensor],
    ) -> Result<(LossTerms, Var), TrainError> {
        let pattern = self.adjacency.pattern();
        let theta = match theta {
            Some(t) => t,
            None => tape.constant(Tensor::column(self.adjacency.theta().to_vec())),
        };
        let learned = normalized_values(tape, self.adjacency, theta)?;
        let gcn_values = match coupling {
            EdgeCoupling::Shared => learned,
            EdgeCoupling::Detached => {
                let v = tape.value(learned).clone();
                tape.constant(v)
            }
        };
        let h0 = tape.constant(self.features.clone());
        let out = forward(tape, pattern, gcn_values, h0, weights, self.activation, masks)?;
        let l_gcn = tape.softmax_cross_entropy(out.logits, &self.targets, &self.train)?;
        let term = |init: Option<&LabelMatrix>, coef: f64, tape: &mut Tape| -> Result<Option<Var>, TrainError> {
            match init {
                Some(y0) if coef != 0.0 => {
                    let y = propagate(tape, pattern, learned, y0, self.k_lpa)?;
                    Ok(Some(lpa_loss(tape, y, &self.targets, &self.train)?))
                }
                _ => Ok(None),
            }
        };
        let l_lpa = term(self.lpa_init, self.lambda, tape)?;
        let l_llm = term(self.llm_init, self.beta, tape)?;
        Ok((joint_loss(tape, l_gcn, l_lpa, l_llm, self.lambda, self.beta)?, out.logits))
    }
}

/// Adaptive-moment optimizer state for one parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update of `param` in place; `decay` adds `decay · param` to the gradient.
    pub fn step(&mut self, param: &mut [f64], grad: &[f64], lr: f64, decay: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..param.len() {
            let g = grad[i] + decay * param[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            param[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    /// Model at the best validation epoch.
    pub model: GcnModel,
    /// Adjacency with the edge parameters of the best validation epoch.
    pub adjacency: WeightedAdjacency,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub accuracy: SplitAccuracy,
}

/// Fraction of `subset` whose row argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[Option<usize>], subset: &[usize]) -> Result<f64, TrainError> {
    if subset.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let hits = subset.iter().filter(|&&i| labels[i] == Some(logits.argmax_row(i))).count();
    Ok(hits as f64 / subset.len() as f64)
}

/// Accuracy of `model` on every split, propagating over the normalized `adjacency`.
pub fn evaluate(
    model: &GcnModel,
    adjacency: &WeightedAdjacency,
    features: &Tensor,
    split: &DatasetSplit,
    labels: &[Option<usize>],
) -> Result<SplitAccuracy, TrainError> {
    let norm = adjacency.normalize()?;
    let (logits, _) = model.infer(&norm.pattern, &norm.values, features)?;
    Ok(SplitAccuracy {
        train: accuracy(&logits, labels, &split.train)?,
        val: accuracy(&logits, labels, &split.val)?,
        test: accuracy(&logits, labels, &split.test)?,
    })
}

/// Trains one model from seed `seed`.
pub fn train(input: &TrainInput, config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let n = input.adjacency.num_nodes();
    if input.features.rows() != n || input.labels.len() != n {
        return Err(TrainError::Config(format!(
            "{} nodes but {} feature rows and {} labels",
            n,
            input.features.rows(),
            input.labels.len()
        )));
    }
    if config.beta > 0.0 && input.llm_init.is_none() {
        return Err(TrainError::Config("beta > 0 needs a pseudo-label initialization".into()));
    }
    let lpa_init = if config.lambda > 0.0 {
        Some(init_true(&input.split, &input.labels, input.num_classes)?)
    } else {
        None
    };
    let targets = Arc::new(train_targets(&input.labels, input.num_classes, &input.split.train)?);
    let train_set = Arc::new(input.split.train.clone());
    let learn_edges = config.uses_edges() && input.adjacency.num_edges() > 0;
    let coupling = if config.joint_edge_gradient { EdgeCoupling::Shared } else { EdgeCoupling::Detached };

    let mut init_rng = rng::stream(seed, "init");
    let mut dropout_rng = rng::stream(seed, "dropout");
    let mut model = GcnModel::new(
        input.features.cols(),
        config.hidden,
        input.num_classes,
        config.k_gcn,
        config.dropout,
        config.activation,
        &mut init_rng,
    );
    let mut adjacency = input.adjacency.clone();
    let mut w_opt: Vec<Adam> = model.weights.iter().map(|w| Adam::new(w.len())).collect();
    let mut theta_opt = Adam::new(adjacency.num_edges());

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, GcnModel, WeightedAdjacency)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        let masks = model.dropout_masks(n, &mut dropout_rng);
        let mut tape = Tape::new();
        let w_vars = model.params(&mut tape, true);
        let theta_var = learn_edges.then(|| tape.param(Tensor::column(adjacency.theta().to_vec())));
        let objective = Objective {
            adjacency: &adjacency,
            features: &input.features,
            targets: Arc::clone(&targets),
            train: Arc::clone(&train_set),
            lpa_init: lpa_init.as_ref(),
            llm_init: input.llm_init.as_ref(),
            lambda: config.lambda,
            beta: config.beta,
            k_lpa: config.k_lpa,
            activation: config.activation,
        };
        let (terms, _) = match objective.record(&mut tape, &w_vars, theta_var, coupling, &masks) {
            Ok(r) => r,
            Err(TrainError::Kernel(KernelError::NonFinite { op })) => {
                let dump = format!("{}!! {op} produced a non-finite value\n", tape.dump());
                return Err(TrainError::NonFinite { epoch, dump });
            }
            Err(e) => return Err(e),
        };
        let loss = tape.value(terms.total).item();
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { epoch, dump: tape.dump() });
        }
        let grads = tape.backward(terms.total)?;
        for ((w, var), opt) in model.weights.iter_mut().zip(&w_vars).zip(&mut w_opt) {
            opt.step(w.data_mut(), grads.get(*var).data(), config.lr, config.weight_decay);
        }
        if let Some(tv) = theta_var {
            let mut theta = adjacency.theta().to_vec();
            theta_opt.step(&mut theta, grads.get(tv).data(), config.lr, 0.0);
            adjacency.set_theta(&theta)?;
        }

        let acc = evaluate(&model, &adjacency, &input.features, &input.split, &input.labels)?;
        history.push(EpochRecord { epoch, train_loss: loss, val_acc: acc.val, test_acc: acc.test });
        let improved = best.as_ref().is_none_or(|(v, ..)| acc.val > *v);
        if improved {
            best = Some((acc.val, epoch, model.clone(), adjacency.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (_, best_epoch, model, adjacency) = best.expect("at least one epoch");
    let accuracy = evaluate(&model, &adjacency, &input.features, &input.split, &input.labels)?;
    Ok(TrainOutcome { seed, model, adjacency, history, best_epoch, accuracy })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

pub fn write_history<W: Write>(out: W, history: &[EpochRecord]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EdgeWeightRow {
    src: i64,
    dst: i64,
    weight: f64,
    src_class: Option<usize>,
    dst_class: Option<usize>,
}

/// Learned weights per undirected edge with the endpoint classes.
/// `original_ids`, when given, maps dense indices back to file ids.
pub fn write_edge_weights<W: Write>(
    out: W,
    adjacency: &WeightedAdjacency,
    labels: &[Option<usize>],
    original_ids: Option<&[i64]>,
) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    let id = |i: usize| original_ids.map_or(i as i64, |ids| ids[i]);
    for (&(u, v), weight) in adjacency.edges().iter().zip(adjacency.weights()) {
        w.serialize(EdgeWeightRow { src: id(u), dst: id(v), weight, src_class: labels[u], dst_class: labels[v] })?;
    }
    w.flush()?;
    Ok(())
}

/// Mean learned weight for each (class, class) block of labeled edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeWeightStats {
    /// `block_mean[a][b]` for `a ≤ b` (mirrored); `None` when the block is empty.
    pub block_mean: Vec<Vec<Option<f64>>>,
    pub same_class_mean: Option<f64>,
    pub cross_class_mean: Option<f64>,
}

pub fn edge_weight_stats(adjacency: &WeightedAdjacency, labels: &[Option<usize>], num_classes: usize) -> EdgeWeightStats {
    let mut sum = vec![vec![0.0; num_classes]; num_classes];
    let mut cnt = vec![vec![0usize; num_classes]; num_classes];
    let (mut same, mut cross) = ((0.0, 0usize), (0.0, 0usize));
    for (&(u, v), w) in adjacency.edges().iter().zip(adjacency.weights()) {
        if let (Some(a), Some(b)) = (labels[u], labels[v]) {
            let (a, b) = (a.min(b), a.max(b));
            sum[a][b] += w;
            cnt[a][b] += 1;
            let acc = if a == b { &mut same } else { &mut cross };
            acc.0 += w;
            acc.1 += 1;
        }
    }
    let mean = |s: f64, c: usize| (c > 0).then(|| s / c as f64);
    let block_mean = (0..num_classes)
        .map(|a| {
            (0..num_classes)
                .map(|b| {
                    let (x, y) = (a.min(b), a.max(b));
                    mean(sum[x][y], cnt[x][y])
                })
                .collect()
        })
        .collect();
    EdgeWeightStats { block_mean, same_class_mean: mean(same.0, same.1), cross_class_mean: mean(cross.0, cross.1) }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TAGTOPO1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub layers: usize,
    pub num_edges: usize,
}

/// Writes `<path>` (binary) and `<path>.json` (sidecar).
///
/// Binary layout, little-endian: 8-byte magic `TAGTOPO1`, `u32` tensor count,
/// then per tensor `u64` rows, `u64` cols and `rows·cols` `f64` values in
/// row-major order. Tensors are the layer weights in order followed by the
/// edge parameters as an `m × 1` column.
pub fn save_checkpoint(path: &Path, outcome: &TrainOutcome, config: &TrainConfig) -> Result<(), TrainError> {
    let mut tensors: Vec<&Tensor> = outcome.model.weights.iter().collect();
    let theta = Tensor::column(outcome.adjacency.theta().to_vec());
    tensors.push(&theta);
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    let meta = CheckpointMeta {
        config_hash: config.hash(),
        config: config.clone(),
        seed: outcome.seed,
        best_epoch: outcome.best_epoch,
        layers: outcome.model.num_layers(),
        num_edges: outcome.adjacency.num_edges(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Reads the tensors and sidecar written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Vec<Tensor>, CheckpointMeta), TrainError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| TrainError::Checkpoint(m.to_string());
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8], TrainError> {
        let s = bytes.get(pos..pos + k).ok_or_else(|| bad("truncated"))?;
        pos += k;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("wrong magic"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let r = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let c = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let len = r.checked_mul(c).ok_or_else(|| bad("shape overflow"))?;
        let raw = take(len.checked_mul(8).ok_or_else(|| bad("shape overflow"))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        tensors.push(Tensor::from_vec(r, c, data)?);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if meta.config.hash() != meta.config_hash {
        return Err(bad("config hash does not match sidecar config"));
    }
    Ok((tensors, meta))
}
