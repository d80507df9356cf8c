//! Downstream evaluation: inductive node classification (micro-F1) and
//! inductive link prediction (AUC, AP), with a built-in logistic probe.
//!
//! The probe is trained with the same tape and Adam as the encoder, on the
//! embeddings of training nodes only; unseen nodes are scored with the
//! learned classifier. Link prediction follows the five-step protocol:
//! mark nodes unseen, hide edges plus matched non-edges as the test set,
//! learn embeddings on the surviving graph, train a link predictor on the
//! surviving edges plus matched non-edges, and rank the test set.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::graph::{split_edges_for_lp, split_unseen_nodes, EdgeSplit, Graph, NodeSplit};
use crate::infer::{generate_embeddings, EmbeddingMatrix, InferError, Provenance};
use crate::matrix::Mat;
use crate::model::DualMode;
use crate::rng::substream;
use crate::sampling::{PairMode, WalkConfig};
use crate::tape::Tape;
use crate::train::{fit, AdamState, AdamUpdate, TrainConfig, TrainError};

#[derive(Error, Debug)]
pub enum EvalError {
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("dataset has no labels; node classification needs a label file")]
    NoLabels,
    #[error("embeddings were generated on a different graph than this split (hash mismatch)")]
    ProvenanceMismatch,
    #[error("embedding matrix has {rows} rows but the graph has {nodes} nodes")]
    SizeMismatch { rows: usize, nodes: usize },
}

// ---------------------------------------------------------------------------
// logistic probe
// ---------------------------------------------------------------------------

/// Probe training settings; lr 0.01 for 300 full-batch epochs by default.
#[derive(Clone, Copy, Debug)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 0.01,
            epochs: 300,
        }
    }
}

/// One-vs-rest logistic model over embedding rows.
#[derive(Clone, Debug)]
pub struct ProbeModel {
    pub weight: Mat,
    pub bias: Mat,
}

impl ProbeModel {
    /// Raw per-class scores (logits) for each input row.
    pub fn scores(&self, inputs: &Mat) -> Mat {
        let mut out = Mat::zeros(inputs.rows(), self.weight.cols());
        for r in 0..inputs.rows() {
            let xrow = inputs.row(r);
            let orow = out.row_mut(r);
            for c in 0..self.weight.cols() {
                let mut s = self.bias.get(0, c);
                for (k, &x) in xrow.iter().enumerate() {
                    s += x * self.weight.get(k, c);
                }
                orow[c] = s;
            }
        }
        out
    }
}

/// Train a sigmoid + binary-cross-entropy probe (full batch, Adam,
/// zero-initialized, so training is deterministic).
pub fn train_probe(inputs: &Mat, targets: &Mat, cfg: &ProbeConfig) -> ProbeModel {
    assert_eq!(inputs.rows(), targets.rows());
    let d = inputs.cols();
    let classes = targets.cols();
    let mut weight = Mat::zeros(d, classes);
    let mut bias = Mat::zeros(1, classes);
    let mut adam = AdamState::new([(d, classes), (1, classes)]);
    let scale = 1.0 / (inputs.rows().max(1) * classes) as f64;

    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.leaf(inputs.clone());
        let w = tape.leaf(weight.clone());
        let b = tape.leaf(bias.clone());
        let y = tape.leaf(targets.clone());
        let lin = tape.matmul(x, w);
        let logits = tape.add(lin, b);
        // BCE: -(y log sigma(s) + (1 - y) log sigma(-s)), averaged
        let ls_pos = tape.log_sigmoid(logits);
        let pos_term = tape.elementwise_mul(y, ls_pos);
        let neg_logits = tape.neg(logits);
        let ls_neg = tape.log_sigmoid(neg_logits);
        let ones = tape.leaf(Mat::filled(targets.rows(), classes, 1.0));
        let y_complement = tape.sub(ones, y);
        let neg_term = tape.elementwise_mul(y_complement, ls_neg);
        let both = tape.add(pos_term, neg_term);
        let ones2 = tape.leaf(Mat::filled(targets.rows(), classes, 1.0));
        let total = tape.dot(both, ones2);
        let loss = tape.scale(total, -scale);
        tape.backward(loss);
        let gw = tape.grad(w).clone();
        let gb = tape.grad(b).clone();
        adam.apply(
            vec![
                AdamUpdate {
                    name: "probe.weight",
                    param: &mut weight,
                    grad: &gw,
                    trainable: true,
                    sparse: false,
                },
                AdamUpdate {
                    name: "probe.bias",
                    param: &mut bias,
                    grad: &gb,
                    trainable: true,
                    sparse: false,
                },
            ],
            cfg.lr,
        )
        .expect("probe gradients are finite");
    }
    ProbeModel { weight, bias }
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

/// Micro-averaged F1 over pooled true/false positives across classes:
/// `TP / (TP + (FP + FN) / 2)`.
pub fn micro_f1(predicted: &[Vec<usize>], truth: &[Vec<usize>]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        for c in p {
            if t.contains(c) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        for c in t {
            if !p.contains(c) {
                fne += 1;
            }
        }
    }
    if tp + fp + fne == 0 {
        return 1.0;
    }
    tp as f64 / (tp as f64 + 0.5 * (fp + fne) as f64)
}

/// Area under the ROC curve by the midrank statistic (ties get half
/// credit, matching the pairwise-comparison definition).
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    assert!(!pos_scores.is_empty() && !neg_scores.is_empty());
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let p = pos_scores.len() as f64;
    let n = neg_scores.len() as f64;
    (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n)
}

/// Average precision: sum of precision-weighted recall increments over
/// descending score thresholds (tied scores form one threshold group, so
/// the value is invariant to monotone transforms of the scores).
pub fn average_precision(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    assert!(!pos_scores.is_empty());
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores must not be NaN"));
    let total_pos = pos_scores.len() as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        for item in &all[i..j] {
            if item.1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    ap
}

// ---------------------------------------------------------------------------
// protocols
// ---------------------------------------------------------------------------

fn one_hot_targets(labels: &crate::graph::LabelStore, nodes: &[usize]) -> Mat {
    let mut y = Mat::zeros(nodes.len(), labels.num_classes());
    for (r, &n) in nodes.iter().enumerate() {
        for &c in labels.labels_of(n) {
            y.set(r, c, 1.0);
        }
    }
    y
}

fn rows_of(emb: &EmbeddingMatrix, nodes: &[usize]) -> Mat {
    Mat::from_rows(nodes.iter().map(|&n| emb.row(n).to_vec()).collect())
}

/// Train the probe on the embeddings of training nodes, threshold-or-argmax
/// on the unseen nodes, and report micro-F1.
pub fn node_classification(
    emb: &EmbeddingMatrix,
    labels: &crate::graph::LabelStore,
    split: &NodeSplit,
    probe_cfg: &ProbeConfig,
) -> Result<f64, EvalError> {
    if emb.num_nodes() != labels.num_nodes() {
        return Err(EvalError::SizeMismatch {
            rows: emb.num_nodes(),
            nodes: labels.num_nodes(),
        });
    }
    let train_targets = one_hot_targets(labels, &split.train_nodes);
    for c in 0..labels.num_classes() {
        if (0..train_targets.rows()).all(|r| train_targets.get(r, c) == 0.0) {
            eprintln!("warning: class {c} absent from the training split; scoring anyway");
        }
    }
    let probe = train_probe(&rows_of(emb, &split.train_nodes), &train_targets, probe_cfg);
    let scores = probe.scores(&rows_of(emb, &split.unseen_nodes));
    let multi = labels.is_multi_label();
    let predicted: Vec<Vec<usize>> = (0..scores.rows())
        .map(|r| {
            if multi {
                // sigmoid(s) > 0.5 is s > 0
                (0..scores.cols()).filter(|&c| scores.get(r, c) > 0.0).collect()
            } else {
                let row = scores.row(r);
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(c, _)| c)
                    .unwrap_or(0);
                vec![best]
            }
        })
        .collect();
    let truth: Vec<Vec<usize>> = split
        .unseen_nodes
        .iter()
        .map(|&n| labels.labels_of(n).to_vec())
        .collect();
    Ok(micro_f1(&predicted, &truth))
}

/// How an edge is represented from its endpoint embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeFeature {
    Hadamard,
    Concat,
    L1,
    L2,
}

impl EdgeFeature {
    pub fn parse(s: &str) -> Option<EdgeFeature> {
        match s {
            "hadamard" => Some(EdgeFeature::Hadamard),
            "concat" => Some(EdgeFeature::Concat),
            "l1" => Some(EdgeFeature::L1),
            "l2" => Some(EdgeFeature::L2),
            _ => None,
        }
    }

    fn build(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        match self {
            EdgeFeature::Hadamard => a.iter().zip(b).map(|(x, y)| x * y).collect(),
            EdgeFeature::Concat => a.iter().chain(b).copied().collect(),
            EdgeFeature::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect(),
            EdgeFeature::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect(),
        }
    }
}

impl fmt::Display for EdgeFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeFeature::Hadamard => "hadamard",
            EdgeFeature::Concat => "concat",
            EdgeFeature::L1 => "l1",
            EdgeFeature::L2 => "l2",
        })
    }
}

fn edge_features(emb: &EmbeddingMatrix, edges: &[(usize, usize)], kind: EdgeFeature) -> Mat {
    Mat::from_rows(
        edges
            .iter()
            .map(|&(u, v)| kind.build(emb.row(u), emb.row(v)))
            .collect(),
    )
}

/// Train a logistic link predictor on the training edge sets and rank the
/// held-out test sets. Embeddings must come from the split's train graph;
/// when provenance is recorded it is verified against the split.
pub fn link_prediction(
    emb: &EmbeddingMatrix,
    edge_split: &EdgeSplit,
    probe_cfg: &ProbeConfig,
    kind: EdgeFeature,
) -> Result<(f64, f64), EvalError> {
    if emb.num_nodes() != edge_split.train_graph.num_nodes() {
        return Err(EvalError::SizeMismatch {
            rows: emb.num_nodes(),
            nodes: edge_split.train_graph.num_nodes(),
        });
    }
    if let Some(h) = &emb.provenance.graph_hash {
        if *h != edge_split.train_graph.content_hash() {
            return Err(EvalError::ProvenanceMismatch);
        }
    }
    let mut rows = Vec::with_capacity(edge_split.train_pos.len() + edge_split.train_neg.len());
    let mut y = Vec::with_capacity(rows.capacity());
    for &(u, v) in &edge_split.train_pos {
        rows.push(kind.build(emb.row(u), emb.row(v)));
        y.push(vec![1.0]);
    }
    for &(u, v) in &edge_split.train_neg {
        rows.push(kind.build(emb.row(u), emb.row(v)));
        y.push(vec![0.0]);
    }
    let probe = train_probe(&Mat::from_rows(rows), &Mat::from_rows(y), probe_cfg);
    let pos_scores: Vec<f64> = probe
        .scores(&edge_features(emb, &edge_split.test_pos, kind))
        .as_slice()
        .to_vec();
    let neg_scores: Vec<f64> = probe
        .scores(&edge_features(emb, &edge_split.test_neg, kind))
        .as_slice()
        .to_vec();
    Ok((
        auc(&pos_scores, &neg_scores),
        average_precision(&pos_scores, &neg_scores),
    ))
}

// ---------------------------------------------------------------------------
// end-to-end protocol
// ---------------------------------------------------------------------------

/// The method under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    CadeMs,
    CadeMa,
    /// K = 1, global bias frozen at zero: the plain hierarchical
    /// sampling-and-aggregating reference path.
    SagbBaseline,
    /// K = 1 with a trainable global bias (bias-only ablation).
    CadeGb,
    /// No training at all; raw feature rows serve as embeddings.
    RawFeatures,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "cade-ms" => Some(Method::CadeMs),
            "cade-ma" => Some(Method::CadeMa),
            "sagb-baseline" => Some(Method::SagbBaseline),
            "cade-gb" => Some(Method::CadeGb),
            "raw-features" => Some(Method::RawFeatures),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::CadeMs => "cade-ms",
            Method::CadeMa => "cade-ma",
            Method::SagbBaseline => "sagb-baseline",
            Method::CadeGb => "cade-gb",
            Method::RawFeatures => "raw-features",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    NodeClassification,
    LinkPrediction,
}

impl Task {
    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "nc" => Some(Task::NodeClassification),
            "lp" => Some(Task::LinkPrediction),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::NodeClassification => "nc",
            Task::LinkPrediction => "lp",
        })
    }
}

/// Everything a protocol run needs besides the graph and the seed.
#[derive(Clone, Debug)]
pub struct ProtocolSpec {
    pub method: Method,
    pub task: Task,
    pub train: TrainConfig,
    /// Fraction of nodes held out as unseen (both tasks).
    pub unseen_ratio: f64,
    /// Fraction of edges hidden for link prediction.
    pub hide_fraction: f64,
    /// May hidden test edges touch unseen nodes?
    pub lp_unseen_edges_allow: bool,
    pub edge_feature: EdgeFeature,
    pub probe: ProbeConfig,
    pub infer_walk: WalkConfig,
    pub pair_mode: PairMode,
    pub threads: usize,
}

/// One protocol run's outcome, with the resolved configuration echo.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub method: Method,
    pub task: Task,
    pub seed: u64,
    pub micro_f1: Option<f64>,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub checkpoint_hash: Option<String>,
    pub echo: Vec<(String, String)>,
}

impl MetricReport {
    /// Deterministic key = value text rendering.
    pub fn render(&self) -> String {
        let mut lines = vec![
            format!("method = {}", self.method),
            format!("task = {}", self.task),
            format!("seed = {}", self.seed),
        ];
        if let Some(v) = self.micro_f1 {
            lines.push(format!("micro_f1 = {v}"));
        }
        if let Some(v) = self.auc {
            lines.push(format!("auc = {v}"));
        }
        if let Some(v) = self.ap {
            lines.push(format!("ap = {v}"));
        }
        if let Some(h) = &self.checkpoint_hash {
            lines.push(format!("checkpoint = {h}"));
        }
        for (k, v) in &self.echo {
            lines.push(format!("config.{k} = {v}"));
        }
        lines.push(String::new());
        lines.join("\n")
    }
}

fn adjust_for_method(train: &TrainConfig, method: Method, seed: u64) -> TrainConfig {
    let mut cfg = train.clone();
    cfg.model.seed = seed;
    match method {
        Method::CadeMs => cfg.model.mode = DualMode::MultiSample,
        Method::CadeMa => cfg.model.mode = DualMode::MultiAggregate,
        Method::SagbBaseline => {
            cfg.model.mode = DualMode::MultiSample;
            cfg.model.candidates = 1;
            cfg.bias_trainable = false;
        }
        Method::CadeGb => {
            cfg.model.mode = DualMode::MultiSample;
            cfg.model.candidates = 1;
            cfg.bias_trainable = true;
        }
        Method::RawFeatures => {}
    }
    cfg
}

fn raw_feature_embeddings(g: &Graph) -> EmbeddingMatrix {
    EmbeddingMatrix {
        vectors: g.features().clone(),
        coverage: vec![1; g.num_nodes()],
        provenance: Provenance {
            checkpoint_hash: None,
            graph_hash: Some(g.content_hash()),
        },
    }
}

fn train_and_embed(
    train_input: &Graph,
    embed_graph: &Graph,
    train_nodes: &[usize],
    cfg: &TrainConfig,
    spec: &ProtocolSpec,
    seed: u64,
) -> Result<(EmbeddingMatrix, Option<String>), EvalError> {
    let (model, _log) = fit(train_input, train_nodes, cfg)?;
    let embed_seed: u64 = substream(seed, "embed").gen();
    let emb = generate_embeddings(
        embed_graph,
        &model,
        &spec.infer_walk,
        spec.pair_mode,
        embed_seed,
        spec.threads,
    )?;
    let hash = model.content_hash();
    Ok((emb, Some(hash)))
}

/// Execute split -> train -> embed -> evaluate end to end for one seed.
pub fn run_protocol(g: &Graph, spec: &ProtocolSpec, seed: u64) -> Result<MetricReport, EvalError> {
    let mut report = MetricReport {
        method: spec.method,
        task: spec.task,
        seed,
        micro_f1: None,
        auc: None,
        ap: None,
        checkpoint_hash: None,
        echo: {
            let mut e = spec.train.echo();
            e.push(("eval.unseen_ratio".into(), format!("{}", spec.unseen_ratio)));
            e.push(("eval.hide_fraction".into(), format!("{}", spec.hide_fraction)));
            e.push(("eval.edge_feature".into(), spec.edge_feature.to_string()));
            e.push((
                "eval.lp_unseen_edges".into(),
                if spec.lp_unseen_edges_allow {
                    "allow".into()
                } else {
                    "exclude".into()
                },
            ));
            e.push(("eval.probe_lr".into(), format!("{}", spec.probe.lr)));
            e.push(("eval.probe_epochs".into(), spec.probe.epochs.to_string()));
            e
        },
    };

    match spec.task {
        Task::NodeClassification => {
            let labels = g.labels().ok_or(EvalError::NoLabels)?;
            let split = split_unseen_nodes(g, spec.unseen_ratio, seed)?;
            let emb = match spec.method {
                Method::RawFeatures => raw_feature_embeddings(g),
                _ => {
                    let cfg = adjust_for_method(&spec.train, spec.method, seed);
                    let view = g.training_view(&split);
                    let (emb, hash) =
                        train_and_embed(&view, g, &split.train_nodes, &cfg, spec, seed)?;
                    report.checkpoint_hash = hash;
                    emb
                }
            };
            report.micro_f1 = Some(node_classification(&emb, labels, &split, &spec.probe)?);
        }
        Task::LinkPrediction => {
            let node_split = split_unseen_nodes(g, spec.unseen_ratio, seed)?;
            let eligible: Option<Vec<bool>> = if spec.lp_unseen_edges_allow {
                None
            } else {
                let mut seen = vec![false; g.num_nodes()];
                for &n in &node_split.train_nodes {
                    seen[n] = true;
                }
                Some(seen)
            };
            let edge_split = split_edges_for_lp(g, spec.hide_fraction, seed, eligible.as_deref())?;
            let emb = match spec.method {
                Method::RawFeatures => raw_feature_embeddings(&edge_split.train_graph),
                _ => {
                    let cfg = adjust_for_method(&spec.train, spec.method, seed);
                    // the encoder trains on the surviving edges among seen
                    // nodes; embeddings are generated on the full surviving
                    // graph so test edges touching unseen nodes are scorable
                    let view = edge_split.train_graph.training_view(&node_split);
                    let (emb, hash) = train_and_embed(
                        &view,
                        &edge_split.train_graph,
                        &node_split.train_nodes,
                        &cfg,
                        spec,
                        seed,
                    )?;
                    report.checkpoint_hash = hash;
                    emb
                }
            };
            let (auc_v, ap_v) = link_prediction(&emb, &edge_split, &spec.probe, spec.edge_feature)?;
            report.auc = Some(auc_v);
            report.ap = Some(ap_v);
        }
    }
    Ok(report)
}

/// Mean and sample standard deviation of a metric over repeated seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub stddev: f64,
    pub runs: usize,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MetricSummary {
        mean,
        stddev: var.sqrt(),
        runs: n,
    }
}

/// Run the protocol for seeds `base_seed .. base_seed + repeats`.
pub fn run_protocol_repeats(
    g: &Graph,
    spec: &ProtocolSpec,
    base_seed: u64,
    repeats: usize,
) -> Result<Vec<MetricReport>, EvalError> {
    (0..repeats)
        .map(|r| run_protocol(g, spec, base_seed + r as u64))
        .collect()
}
