//! Negative-sampling objectives, the Adam optimizer, and the training loop.
//!
//! The multi-sample loss scores the dual-encoded pair against direct
//! encoder outputs of the negatives. The multi-aggregate loss dual-encodes
//! each negative against the anchor's candidates with the attention vector
//! behind a stop-gradient, so the attention learns only from positive
//! pairs while the encoders learn from both terms.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::dual::{
    candidates, dual_encode_candidates, dual_encode_with_trees, BiasRef, DualOutcome, Similarity,
};
use crate::encoder::{lease_model, sagb_forward, ModelLease};
use crate::graph::{Graph, GraphError};
use crate::matrix::Mat;
use crate::model::{DualMode, Model, ModelConfig, ModelError};
use crate::rng::substream;
use crate::sampling::{
    positive_pairs, random_walks, sample_tree, NeighborhoodTree, PairMode, SamplingError,
    WalkConfig,
};
use crate::tape::{Tape, Value};

#[derive(Error, Debug)]
pub enum TrainError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error(
        "non-finite loss {value} at epoch {epoch}, batch {batch} (first pair ({}, {}))",
        pair.0, pair.1
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
        pair: (usize, usize),
    },
    #[error("negative sampler: only {eligible} eligible nodes for {needed} draws")]
    TooFewEligibleNodes { eligible: usize, needed: usize },
    #[error("no positive pairs were generated; the graph may be too sparse")]
    NoPairs,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

// ---------------------------------------------------------------------------
// negative sampling
// ---------------------------------------------------------------------------

/// Draws nodes with probability proportional to degree^power, excluding
/// zero-degree nodes.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    nodes: Vec<usize>,
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(g: &Graph, power: f64) -> Result<NegativeSampler, TrainError> {
        let nodes: Vec<usize> = (0..g.num_nodes()).filter(|&u| g.degree(u) >= 1).collect();
        if nodes.is_empty() {
            return Err(TrainError::TooFewEligibleNodes {
                eligible: 0,
                needed: 1,
            });
        }
        let mut cumulative = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        for &u in &nodes {
            acc += (g.degree(u) as f64).powf(power);
            cumulative.push(acc);
        }
        Ok(NegativeSampler { nodes, cumulative })
    }

    pub fn num_eligible(&self) -> usize {
        self.nodes.len()
    }

    /// `count` i.i.d. draws, rejecting anything in `exclude`. Duplicates
    /// among the draws are allowed.
    pub fn sample(
        &self,
        exclude: &[usize],
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<usize>, TrainError> {
        let eligible = self
            .nodes
            .iter()
            .filter(|n| !exclude.contains(n))
            .count();
        if eligible == 0 {
            return Err(TrainError::TooFewEligibleNodes {
                eligible: 0,
                needed: count,
            });
        }
        let total = *self.cumulative.last().unwrap();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x = rng.gen_range(0.0..total);
            let idx = self.cumulative.partition_point(|&c| c <= x);
            let node = self.nodes[idx.min(self.nodes.len() - 1)];
            if exclude.contains(&node) {
                continue;
            }
            out.push(node);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// One parameter's worth of update context for [`AdamState::apply`].
pub struct AdamUpdate<'a> {
    pub name: &'a str,
    pub param: &'a mut Mat,
    pub grad: &'a Mat,
    pub trainable: bool,
    /// Rows with an all-zero gradient are skipped entirely (no moment
    /// decay); used for the global-bias table.
    pub sparse: bool,
}

/// First/second moment estimates with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> AdamState {
        let m: Vec<Mat> = shapes.into_iter().map(|(r, c)| Mat::zeros(r, c)).collect();
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }

    pub fn for_model(model: &Model) -> AdamState {
        AdamState::new(model.params().iter().map(|(_, m)| m.shape()))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step over every parameter. The step counter advances
    /// once per call regardless of how many rows were touched.
    pub fn apply(&mut self, updates: Vec<AdamUpdate<'_>>, lr: f64) -> Result<(), TrainError> {
        assert_eq!(updates.len(), self.m.len(), "adam: parameter count changed");
        self.step += 1;
        let t = self.step as i32;
        let corr1 = 1.0 - ADAM_BETA1.powi(t);
        let corr2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, u) in updates.into_iter().enumerate() {
            if !u.grad.all_finite() {
                return Err(TrainError::NonFiniteGradient {
                    param: u.name.to_string(),
                });
            }
            if !u.trainable {
                continue;
            }
            assert_eq!(u.param.shape(), u.grad.shape(), "adam: shape mismatch");
            let (rows, cols) = u.param.shape();
            for r in 0..rows {
                if u.sparse && u.grad.row(r).iter().all(|&g| g == 0.0) {
                    continue;
                }
                for c in 0..cols {
                    let g = u.grad.get(r, c);
                    let m = ADAM_BETA1 * self.m[i].get(r, c) + (1.0 - ADAM_BETA1) * g;
                    let v = ADAM_BETA2 * self.v[i].get(r, c) + (1.0 - ADAM_BETA2) * g * g;
                    self.m[i].set(r, c, m);
                    self.v[i].set(r, c, v);
                    let m_hat = m / corr1;
                    let v_hat = v / corr2;
                    let next = u.param.get(r, c) - lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                    u.param.set(r, c, next);
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Negative-sampling pair loss:
/// `-log sigma(z_v . z_vp) - sum_n log sigma(-z_v . z_n)`.
/// `z_v`/`z_vp` come from the dual encoder; each negative is a direct
/// encoder output.
pub fn loss_ms(tape: &mut Tape, z_anchor: Value, z_partner: Value, z_negs: &[Value]) -> Value {
    assert!(!z_negs.is_empty(), "loss requires at least one negative");
    let pos_ip = tape.dot(z_anchor, z_partner);
    let pos_ls = tape.log_sigmoid(pos_ip);
    let mut total = tape.neg(pos_ls);
    for &z_n in z_negs {
        let ip = tape.dot(z_anchor, z_n);
        let nip = tape.neg(ip);
        let ls = tape.log_sigmoid(nip);
        let term = tape.neg(ls);
        total = tape.add(total, term);
    }
    total
}

/// How the attention vector enters the negative term of the
/// multi-aggregate loss.
pub enum NegAttention {
    /// Training: current attention values behind a stop-gradient.
    Stopped,
    /// Verification: a pinned copy, so finite differences of the live
    /// attention see exactly what the analytic gradient sees.
    Pinned(Mat),
}

/// Positive and negative terms of the multi-aggregate pair loss, kept
/// separate so the stop-gradient claim can be checked term by term.
#[allow(clippy::too_many_arguments)]
pub fn ma_loss_terms(
    tape: &mut Tape,
    cfg: &ModelConfig,
    lease: &ModelLease,
    bias: BiasRef<'_>,
    tree_anchor: &NeighborhoodTree,
    tree_partner: &NeighborhoodTree,
    neg_trees: &[NeighborhoodTree],
    features: &Mat,
    neg_attention: NegAttention,
) -> (Value, Value, DualOutcome) {
    assert!(!neg_trees.is_empty(), "loss requires at least one negative");
    let attn = lease.attention.expect("multi-aggregate model without attention");
    let cand_anchor = candidates(
        tape,
        cfg,
        lease,
        bias,
        std::slice::from_ref(tree_anchor),
        features,
    );
    let cand_partner = candidates(
        tape,
        cfg,
        lease,
        bias,
        std::slice::from_ref(tree_partner),
        features,
    );
    let positive = dual_encode_candidates(
        tape,
        cand_anchor,
        cand_partner,
        Similarity::WeightVector(attn),
    );
    let pos_ip = tape.dot(positive.z_anchor, positive.z_partner);
    let pos_ls = tape.log_sigmoid(pos_ip);
    let pos_term = tape.neg(pos_ls);

    let attn_neg = match neg_attention {
        NegAttention::Stopped => tape.stop_gradient(attn),
        NegAttention::Pinned(mat) => tape.leaf(mat),
    };
    let mut neg_sum: Option<Value> = None;
    for tree_n in neg_trees {
        let cand_n = candidates(tape, cfg, lease, bias, std::slice::from_ref(tree_n), features);
        let support = dual_encode_candidates(
            tape,
            cand_anchor,
            cand_n,
            Similarity::WeightVector(attn_neg),
        );
        let ip = tape.dot(support.z_anchor, support.z_partner);
        let nip = tape.neg(ip);
        let ls = tape.log_sigmoid(nip);
        let term = tape.neg(ls);
        neg_sum = Some(match neg_sum {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    (pos_term, neg_sum.unwrap(), positive)
}

/// Multi-aggregate pair loss. The positive term dual-encodes
/// (anchor, partner) with the live attention vector; each negative is
/// dual-encoded against the anchor's candidates with the attention behind
/// a stop-gradient, pushing apart the support embeddings.
#[allow(clippy::too_many_arguments)]
pub fn loss_ma_with_trees(
    tape: &mut Tape,
    cfg: &ModelConfig,
    lease: &ModelLease,
    bias: BiasRef<'_>,
    tree_anchor: &NeighborhoodTree,
    tree_partner: &NeighborhoodTree,
    neg_trees: &[NeighborhoodTree],
    features: &Mat,
    neg_attention: NegAttention,
) -> (Value, DualOutcome) {
    let (pos_term, neg_term, positive) = ma_loss_terms(
        tape,
        cfg,
        lease,
        bias,
        tree_anchor,
        tree_partner,
        neg_trees,
        features,
        neg_attention,
    );
    (tape.add(pos_term, neg_term), positive)
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

/// Everything `fit` needs beyond the architecture itself.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives per positive pair (Q).
    pub negatives: usize,
    pub neg_power: f64,
    /// Cap on pairs consumed per epoch; 0 means all.
    pub pairs_per_epoch: usize,
    pub walk: WalkConfig,
    pub pair_mode: PairMode,
    /// Freeze the global-bias table at zero (ablations and the plain
    /// sampling-aggregating baseline).
    pub bias_trainable: bool,
    /// Write a checkpoint every n epochs into `checkpoint_dir/epoch{n}`
    /// (0 = only the final one at the directory root).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate().map_err(TrainError::InvalidConfig)?;
        if self.lr <= 0.0 {
            return Err(TrainError::InvalidConfig("lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if self.negatives == 0 {
            return Err(TrainError::InvalidConfig("negatives (Q) must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolved settings, echoed into logs and reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let m = &self.model;
        vec![
            ("train.lr".into(), format!("{}", self.lr)),
            ("train.epochs".into(), self.epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.negatives".into(), self.negatives.to_string()),
            ("train.neg_power".into(), format!("{}", self.neg_power)),
            (
                "train.pairs_per_epoch".into(),
                self.pairs_per_epoch.to_string(),
            ),
            ("train.mode".into(), m.mode.to_string()),
            ("train.bias_trainable".into(), self.bias_trainable.to_string()),
            ("model.K".into(), m.candidates.to_string()),
            ("model.L".into(), m.depth.to_string()),
            ("model.d".into(), m.dim.to_string()),
            (
                "model.sizes".into(),
                m.layer_sizes
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("model.aggregator".into(), m.aggregator.to_string()),
            ("model.activation".into(), m.activation.to_string()),
            (
                "model.normalize_output".into(),
                m.normalize_output.to_string(),
            ),
            ("sampling.walks".into(), self.walk.walks_per_node.to_string()),
            ("sampling.length".into(), self.walk.walk_length.to_string()),
            (
                "sampling.pair_mode".into(),
                match self.pair_mode {
                    PairMode::StartVsRest => "start_vs_rest".into(),
                    PairMode::AllOffsets => "all_offsets".into(),
                },
            ),
            ("seed".into(), m.seed.to_string()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wallclock_s: f64,
}

/// Per-epoch losses plus the resolved-config echo.
#[derive(Clone, Debug)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub echo: Vec<(String, String)>,
}

impl TrainLog {
    /// Text form: `#`-prefixed echo lines, then one
    /// `epoch<TAB>mean_loss<TAB>wallclock_s` line per epoch.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.echo {
            s.push_str(&format!("# {k} = {v}\n"));
        }
        for e in &self.epochs {
            s.push_str(&format!("{}\t{}\t{}\n", e.epoch, e.mean_loss, e.wallclock_s));
        }
        s
    }
}

/// Unsupervised training on a (training-view) graph. Freshly generates a
/// reshuffled pair set every epoch, batches pair losses, and updates all
/// parameters with Adam. Single-threaded and deterministic in the seed.
pub fn fit(g: &Graph, train_nodes: &[usize], cfg: &TrainConfig) -> Result<(Model, TrainLog), TrainError> {
    cfg.validate()?;
    if g.num_edges() == 0 {
        return Err(TrainError::Graph(GraphError::NoEdges));
    }
    let seed = cfg.model.seed;
    let mut model = Model::init(cfg.model.clone(), g.num_nodes(), train_nodes);
    model.bias.trainable = cfg.bias_trainable;
    let sampler = NegativeSampler::new(g, cfg.neg_power)?;
    let mut adam = AdamState::for_model(&model);
    let mut log = TrainLog {
        epochs: Vec::with_capacity(cfg.epochs),
        echo: cfg.echo(),
    };

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let walk_seed: u64 = substream(seed, &format!("epoch-walks/{epoch}")).gen();
        let walks = random_walks(g, &cfg.walk, walk_seed)?;
        let mut pairs = positive_pairs(&walks, cfg.pair_mode).pairs;
        if pairs.is_empty() {
            return Err(TrainError::NoPairs);
        }
        {
            use rand::seq::SliceRandom;
            let mut shuffle_rng = substream(seed, &format!("shuffle/{epoch}"));
            pairs.shuffle(&mut shuffle_rng);
        }
        if cfg.pairs_per_epoch > 0 {
            pairs.truncate(cfg.pairs_per_epoch);
        }
        let mut trees_rng = substream(seed, &format!("trees/{epoch}"));
        let mut negs_rng = substream(seed, &format!("negs/{epoch}"));

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_idx, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let lease = lease_model(&mut tape, &model);
            let mut terms: Vec<Value> = Vec::with_capacity(batch.len());
            for &(v, vp) in batch {
                let negs = sampler.sample(&[v, vp], cfg.negatives, &mut negs_rng)?;
                let term = match cfg.model.mode {
                    DualMode::MultiSample => {
                        let trees_v =
                            crate::dual::sample_candidate_trees(g, v, &cfg.model, &mut trees_rng)?;
                        let trees_p =
                            crate::dual::sample_candidate_trees(g, vp, &cfg.model, &mut trees_rng)?;
                        let bias = lease.bias.as_ref().map(|b| (b, &model.bias));
                        let out = dual_encode_with_trees(
                            &mut tape,
                            &cfg.model,
                            &lease,
                            bias,
                            &trees_v,
                            &trees_p,
                            g.features(),
                            Similarity::Dot,
                        );
                        let mut z_negs = Vec::with_capacity(negs.len());
                        for &n in &negs {
                            let tree = sample_tree(g, n, &cfg.model.layer_sizes, &mut trees_rng)?;
                            let z = sagb_forward(
                                &mut tape,
                                &cfg.model,
                                &lease.encoders[0],
                                bias,
                                &tree,
                                g.features(),
                            );
                            z_negs.push(z);
                        }
                        loss_ms(&mut tape, out.z_anchor, out.z_partner, &z_negs)
                    }
                    DualMode::MultiAggregate => {
                        let tree_v = sample_tree(g, v, &cfg.model.layer_sizes, &mut trees_rng)?;
                        let tree_p = sample_tree(g, vp, &cfg.model.layer_sizes, &mut trees_rng)?;
                        let mut neg_trees = Vec::with_capacity(negs.len());
                        for &n in &negs {
                            neg_trees
                                .push(sample_tree(g, n, &cfg.model.layer_sizes, &mut trees_rng)?);
                        }
                        let bias = lease.bias.as_ref().map(|b| (b, &model.bias));
                        let (loss, _) = loss_ma_with_trees(
                            &mut tape,
                            &cfg.model,
                            &lease,
                            bias,
                            &tree_v,
                            &tree_p,
                            &neg_trees,
                            g.features(),
                            NegAttention::Stopped,
                        );
                        loss
                    }
                };
                terms.push(term);
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = tape.add(total, t);
            }
            let mean = tape.scale(total, 1.0 / batch.len() as f64);
            let mean_value = tape.scalar_value(mean);
            if !mean_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value: mean_value,
                    pair: batch[0],
                });
            }
            tape.backward(mean);
            let grads = lease.grads(&tape, &model);
            apply_adam(&mut model, &mut adam, &grads, cfg.lr)?;
            loss_sum += mean_value * batch.len() as f64;
            loss_count += batch.len();
        }

        log.epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / loss_count as f64,
            wallclock_s: started.elapsed().as_secs_f64(),
        });

        if let (Some(dir), true) = (
            &cfg.checkpoint_dir,
            cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0,
        ) {
            model.save_checkpoint(&dir.join(format!("epoch{}", epoch + 1)))?;
        }
    }

    if let Some(dir) = &cfg.checkpoint_dir {
        model.save_checkpoint(dir)?;
    }
    Ok((model, log))
}

/// One Adam step over a model, honoring trainability and bias sparsity.
pub fn apply_adam(
    model: &mut Model,
    adam: &mut AdamState,
    grads: &[Mat],
    lr: f64,
) -> Result<(), TrainError> {
    let flags: Vec<(String, bool, bool)> = model
        .params()
        .iter()
        .map(|(n, _)| (n.clone(), model.is_trainable(n), model.is_sparse(n)))
        .collect();
    let params = model.params_mut();
    assert_eq!(params.len(), grads.len());
    let updates: Vec<AdamUpdate<'_>> = params
        .into_iter()
        .zip(grads)
        .zip(&flags)
        .map(|(((_, param), grad), (name, trainable, sparse))| AdamUpdate {
            name,
            param,
            grad,
            trainable: *trainable,
            sparse: *sparse,
        })
        .collect();
    adam.apply(updates, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, AggregatorKind};
    use crate::synth;

    fn tiny_cfg(mode: DualMode, k: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                mode,
                candidates: k,
                depth: 2,
                feat_dim: 2,
                dim: 4,
                layer_sizes: vec![3, 2],
                aggregator: AggregatorKind::Mean,
                activation: Activation::Sigmoid,
                normalize_output: false,
                seed,
            },
            lr: 0.01,
            epochs: 2,
            batch_size: 8,
            negatives: 3,
            neg_power: 0.75,
            pairs_per_epoch: 24,
            walk: WalkConfig {
                walks_per_node: 5,
                walk_length: 3,
            },
            pair_mode: PairMode::StartVsRest,
            bias_trainable: true,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }

    #[test]
    fn equal_degrees_draw_uniformly() {
        let g = synth::cycle(6); // 2-regular
        let sampler = NegativeSampler::new(&g, 0.75).unwrap();
        let mut rng = substream(2, "negs");
        let draws = sampler.sample(&[], 100_000, &mut rng).unwrap();
        let mut counts = [0usize; 6];
        for d in draws {
            counts[d] += 1;
        }
        for c in counts {
            let f = c as f64 / 100_000.0;
            assert!((f - 1.0 / 6.0).abs() < 0.02, "freq {f}");
        }
    }

    #[test]
    fn degree_skew_follows_the_three_quarter_power() {
        // star with 16 leaves: center degree 16, leaves degree 1;
        // p(center)/p(leaf) should be 16^0.75 = 8
        let g = synth::star(16);
        let sampler = NegativeSampler::new(&g, 0.75).unwrap();
        let mut rng = substream(3, "negs");
        let draws = sampler.sample(&[], 200_000, &mut rng).unwrap();
        let center = draws.iter().filter(|&&d| d == 0).count() as f64;
        let leaf1 = draws.iter().filter(|&&d| d == 1).count() as f64;
        let ratio = center / leaf1;
        assert!((ratio - 8.0).abs() < 0.8, "ratio {ratio}");
    }

    #[test]
    fn exclusions_are_honored_even_when_little_remains() {
        let g = synth::cycle(5);
        let sampler = NegativeSampler::new(&g, 0.75).unwrap();
        let mut rng = substream(4, "negs");
        // exclude all but nodes {3, 4}
        let draws = sampler.sample(&[0, 1, 2], 50, &mut rng).unwrap();
        assert_eq!(draws.len(), 50);
        assert!(draws.iter().all(|&d| d == 3 || d == 4));
        match sampler.sample(&[0, 1, 2, 3, 4], 1, &mut rng) {
            Err(TrainError::TooFewEligibleNodes { eligible: 0, .. }) => {}
            other => panic!("expected TooFewEligibleNodes, got {other:?}"),
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_bounded_by_lr() {
        let mut p = Mat::row_vec(vec![1.0, -2.0, 0.5]);
        let g = Mat::row_vec(vec![0.3, -40.0, 1e-3]);
        let before = p.clone();
        let mut adam = AdamState::new([(1, 3)]);
        adam.apply(
            vec![AdamUpdate {
                name: "p",
                param: &mut p,
                grad: &g,
                trainable: true,
                sparse: false,
            }],
            0.05,
        )
        .unwrap();
        for i in 0..3 {
            let delta = (p.get(0, i) - before.get(0, i)).abs();
            assert!(delta <= 0.05 + 1e-12, "step {delta} exceeds lr");
            // every coordinate moves against its gradient
            assert!((p.get(0, i) - before.get(0, i)) * g.get(0, i) < 0.0);
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged_but_advances_the_step() {
        let mut p = Mat::row_vec(vec![1.0, 2.0]);
        let g = Mat::zeros(1, 2);
        let mut adam = AdamState::new([(1, 2)]);
        adam.apply(
            vec![AdamUpdate {
                name: "p",
                param: &mut p,
                grad: &g,
                trainable: true,
                sparse: false,
            }],
            0.1,
        )
        .unwrap();
        assert_eq!(p.as_slice(), &[1.0, 2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_converges_on_a_quadratic_bowl() {
        // f(w) = |w|^2, gradient 2w
        let mut w = Mat::row_vec(vec![1.0, 1.0]);
        let mut adam = AdamState::new([(1, 2)]);
        for _ in 0..500 {
            let g = w.map(|x| 2.0 * x);
            adam.apply(
                vec![AdamUpdate {
                    name: "w",
                    param: &mut w,
                    grad: &g,
                    trainable: true,
                    sparse: false,
                }],
                0.05,
            )
            .unwrap();
        }
        let norm = w.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "|w| = {norm}");
    }

    #[test]
    fn non_finite_gradients_abort_with_the_parameter_name() {
        let mut p = Mat::row_vec(vec![1.0]);
        let g = Mat::row_vec(vec![f64::NAN]);
        let mut adam = AdamState::new([(1, 1)]);
        match adam.apply(
            vec![AdamUpdate {
                name: "enc0.layer1.weight",
                param: &mut p,
                grad: &g,
                trainable: true,
                sparse: false,
            }],
            0.1,
        ) {
            Err(TrainError::NonFiniteGradient { param }) => {
                assert_eq!(param, "enc0.layer1.weight");
            }
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn sparse_rows_with_zero_gradient_are_frozen() {
        let mut p = Mat::from_rows(vec![vec![1.0, 1.0], vec![2.0, 2.0]]);
        let mut g = Mat::zeros(2, 2);
        g.set(1, 0, 0.5);
        let mut adam = AdamState::new([(2, 2)]);
        // touch row 1 twice; row 0 must stay bit-identical
        for _ in 0..2 {
            adam.apply(
                vec![AdamUpdate {
                    name: "bias",
                    param: &mut p,
                    grad: &g,
                    trainable: true,
                    sparse: true,
                }],
                0.1,
            )
            .unwrap();
        }
        assert_eq!(p.row(0), &[1.0, 1.0]);
        assert!(p.get(1, 0) < 2.0);
        assert_eq!(p.get(1, 1), 2.0); // zero-grad column still has zero moments
    }

    #[test]
    fn orthogonal_embeddings_hit_the_closed_form_loss() {
        let mut tape = Tape::new();
        let z_v = tape.leaf(Mat::row_vec(vec![1.0, 0.0, 0.0]));
        let z_vp = tape.leaf(Mat::row_vec(vec![0.0, 1.0, 0.0]));
        let n1 = tape.leaf(Mat::row_vec(vec![0.0, 0.0, 1.0]));
        let n2 = tape.leaf(Mat::row_vec(vec![0.0, 0.0, -1.0]));
        let loss = loss_ms(&mut tape, z_v, z_vp, &[n1, n2]);
        let expect = 3.0 * std::f64::consts::LN_2; // (1 + Q) log 2 with Q = 2
        assert!((tape.scalar_value(loss) - expect).abs() < 1e-12);
    }

    #[test]
    fn aligned_pair_with_antialigned_negatives_drives_the_loss_to_zero() {
        let mut tape = Tape::new();
        let big = Mat::row_vec(vec![30.0, 0.0]);
        let z_v = tape.leaf(big.clone());
        let z_vp = tape.leaf(big);
        let n = tape.leaf(Mat::row_vec(vec![-30.0, 0.0]));
        let loss = loss_ms(&mut tape, z_v, z_vp, &[n]);
        assert!(tape.scalar_value(loss) < 1e-9);
    }

    #[test]
    fn loss_ms_matches_a_straight_recomputation_and_its_gradients_check_out() {
        use crate::gradcheck::{check_gradients, DEFAULT_EPSILON};
        let zv = vec![0.3, -0.8, 0.5];
        let zp = vec![-0.2, 0.9, 0.4];
        let zn1 = vec![1.1, 0.2, -0.7];
        let zn2 = vec![-0.5, -0.6, 0.8];

        let build = |vals: &[Mat]| {
            let mut tape = Tape::new();
            let v = tape.leaf(vals[0].clone());
            let p = tape.leaf(vals[1].clone());
            let n1 = tape.leaf(vals[2].clone());
            let n2 = tape.leaf(vals[3].clone());
            let loss = loss_ms(&mut tape, v, p, &[n1, n2]);
            (tape, vec![v, p, n1, n2], loss)
        };
        let params = vec![
            Mat::row_vec(zv.clone()),
            Mat::row_vec(zp.clone()),
            Mat::row_vec(zn1.clone()),
            Mat::row_vec(zn2.clone()),
        ];
        let (tape, _, loss) = build(&params);

        // straight scalar recomputation
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let direct = -sigmoid(dot(&zv, &zp)).ln()
            - sigmoid(-dot(&zv, &zn1)).ln()
            - sigmoid(-dot(&zv, &zn2)).ln();
        assert!((tape.scalar_value(loss) - direct).abs() < 1e-12);
        assert!(tape.scalar_value(loss) > 0.0);

        let (mut tape, leaves, loss) = build(&params);
        tape.backward(loss);
        let analytic: Vec<Mat> = leaves.iter().map(|&l| tape.grad(l).clone()).collect();
        let report = check_gradients(
            &["z_v", "z_vp", "z_n1", "z_n2"],
            &params,
            &analytic,
            |ps| {
                let (t, _, l) = build(ps);
                t.scalar_value(l)
            },
            DEFAULT_EPSILON,
        );
        assert!(report.max_rel_error < 1e-8, "{}", report.summary());
    }

    #[test]
    fn ma_loss_with_one_candidate_degenerates_to_the_ms_loss() {
        let g = synth::two_cliques(4, 3);
        let mut cfg = tiny_cfg(DualMode::MultiAggregate, 1, 17);
        cfg.model.candidates = 1;
        let train: Vec<usize> = (0..8).collect();
        let model = Model::init(cfg.model.clone(), 8, &train);

        let sizes = cfg.model.layer_sizes.clone();
        let mut rng = substream(8, "trees");
        let tree_v = sample_tree(&g, 0, &sizes, &mut rng).unwrap();
        let tree_p = sample_tree(&g, 1, &sizes, &mut rng).unwrap();
        let neg_trees = vec![
            sample_tree(&g, 6, &sizes, &mut rng).unwrap(),
            sample_tree(&g, 7, &sizes, &mut rng).unwrap(),
        ];

        let mut tape = Tape::new();
        let lease = lease_model(&mut tape, &model);
        let bias = lease.bias.as_ref().map(|b| (b, &model.bias));
        let (ma_loss, _) = loss_ma_with_trees(
            &mut tape,
            &cfg.model,
            &lease,
            bias,
            &tree_v,
            &tree_p,
            &neg_trees,
            g.features(),
            NegAttention::Stopped,
        );
        let ma_value = tape.scalar_value(ma_loss);

        // ms route on the same trees: K=1 dual encode plus direct negatives
        let mut tape2 = Tape::new();
        let lease2 = lease_model(&mut tape2, &model);
        let bias2 = lease2.bias.as_ref().map(|b| (b, &model.bias));
        let out = dual_encode_with_trees(
            &mut tape2,
            &cfg.model,
            &lease2,
            bias2,
            std::slice::from_ref(&tree_v),
            std::slice::from_ref(&tree_p),
            g.features(),
            Similarity::Dot,
        );
        let z_negs: Vec<Value> = neg_trees
            .iter()
            .map(|t| {
                sagb_forward(
                    &mut tape2,
                    &cfg.model,
                    &lease2.encoders[0],
                    bias2,
                    t,
                    g.features(),
                )
            })
            .collect();
        let ms_loss = loss_ms(&mut tape2, out.z_anchor, out.z_partner, &z_negs);
        assert!((ma_value - tape2.scalar_value(ms_loss)).abs() < 1e-12);
    }

    #[test]
    fn fit_runs_learns_and_reproduces_bit_identically() {
        let g = synth::two_cliques(5, 4);
        let train: Vec<usize> = (0..10).collect();
        let cfg = tiny_cfg(DualMode::MultiSample, 2, 77);
        let (m1, log1) = fit(&g, &train, &cfg).unwrap();
        let (m2, _) = fit(&g, &train, &cfg).unwrap();
        assert_eq!(m1.content_hash(), m2.content_hash());
        assert_eq!(log1.epochs.len(), 2);
        assert!(log1.epochs.iter().all(|e| e.mean_loss.is_finite()));
        let echo_text = log1
            .echo
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(echo_text.contains("train.negatives = 3"));
        assert!(echo_text.contains("model.K = 2"));
    }

    #[test]
    fn default_negatives_setting_is_echoed_as_twenty() {
        let mut cfg = tiny_cfg(DualMode::MultiSample, 2, 1);
        cfg.negatives = 20;
        let echo = cfg.echo();
        let q = echo
            .iter()
            .find(|(k, _)| k == "train.negatives")
            .map(|(_, v)| v.clone());
        assert_eq!(q.as_deref(), Some("20"));
    }

    #[test]
    fn training_is_blind_to_labels() {
        // permuting the label store must not change the checkpoint
        let g1 = synth::two_cliques(5, 4);
        let flipped = crate::graph::LabelStore::new(
            (0..10).map(|u| vec![usize::from(u < 5)]).collect(),
        );
        let g2 = Graph::from_parts(&g1.edge_list(), g1.features().clone(), Some(flipped)).unwrap();
        let train: Vec<usize> = (0..10).collect();
        let cfg = tiny_cfg(DualMode::MultiSample, 2, 31);
        let (m1, _) = fit(&g1, &train, &cfg).unwrap();
        let (m2, _) = fit(&g2, &train, &cfg).unwrap();
        assert_eq!(m1.content_hash(), m2.content_hash());
    }

    #[test]
    fn frozen_bias_stays_at_zero() {
        let g = synth::two_cliques(4, 4);
        let train: Vec<usize> = (0..8).collect();
        let mut cfg = tiny_cfg(DualMode::MultiSample, 1, 5);
        cfg.bias_trainable = false;
        let (m, _) = fit(&g, &train, &cfg).unwrap();
        assert_eq!(m.bias.table.max_abs(), 0.0);
    }

    #[test]
    fn ma_training_runs_and_is_deterministic() {
        let g = synth::two_cliques(4, 6);
        let train: Vec<usize> = (0..8).collect();
        let cfg = tiny_cfg(DualMode::MultiAggregate, 2, 19);
        let (m1, log) = fit(&g, &train, &cfg).unwrap();
        let (m2, _) = fit(&g, &train, &cfg).unwrap();
        assert_eq!(m1.content_hash(), m2.content_hash());
        assert!(log.epochs.iter().all(|e| e.mean_loss > 0.0));
    }

    #[test]
    fn log_text_has_echo_then_tab_separated_epochs() {
        let log = TrainLog {
            epochs: vec![EpochStats {
                epoch: 0,
                mean_loss: 1.5,
                wallclock_s: 0.25,
            }],
            echo: vec![("train.lr".into(), "0.0001".into())],
        };
        assert_eq!(log.to_text(), "# train.lr = 0.0001\n0\t1.5\t0.25\n");
    }
}
