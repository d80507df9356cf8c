//! The dual encoder: per-node candidate embeddings fused by bi-attention
//! over a positive pair.
//!
//! Each pair member gets K candidate embeddings, either from K independent
//! neighborhood samples through one shared encoder (multi-sample) or from
//! one sample through K encoder parameter sets (multi-aggregate). A K x K
//! similarity matrix between the two candidate sets is normalized by a
//! softmax over all K^2 entries jointly; its row sums attend one side and
//! its column sums the other, so each node is represented by the weighted
//! candidate mix that best matches its partner.

use rand::Rng;

use crate::encoder::{sagb_forward, BiasLease, ModelLease};
use crate::matrix::Mat;
use crate::model::{DualMode, GlobalBias, Model, ModelConfig};
use crate::sampling::{sample_tree, NeighborhoodTree, SamplingError};
use crate::tape::{Tape, Value};

/// Leased bias table plus the node-to-row mapping.
pub type BiasRef<'a> = Option<(&'a BiasLease, &'a GlobalBias)>;

/// Raw candidate-pair similarity.
#[derive(Clone, Copy, Debug)]
pub enum Similarity {
    /// Dot product of the two candidates (multi-sample variant).
    Dot,
    /// `a . [h_v || h_vp]` with a trainable `[2 dim, 1]` weight vector
    /// (multi-aggregate variant).
    WeightVector(Value),
}

/// Numeric snapshot of one bi-attention fusion.
#[derive(Clone, Debug)]
pub struct BiAttention {
    /// Normalized K x K attention matrix; all entries sum to 1.
    pub scores: Mat,
    /// Row sums: attention over the anchor's candidates (sums to 1).
    pub anchor_attn: Vec<f64>,
    /// Column sums: attention over the partner's candidates (sums to 1).
    pub partner_attn: Vec<f64>,
}

/// Dual encoding of one pair: fused embeddings plus the attention that
/// produced them.
pub struct DualOutcome {
    pub z_anchor: Value,
    pub z_partner: Value,
    pub attention: BiAttention,
}

/// Sample the candidate trees for one node: K independent trees in
/// multi-sample mode, a single tree in multi-aggregate mode.
pub fn sample_candidate_trees(
    g: &crate::graph::Graph,
    node: usize,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<Vec<NeighborhoodTree>, SamplingError> {
    let count = match cfg.mode {
        DualMode::MultiSample => cfg.candidates,
        DualMode::MultiAggregate => 1,
    };
    (0..count)
        .map(|_| sample_tree(g, node, &cfg.layer_sizes, rng))
        .collect()
}

/// Build the K x dim candidate matrix for one node.
///
/// Candidate k runs tree `k % trees.len()` through encoder set
/// `k % encoders.len()`, which covers both variants: K trees with one
/// encoder (multi-sample) and one tree with K encoders (multi-aggregate).
pub fn candidates(
    tape: &mut Tape,
    cfg: &ModelConfig,
    lease: &ModelLease,
    bias: BiasRef<'_>,
    trees: &[NeighborhoodTree],
    features: &Mat,
) -> Value {
    assert!(
        trees.len() == cfg.candidates || trees.len() == 1,
        "need 1 or {} trees, got {}",
        cfg.candidates,
        trees.len()
    );
    let rows: Vec<Value> = (0..cfg.candidates)
        .map(|k| {
            let tree = &trees[k % trees.len()];
            let enc = &lease.encoders[k % lease.encoders.len()];
            sagb_forward(tape, cfg, enc, bias, tree, features)
        })
        .collect();
    tape.stack_rows(&rows)
}

/// Bi-attention over two K x dim candidate matrices. Returns the
/// flattened-softmax similarity matrix, the anchor attention as a K x 1
/// column, and the partner attention as a 1 x K row.
pub fn biattention(
    tape: &mut Tape,
    cand_anchor: Value,
    cand_partner: Value,
    similarity: Similarity,
) -> (Value, Value, Value) {
    let (k, d) = tape.data(cand_anchor).shape();
    assert_eq!(
        tape.data(cand_partner).shape(),
        (k, d),
        "candidate shape mismatch: {:?} vs {:?}",
        (k, d),
        tape.data(cand_partner).shape()
    );
    let raw = match similarity {
        Similarity::Dot => {
            let partner_t = tape.transpose(cand_partner);
            tape.matmul(cand_anchor, partner_t)
        }
        Similarity::WeightVector(weights) => {
            assert_eq!(
                tape.data(weights).shape(),
                (2 * d, 1),
                "similarity weight vector must be [2*dim, 1], got {:?}",
                tape.data(weights).shape()
            );
            // a . [h_vi || h_vpj] splits into (H_v a_left) 1^T + 1 (H_vp a_right)^T
            let left = tape.row_slice(weights, 0, d);
            let right = tape.row_slice(weights, d, d);
            let anchor_part = tape.matmul(cand_anchor, left); // [K, 1]
            let partner_part = tape.matmul(cand_partner, right); // [K, 1]
            let ones_row = tape.leaf(Mat::filled(1, k, 1.0));
            let anchor_grid = tape.matmul(anchor_part, ones_row); // [K, K]
            let partner_t = tape.transpose(partner_part); // [1, K]
            let ones_col = tape.leaf(Mat::filled(k, 1, 1.0));
            let partner_grid = tape.matmul(ones_col, partner_t); // [K, K]
            tape.add(anchor_grid, partner_grid)
        }
    };
    let scores = tape.softmax_flat(raw);
    let ones_col = tape.leaf(Mat::filled(k, 1, 1.0));
    let ones_row = tape.leaf(Mat::filled(1, k, 1.0));
    let anchor_attn = tape.matmul(scores, ones_col); // row sums, [K, 1]
    let partner_attn = tape.matmul(ones_row, scores); // column sums, [1, K]
    (scores, anchor_attn, partner_attn)
}

/// Attention-weighted candidate sum: `attn` is [K, 1] or [1, K], `cands`
/// is [K, dim]; the result is [1, dim].
pub fn fuse(tape: &mut Tape, attn: Value, cands: Value) -> Value {
    let attn_row = if tape.data(attn).cols() == 1 {
        tape.transpose(attn)
    } else {
        attn
    };
    tape.matmul(attn_row, cands)
}

fn snapshot(tape: &Tape, scores: Value, anchor: Value, partner: Value) -> BiAttention {
    BiAttention {
        scores: tape.data(scores).clone(),
        anchor_attn: tape.data(anchor).as_slice().to_vec(),
        partner_attn: tape.data(partner).as_slice().to_vec(),
    }
}

/// Dual-encode a pair whose candidate trees are already sampled (the
/// deterministic core used by training, inference, and the oracles).
/// `similarity` chooses the variant; pass the leased attention vector (or
/// a stopped copy) for multi-aggregate.
#[allow(clippy::too_many_arguments)]
pub fn dual_encode_with_trees(
    tape: &mut Tape,
    cfg: &ModelConfig,
    lease: &ModelLease,
    bias: BiasRef<'_>,
    trees_anchor: &[NeighborhoodTree],
    trees_partner: &[NeighborhoodTree],
    features: &Mat,
    similarity: Similarity,
) -> DualOutcome {
    let cand_a = candidates(tape, cfg, lease, bias, trees_anchor, features);
    let cand_p = candidates(tape, cfg, lease, bias, trees_partner, features);
    dual_encode_candidates(tape, cand_a, cand_p, similarity)
}

/// Bi-attention fusion of two prebuilt candidate matrices.
pub fn dual_encode_candidates(
    tape: &mut Tape,
    cand_anchor: Value,
    cand_partner: Value,
    similarity: Similarity,
) -> DualOutcome {
    let (scores, anchor_attn, partner_attn) = biattention(tape, cand_anchor, cand_partner, similarity);
    let z_anchor = fuse(tape, anchor_attn, cand_anchor);
    let z_partner = fuse(tape, partner_attn, cand_partner);
    DualOutcome {
        z_anchor,
        z_partner,
        attention: snapshot(tape, scores, anchor_attn, partner_attn),
    }
}

/// Variant-appropriate similarity for a model lease.
pub fn model_similarity(cfg: &ModelConfig, lease: &ModelLease) -> Similarity {
    match cfg.mode {
        DualMode::MultiSample => Similarity::Dot,
        DualMode::MultiAggregate => {
            Similarity::WeightVector(lease.attention.expect("multi-aggregate model without attention"))
        }
    }
}

/// Sample trees for both members and dual-encode them.
pub fn dual_encode(
    tape: &mut Tape,
    model: &Model,
    lease: &ModelLease,
    g: &crate::graph::Graph,
    anchor: usize,
    partner: usize,
    rng: &mut impl Rng,
) -> Result<DualOutcome, SamplingError> {
    let trees_a = sample_candidate_trees(g, anchor, &model.cfg, rng)?;
    let trees_p = sample_candidate_trees(g, partner, &model.cfg, rng)?;
    let bias = lease.bias.as_ref().map(|b| (b, &model.bias));
    let similarity = model_similarity(&model.cfg, lease);
    Ok(dual_encode_with_trees(
        tape,
        &model.cfg,
        lease,
        bias,
        &trees_a,
        &trees_p,
        g.features(),
        similarity,
    ))
}
