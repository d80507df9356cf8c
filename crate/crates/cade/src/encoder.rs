//! The base encoder: bottom-up aggregation over a sampled neighborhood
//! tree with a trainable global bias added at every hidden layer.
//!
//! Layer 0 representations are raw feature rows. At layer l each tree
//! position concatenates its own previous-layer representation with the
//! aggregate of its children's, applies the layer weight and nonlinearity,
//! and, on hidden layers only, adds the global-bias row of its graph
//! node. The last layer never receives a bias so that embeddings of
//! training and unseen nodes stay on the same distribution.

use std::collections::HashMap;

use crate::matrix::Mat;
use crate::model::{Activation, AggregatorKind, EncoderWeights, GlobalBias, Model, ModelConfig};
use crate::sampling::NeighborhoodTree;
use crate::tape::{Tape, Value};

/// Tape handles for one encoder parameter set.
#[derive(Clone, Debug)]
pub struct EncoderLease {
    pub layers: Vec<LayerLease>,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerLease {
    pub weight: Value,
    pub pool: Option<(Value, Value)>,
}

/// Tape handle for the global-bias table.
#[derive(Clone, Copy, Debug)]
pub struct BiasLease {
    pub table: Value,
}

/// Insert one encoder's parameters into the tape as leaves.
pub fn lease_encoder(tape: &mut Tape, weights: &EncoderWeights) -> EncoderLease {
    let layers = weights
        .layers
        .iter()
        .map(|l| LayerLease {
            weight: tape.leaf(l.weight.clone()),
            pool: l
                .pool
                .as_ref()
                .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone()))),
        })
        .collect();
    EncoderLease { layers }
}

pub fn lease_bias(tape: &mut Tape, bias: &GlobalBias) -> Option<BiasLease> {
    if bias.table.rows() == 0 {
        return None;
    }
    Some(BiasLease {
        table: tape.leaf(bias.table.clone()),
    })
}

/// All of a model's parameters leased into one tape.
pub struct ModelLease {
    pub encoders: Vec<EncoderLease>,
    pub bias: Option<BiasLease>,
    pub attention: Option<Value>,
}

pub fn lease_model(tape: &mut Tape, model: &Model) -> ModelLease {
    ModelLease {
        encoders: model
            .encoders
            .iter()
            .map(|e| lease_encoder(tape, e))
            .collect(),
        bias: lease_bias(tape, &model.bias),
        attention: model.attention.as_ref().map(|a| tape.leaf(a.clone())),
    }
}

impl ModelLease {
    /// Gradients read back out of the tape in `model.params()` order.
    pub fn grads(&self, tape: &Tape, model: &Model) -> Vec<Mat> {
        let mut out = Vec::new();
        for lease in &self.encoders {
            for layer in &lease.layers {
                out.push(tape.grad(layer.weight).clone());
                if let Some((pw, pb)) = layer.pool {
                    out.push(tape.grad(pw).clone());
                    out.push(tape.grad(pb).clone());
                }
            }
        }
        match &self.bias {
            Some(b) => out.push(tape.grad(b.table).clone()),
            None => out.push(Mat::zeros(
                model.bias.table.rows(),
                model.bias.table.cols(),
            )),
        }
        if let Some(a) = self.attention {
            out.push(tape.grad(a).clone());
        }
        out
    }
}

pub fn apply_activation(tape: &mut Tape, act: Activation, v: Value) -> Value {
    match act {
        Activation::Relu => tape.relu(v),
        Activation::Sigmoid => tape.sigmoid(v),
        Activation::Identity => v,
    }
}

/// Combine child representations into one vector of the same width.
pub fn aggregate(
    tape: &mut Tape,
    kind: AggregatorKind,
    pool: Option<(Value, Value)>,
    activation: Activation,
    children: &[Value],
) -> Value {
    assert!(!children.is_empty(), "aggregate: zero children");
    let stacked = tape.stack_rows(children);
    match kind {
        AggregatorKind::Mean => tape.reduce_mean_rows(stacked),
        AggregatorKind::MaxPool => {
            let (pw, pb) = pool.expect("maxpool aggregator without pool parameters");
            let lin = tape.matmul(stacked, pw);
            let shifted = tape.add(lin, pb);
            let act = apply_activation(tape, activation, shifted);
            tape.reduce_max_rows(act)
        }
    }
}

/// Encode the tree root with one encoder parameter set, recording on the
/// tape. `bias` carries the leased table and the node-to-row mapping; pass
/// `None` to run bias-free.
pub fn sagb_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    encoder: &EncoderLease,
    bias: Option<(&BiasLease, &GlobalBias)>,
    tree: &NeighborhoodTree,
    features: &Mat,
) -> Value {
    assert_eq!(
        tree.depth(),
        cfg.depth,
        "tree depth {} does not match model depth {}",
        tree.depth(),
        cfg.depth
    );
    assert_eq!(
        features.cols(),
        cfg.feat_dim,
        "feature dim {} does not match model feat_dim {}",
        features.cols(),
        cfg.feat_dim
    );

    // level 0: raw feature rows, one leaf per distinct graph node
    let mut feature_leaf: HashMap<usize, Value> = HashMap::new();
    let mut level: Vec<Vec<Value>> = tree
        .layers
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|t| {
                    *feature_leaf
                        .entry(t.node)
                        .or_insert_with(|| tape.leaf(Mat::row_vec(features.row(t.node).to_vec())))
                })
                .collect()
        })
        .collect();

    for l in 1..=cfg.depth {
        let layer_lease = &encoder.layers[l - 1];
        let mut next: Vec<Vec<Value>> = Vec::with_capacity(cfg.depth - l + 1);
        for t in 0..=(cfg.depth - l) {
            let mut reps = Vec::with_capacity(tree.layers[t].len());
            for (i, tn) in tree.layers[t].iter().enumerate() {
                let children: Vec<Value> = tree
                    .children_range(t, i)
                    .map(|j| level[t + 1][j])
                    .collect();
                let agg = aggregate(
                    tape,
                    cfg.aggregator,
                    layer_lease.pool,
                    cfg.activation,
                    &children,
                );
                let cat = tape.concat_cols(level[t][i], agg);
                let lin = tape.matmul(cat, layer_lease.weight);
                let mut rep = apply_activation(tape, cfg.activation, lin);
                if l < cfg.depth {
                    if let Some((lease, table)) = bias {
                        if let Some(row) = table.row_of(tn.node) {
                            let brow = tape.row_slice(lease.table, row, 1);
                            rep = tape.add(rep, brow);
                        }
                    }
                }
                reps.push(rep);
            }
            next.push(reps);
        }
        level = next;
    }

    let out = level[0][0];
    if cfg.normalize_output {
        tape.l2_normalize_rows(out)
    } else {
        out
    }
}
