//! Straight-line oracle reimplementations used by integration tests.
//!
//! Everything here recomputes the encoder and dual-encoding pipeline with
//! plain nested loops over `Vec<f64>` (no tape, no Value handles) so the
//! production path can be checked against an independent route.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use cade::graph::Graph;
use cade::matrix::Mat;
use cade::model::{Activation, AggregatorKind, EncoderWeights, GlobalBias, Model, ModelConfig};
use cade::sampling::NeighborhoodTree;

pub fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Identity => x,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn aggregate_plain(
    cfg: &ModelConfig,
    layer: &cade::model::LayerWeights,
    children: &[&Vec<f64>],
) -> Vec<f64> {
    let din = children[0].len();
    match cfg.aggregator {
        AggregatorKind::Mean => {
            let mut out = vec![0.0; din];
            for child in children {
                for (o, &x) in out.iter_mut().zip(child.iter()) {
                    *o += x;
                }
            }
            for o in &mut out {
                *o /= children.len() as f64;
            }
            out
        }
        AggregatorKind::MaxPool => {
            let (pw, pb) = layer.pool.as_ref().expect("maxpool without pool weights");
            let mut out = vec![f64::NEG_INFINITY; din];
            for child in children {
                for c in 0..din {
                    let mut s = pb.get(0, c);
                    for (k, &x) in child.iter().enumerate() {
                        s += x * pw.get(k, c);
                    }
                    let a = act(cfg.activation, s);
                    if a > out[c] {
                        out[c] = a;
                    }
                }
            }
            out
        }
    }
}

/// Independent bottom-up forward over a neighborhood tree: level 0 is the
/// raw feature rows; at level l each position concatenates itself with the
/// aggregate of its children, applies the layer weight and activation, and
/// adds its global-bias row on hidden levels only.
pub fn plain_sagb(
    cfg: &ModelConfig,
    enc: &EncoderWeights,
    bias: Option<&GlobalBias>,
    tree: &NeighborhoodTree,
    features: &Mat,
) -> Vec<f64> {
    let depth = cfg.depth;
    assert_eq!(tree.depth(), depth);
    let mut level: Vec<Vec<Vec<f64>>> = tree
        .layers
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|t| features.row(t.node).to_vec())
                .collect()
        })
        .collect();
    for l in 1..=depth {
        let layer_w = &enc.layers[l - 1];
        let mut next: Vec<Vec<Vec<f64>>> = Vec::new();
        for t in 0..=(depth - l) {
            let mut reps = Vec::new();
            for (i, tn) in tree.layers[t].iter().enumerate() {
                let children: Vec<&Vec<f64>> = tree
                    .children_range(t, i)
                    .map(|j| &level[t + 1][j])
                    .collect();
                let agg = aggregate_plain(cfg, layer_w, &children);
                let mut cat = level[t][i].clone();
                cat.extend_from_slice(&agg);
                let mut rep = vec![0.0; cfg.dim];
                for (c, r) in rep.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (k, &x) in cat.iter().enumerate() {
                        s += x * layer_w.weight.get(k, c);
                    }
                    *r = act(cfg.activation, s);
                }
                if l < depth {
                    if let Some(b) = bias {
                        if let Some(row) = b.row_of(tn.node) {
                            for (c, r) in rep.iter_mut().enumerate() {
                                *r += b.table.get(row, c);
                            }
                        }
                    }
                }
                reps.push(rep);
            }
            next.push(reps);
        }
        level = next;
    }
    let mut out = level[0][0].clone();
    if cfg.normalize_output {
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut out {
                *x /= norm;
            }
        }
    }
    out
}

/// K candidate rows: candidate k runs tree `k % trees` through encoder
/// set `k % encoders`.
pub fn plain_candidates(
    model: &Model,
    trees: &[NeighborhoodTree],
    features: &Mat,
    with_bias: bool,
) -> Vec<Vec<f64>> {
    (0..model.cfg.candidates)
        .map(|k| {
            plain_sagb(
                &model.cfg,
                &model.encoders[k % model.encoders.len()],
                if with_bias { Some(&model.bias) } else { None },
                &trees[k % trees.len()],
                features,
            )
        })
        .collect()
}

pub enum PlainSimilarity<'a> {
    Dot,
    WeightVector(&'a [f64]),
}

/// Flattened-softmax bi-attention over two candidate sets.
pub fn plain_biattention(
    cand_a: &[Vec<f64>],
    cand_p: &[Vec<f64>],
    sim: &PlainSimilarity<'_>,
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let k = cand_a.len();
    let d = cand_a[0].len();
    let mut raw = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            raw[i][j] = match sim {
                PlainSimilarity::Dot => dot(&cand_a[i], &cand_p[j]),
                PlainSimilarity::WeightVector(a) => {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += a[c] * cand_a[i][c];
                        s += a[d + c] * cand_p[j][c];
                    }
                    s
                }
            };
        }
    }
    let max = raw
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut scores = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            scores[i][j] = (raw[i][j] - max).exp();
            total += scores[i][j];
        }
    }
    for row in &mut scores {
        for s in row {
            *s /= total;
        }
    }
    let anchor: Vec<f64> = scores.iter().map(|row| row.iter().sum()).collect();
    let partner: Vec<f64> = (0..k).map(|j| scores.iter().map(|row| row[j]).sum()).collect();
    (scores, anchor, partner)
}

pub fn plain_fuse(attn: &[f64], cands: &[Vec<f64>]) -> Vec<f64> {
    let d = cands[0].len();
    let mut out = vec![0.0; d];
    for (a, cand) in attn.iter().zip(cands) {
        for (o, &x) in out.iter_mut().zip(cand) {
            *o += a * x;
        }
    }
    out
}

/// Full dual encode: candidates, bi-attention, weighted sums.
pub fn plain_dual_encode(
    model: &Model,
    trees_a: &[NeighborhoodTree],
    trees_p: &[NeighborhoodTree],
    features: &Mat,
    sim: &PlainSimilarity<'_>,
) -> (Vec<f64>, Vec<f64>) {
    let cand_a = plain_candidates(model, trees_a, features, true);
    let cand_p = plain_candidates(model, trees_p, features, true);
    let (_, anchor, partner) = plain_biattention(&cand_a, &cand_p, sim);
    (plain_fuse(&anchor, &cand_a), plain_fuse(&partner, &cand_p))
}

/// Pair loss on plain vectors.
pub fn plain_loss_ms(z_a: &[f64], z_p: &[f64], z_negs: &[Vec<f64>]) -> f64 {
    let mut loss = -sigmoid(dot(z_a, z_p)).ln();
    for z_n in z_negs {
        loss -= sigmoid(-dot(z_a, z_n)).ln();
    }
    loss
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Clique separation statistic: mean dot product within cliques minus the
/// mean across them, for a two-clique graph of size 2k.
pub fn clique_separation(emb: &cade::infer::EmbeddingMatrix, k: usize) -> (f64, f64) {
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    let n = 2 * k;
    for u in 0..n {
        for v in (u + 1)..n {
            let d = dot(emb.row(u), emb.row(v));
            if (u < k) == (v < k) {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&intra), mean(&inter))
}

pub fn two_clique_graph(k: usize, seed: u64) -> Graph {
    cade::synth::two_cliques(k, seed)
}
