//! Generate whole-graph embeddings from a trained model, inspect
//! coverage, and embed one node on demand.
//!
//!     cargo run --example embeddings

use cade::infer::{embed_single, generate_embeddings};
use cade::model::{Activation, AggregatorKind, DualMode, ModelConfig};
use cade::sampling::{PairMode, WalkConfig};
use cade::synth;
use cade::train::{fit, TrainConfig};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() {
    let g = synth::two_cliques(8, 5);
    let train_nodes: Vec<usize> = (0..g.num_nodes()).collect();
    let cfg = TrainConfig {
        model: ModelConfig {
            mode: DualMode::MultiSample,
            candidates: 3,
            depth: 2,
            feat_dim: g.feature_dim(),
            dim: 8,
            layer_sizes: vec![4, 3],
            aggregator: AggregatorKind::Mean,
            activation: Activation::Sigmoid,
            normalize_output: true,
            seed: 9,
        },
        lr: 0.01,
        epochs: 8,
        batch_size: 40,
        negatives: 4,
        neg_power: 0.75,
        pairs_per_epoch: 200,
        walk: WalkConfig {
            walks_per_node: 10,
            walk_length: 4,
        },
        pair_mode: PairMode::StartVsRest,
        bias_trainable: true,
        checkpoint_every: 0,
        checkpoint_dir: None,
    };
    let (model, _) = fit(&g, &train_nodes, &cfg).unwrap();

    let emb = generate_embeddings(
        &g,
        &model,
        &WalkConfig {
            walks_per_node: 10,
            walk_length: 4,
        },
        PairMode::StartVsRest,
        77,
        1,
    )
    .unwrap();
    println!(
        "embedded {} nodes into {} dims; coverage min {} max {}",
        emb.num_nodes(),
        emb.dim(),
        emb.coverage.iter().min().unwrap(),
        emb.coverage.iter().max().unwrap()
    );

    let k = g.num_nodes() / 2;
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for u in 0..g.num_nodes() {
        for v in (u + 1)..g.num_nodes() {
            let d = dot(emb.row(u), emb.row(v));
            if (u < k) == (v < k) {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean similarity: same clique {:.4}, across cliques {:.4}",
        mean(&intra),
        mean(&inter)
    );

    // service-style single-node embedding: more local pairs, less variance
    for n_pairs in [1, 8, 32] {
        let z = embed_single(&g, &model, 0, n_pairs, 4, 123, false).unwrap();
        println!(
            "embed_single(node 0, {n_pairs:>2} pairs): first dims [{:.4}, {:.4}, {:.4}]",
            z[0], z[1], z[2]
        );
    }
}
