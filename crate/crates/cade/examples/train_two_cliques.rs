//! Train the multi-sample dual encoder on two bridged cliques and watch
//! the loss fall.
//!
//!     cargo run --example train_two_cliques

use cade::model::{Activation, AggregatorKind, DualMode, ModelConfig};
use cade::sampling::{PairMode, WalkConfig};
use cade::synth;
use cade::train::{fit, TrainConfig};

fn main() {
    let g = synth::two_cliques(10, 1);
    let train_nodes: Vec<usize> = (0..g.num_nodes()).collect();
    let cfg = TrainConfig {
        model: ModelConfig {
            mode: DualMode::MultiSample,
            candidates: 5,
            depth: 2,
            feat_dim: g.feature_dim(),
            dim: 16,
            layer_sizes: vec![5, 5],
            aggregator: AggregatorKind::Mean,
            activation: Activation::Sigmoid,
            normalize_output: true,
            seed: 1,
        },
        lr: 0.01,
        epochs: 15,
        batch_size: 50,
        negatives: 5,
        neg_power: 0.75,
        pairs_per_epoch: 300,
        walk: WalkConfig {
            walks_per_node: 20,
            walk_length: 4,
        },
        pair_mode: PairMode::StartVsRest,
        bias_trainable: true,
        checkpoint_every: 0,
        checkpoint_dir: None,
    };

    let (model, log) = fit(&g, &train_nodes, &cfg).unwrap();
    println!("epoch\tmean loss");
    for e in &log.epochs {
        println!("{}\t{:.4}", e.epoch, e.mean_loss);
    }
    println!("\ncheckpoint hash: {}", model.content_hash());
    println!(
        "global-bias table: {} rows x {} dims, largest entry {:.4}",
        model.bias.table.rows(),
        model.bias.table.cols(),
        model.bias.table.max_abs()
    );
}
