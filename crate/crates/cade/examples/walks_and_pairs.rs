//! Random walks, positive co-occurrence pairs, and sampled neighborhood
//! trees: the raw material of the unsupervised objective.
//!
//!     cargo run --example walks_and_pairs

use cade::rng::substream;
use cade::sampling::{positive_pairs, random_walks, sample_tree, PairMode, WalkConfig};
use cade::synth;

fn main() {
    let g = synth::two_cliques(5, 3);
    let cfg = WalkConfig {
        walks_per_node: 3,
        walk_length: 4,
    };
    let walks = random_walks(&g, &cfg, 11).unwrap();
    println!("{} walks of {} steps each; first five:", walks.len(), cfg.walk_length);
    for walk in walks.iter().take(5) {
        println!("  {walk:?}");
    }

    let pairs = positive_pairs(&walks, PairMode::StartVsRest);
    println!("\n{} positive pairs (start node vs later nodes)", pairs.pairs.len());
    let cross = pairs
        .pairs
        .iter()
        .filter(|(a, b)| (*a < 5) != (*b < 5))
        .count();
    println!("pairs crossing the clique bridge: {cross} of {}", pairs.pairs.len());

    // trees resample a fixed-size neighborhood with replacement per layer
    let mut rng = substream(11, "trees");
    let tree = sample_tree(&g, 0, &[3, 2], &mut rng).unwrap();
    println!("\nneighborhood tree rooted at 0 (sizes [3, 2]):");
    for (l, layer) in tree.layers.iter().enumerate() {
        let nodes: Vec<usize> = layer.iter().map(|t| t.node).collect();
        println!("  layer {l}: {nodes:?}");
    }
}
