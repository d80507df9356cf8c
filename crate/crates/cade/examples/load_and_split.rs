//! Load a graph from the text formats and build the two kinds of
//! evaluation splits.
//!
//!     cargo run --example load_and_split

use cade::graph::{load_graph, split_edges_for_lp, split_unseen_nodes};
use cade::synth;

fn main() {
    // write a toy dataset in the on-disk formats, then load it back
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    let features = dir.path().join("features.txt");
    let g = synth::two_cliques(6, 7);
    g.write(&edges, &features).unwrap();

    let g = load_graph(&edges, &features, None).unwrap();
    println!(
        "loaded {} nodes, {} edges, {} feature dims",
        g.num_nodes(),
        g.num_edges(),
        g.feature_dim()
    );
    println!(
        "degrees: min {}, max {}",
        (0..g.num_nodes()).map(|u| g.degree(u)).min().unwrap(),
        (0..g.num_nodes()).map(|u| g.degree(u)).max().unwrap()
    );

    // hold out 25% of the nodes as unseen
    let split = split_unseen_nodes(&g, 0.25, 42).unwrap();
    println!(
        "node split: {} train / {} unseen {:?}",
        split.train_nodes.len(),
        split.unseen_nodes.len(),
        split.unseen_nodes
    );
    let view = g.training_view(&split);
    println!(
        "training view keeps {} of {} edges (cross edges removed)",
        view.num_edges(),
        g.num_edges()
    );

    // hide 20% of the edges for link prediction
    let es = split_edges_for_lp(&g, 0.2, 42, None).unwrap();
    println!(
        "edge split: {} hidden test edges + {} test non-edges; {} training edges",
        es.test_pos.len(),
        es.test_neg.len(),
        es.train_pos.len()
    );
    let min_degree = (0..g.num_nodes())
        .map(|u| es.train_graph.degree(u))
        .min()
        .unwrap();
    println!("no dangling nodes after hiding: min degree {min_degree}");
}
