//! Small synthetic graphs for examples, tests, and smoke experiments.

use rand::Rng;

use crate::graph::{Graph, LabelStore};
use crate::matrix::Mat;
use crate::rng::substream;

/// Two k-cliques bridged by a single edge. Nodes 0..k form clique A,
/// k..2k form clique B; the bridge connects k-1 and k. Features are a
/// 2-dim clique indicator plus small seeded noise, labels are the clique.
pub fn two_cliques(k: usize, seed: u64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..k {
        for v in (u + 1)..k {
            edges.push((u, v));
            edges.push((u + k, v + k));
        }
    }
    edges.push((k - 1, k));
    let mut rng = substream(seed, "two-cliques-feats");
    let rows = (0..2 * k)
        .map(|u| {
            let side = if u < k { 1.0 } else { 0.0 };
            vec![
                side + 0.1 * rng.gen_range(-1.0..1.0),
                (1.0 - side) + 0.1 * rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let labels = LabelStore::new((0..2 * k).map(|u| vec![usize::from(u >= k)]).collect());
    Graph::from_parts(&edges, Mat::from_rows(rows), Some(labels)).unwrap()
}

/// Path graph 0-1-...-(n-1) with one-hot-ish features.
pub fn path(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|u| (u, u + 1)).collect();
    let rows = (0..n).map(|u| vec![u as f64, 1.0]).collect();
    Graph::from_parts(&edges, Mat::from_rows(rows), None).unwrap()
}

/// Cycle graph on n nodes.
pub fn cycle(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n).map(|u| (u, (u + 1) % n)).collect();
    let rows = (0..n).map(|u| vec![u as f64, 1.0]).collect();
    Graph::from_parts(&edges, Mat::from_rows(rows), None).unwrap()
}

/// Star with `leaves` leaves around center node 0.
pub fn star(leaves: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (1..=leaves).map(|v| (0, v)).collect();
    let rows = (0..=leaves).map(|u| vec![u as f64, 1.0]).collect();
    Graph::from_parts(&edges, Mat::from_rows(rows), None).unwrap()
}

/// Erdos-Renyi-style random graph with expected degree `avg_degree`,
/// resampled until connected enough for walking (no isolated node).
pub fn random_graph(n: usize, avg_degree: f64, feat_dim: usize, seed: u64) -> Graph {
    let p = avg_degree / (n as f64 - 1.0);
    for attempt in 0.. {
        let mut rng = substream(seed.wrapping_add(attempt), "random-graph");
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let rows = (0..n)
            .map(|_| (0..feat_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let g = Graph::from_parts(&edges, Mat::from_rows(rows), None).unwrap();
        if (0..n).all(|u| g.degree(u) >= 1) {
            return g;
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_cliques_shape() {
        let g = two_cliques(10, 1);
        assert_eq!(g.num_nodes(), 20);
        assert_eq!(g.num_edges(), 45 + 45 + 1);
        assert_eq!(g.degree(0), 9);
        assert_eq!(g.degree(9), 10); // bridge endpoint
        let labels = g.labels().unwrap();
        assert_eq!(labels.labels_of(3), &[0]);
        assert_eq!(labels.labels_of(15), &[1]);
    }

    #[test]
    fn random_graph_has_no_isolated_nodes() {
        let g = random_graph(30, 4.0, 3, 9);
        assert!((0..30).all(|u| g.degree(u) >= 1));
    }
}
