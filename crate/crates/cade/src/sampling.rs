//! Random-walk positive pairs and fixed-size sampled neighborhood trees.
//!
//! Walks use one RNG substream per start node, so the output is identical
//! whether nodes are walked sequentially or split across worker threads,
//! and the merged order is always (start node, walk index).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::rng::substream;

#[derive(Error, Debug)]
pub enum SamplingError {
    #[error("node {0} has no neighbors; cannot sample a neighborhood tree")]
    IsolatedNode(usize),
    #[error("graph has no edges to walk")]
    NoEdges,
}

/// Walk generation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 100,
            walk_length: 4,
        }
    }
}

/// How co-occurring pairs are extracted from a walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// Pair the walk's start node with every later node on the walk.
    StartVsRest,
    /// Pair every earlier position with every later position.
    AllOffsets,
}

/// Positive co-occurrence pairs. Duplicates are kept on purpose: frequent
/// co-occurrence should weigh more in the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
}

/// Uniform random walks: `walks_per_node` walks of `walk_length` steps from
/// every node with degree >= 1 (each walk stores `walk_length + 1` nodes).
pub fn random_walks(g: &Graph, cfg: &WalkConfig, seed: u64) -> Result<Vec<Vec<usize>>, GraphError> {
    if g.num_edges() == 0 {
        return Err(GraphError::NoEdges);
    }
    assert!(cfg.walks_per_node >= 1 && cfg.walk_length >= 1);
    let mut walks = Vec::new();
    for start in 0..g.num_nodes() {
        if g.degree(start) == 0 {
            continue;
        }
        let mut rng = substream(seed, &format!("walks/{start}"));
        for _ in 0..cfg.walks_per_node {
            let mut walk = Vec::with_capacity(cfg.walk_length + 1);
            walk.push(start);
            let mut here = start;
            for _ in 0..cfg.walk_length {
                let nbrs = g.neighbors(here);
                here = nbrs[rng.gen_range(0..nbrs.len())];
                walk.push(here);
            }
            walks.push(walk);
        }
    }
    Ok(walks)
}

/// Extract positive pairs from walks. In `StartVsRest` mode a walk
/// `[w0, w1, ..., wL]` yields `(w0, wt)` for every `t >= 1` with `wt != w0`.
pub fn positive_pairs(walks: &[Vec<usize>], mode: PairMode) -> PairSet {
    let mut pairs = Vec::new();
    for walk in walks {
        match mode {
            PairMode::StartVsRest => {
                let anchor = walk[0];
                for &w in &walk[1..] {
                    if w != anchor {
                        pairs.push((anchor, w));
                    }
                }
            }
            PairMode::AllOffsets => {
                for s in 0..walk.len() {
                    for t in (s + 1)..walk.len() {
                        if walk[s] != walk[t] {
                            pairs.push((walk[s], walk[t]));
                        }
                    }
                }
            }
        }
    }
    PairSet { pairs }
}

/// Debug dump: one walk per line, space-separated node ids.
pub fn write_walks(path: &Path, walks: &[Vec<usize>]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for walk in walks {
        let line: Vec<String> = walk.iter().map(|n| n.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()
}

/// One node of a sampled neighborhood tree: its graph id and the index of
/// its parent in the previous layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub node: usize,
    pub parent: usize,
}

/// The per-root tree of sampled neighborhoods: layer 0 is the root, layer l
/// holds `sizes[l-1]` children (sampled with replacement) for every node of
/// layer l-1.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodTree {
    pub root: usize,
    pub layers: Vec<Vec<TreeNode>>,
    pub sizes: Vec<usize>,
}

impl NeighborhoodTree {
    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    /// Children of node `i` at `layer` live in layer+1 at a fixed stride.
    pub fn children_range(&self, layer: usize, i: usize) -> std::ops::Range<usize> {
        let s = self.sizes[layer];
        i * s..(i + 1) * s
    }

    /// Degenerate fallback for isolated nodes: the root is its own sampled
    /// neighborhood at every layer.
    pub fn self_tree(root: usize, sizes: &[usize]) -> NeighborhoodTree {
        let mut layers = vec![vec![TreeNode { node: root, parent: 0 }]];
        for (l, &s) in sizes.iter().enumerate() {
            let prev = layers[l].len();
            let mut layer = Vec::with_capacity(prev * s);
            for p in 0..prev {
                for _ in 0..s {
                    layer.push(TreeNode { node: root, parent: p });
                }
            }
            layers.push(layer);
        }
        NeighborhoodTree {
            root,
            layers,
            sizes: sizes.to_vec(),
        }
    }
}

/// Sample a neighborhood tree rooted at `u` with per-layer sizes, uniformly
/// with replacement from each node's neighbor list.
pub fn sample_tree(
    g: &Graph,
    u: usize,
    sizes: &[usize],
    rng: &mut impl Rng,
) -> Result<NeighborhoodTree, SamplingError> {
    assert!(!sizes.is_empty() && sizes.iter().all(|&s| s >= 1));
    let mut layers = vec![vec![TreeNode { node: u, parent: 0 }]];
    for (l, &s) in sizes.iter().enumerate() {
        let mut layer = Vec::with_capacity(layers[l].len() * s);
        for (pi, parent) in layers[l].iter().enumerate() {
            let nbrs = g.neighbors(parent.node);
            if nbrs.is_empty() {
                return Err(SamplingError::IsolatedNode(parent.node));
            }
            for _ in 0..s {
                layer.push(TreeNode {
                    node: nbrs[rng.gen_range(0..nbrs.len())],
                    parent: pi,
                });
            }
        }
        layers.push(layer);
    }
    Ok(NeighborhoodTree {
        root: u,
        layers,
        sizes: sizes.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Mat;

    fn graph(edges: &[(usize, usize)], n: usize) -> Graph {
        Graph::from_parts(edges, Mat::zeros(n, 1), None).unwrap()
    }

    #[test]
    fn two_node_walks_are_forced_to_alternate() {
        let g = graph(&[(0, 1)], 2);
        let cfg = WalkConfig {
            walks_per_node: 3,
            walk_length: 4,
        };
        let walks = random_walks(&g, &cfg, 7).unwrap();
        assert_eq!(walks.len(), 6);
        for walk in walks {
            let expect = if walk[0] == 0 {
                vec![0, 1, 0, 1, 0]
            } else {
                vec![1, 0, 1, 0, 1]
            };
            assert_eq!(walk, expect);
        }
    }

    #[test]
    fn walk_count_is_nodes_times_walks_per_node() {
        let mut edges = Vec::new();
        for u in 0..10usize {
            edges.push((u, (u + 1) % 10));
        }
        let g = graph(&edges, 10);
        let cfg = WalkConfig {
            walks_per_node: 100,
            walk_length: 4,
        };
        let walks = random_walks(&g, &cfg, 3).unwrap();
        assert_eq!(walks.len(), 1000);
    }

    #[test]
    fn transition_frequencies_on_a_path_are_near_uniform() {
        let g = graph(&[(0, 1), (1, 2)], 3);
        let cfg = WalkConfig {
            walks_per_node: 10_000,
            walk_length: 1,
        };
        let walks = random_walks(&g, &cfg, 99).unwrap();
        let from_middle: Vec<&Vec<usize>> = walks.iter().filter(|w| w[0] == 1).collect();
        assert_eq!(from_middle.len(), 10_000);
        let to_zero = from_middle.iter().filter(|w| w[1] == 0).count() as f64 / 10_000.0;
        assert!((to_zero - 0.5).abs() < 0.05, "p(1 -> 0) = {to_zero}");
    }

    #[test]
    fn degree_zero_nodes_do_not_start_walks() {
        let g = graph(&[(0, 1)], 3);
        let cfg = WalkConfig {
            walks_per_node: 2,
            walk_length: 2,
        };
        let walks = random_walks(&g, &cfg, 1).unwrap();
        assert_eq!(walks.len(), 4);
        assert!(walks.iter().all(|w| w[0] != 2));
    }

    #[test]
    fn start_vs_rest_pairs_skip_the_anchor_itself() {
        let walks = vec![vec![0, 1, 2, 1, 0]];
        let got = positive_pairs(&walks, PairMode::StartVsRest);
        assert_eq!(got.pairs, vec![(0, 1), (0, 2), (0, 1)]);
    }

    #[test]
    fn constant_walk_yields_no_pairs() {
        let walks = vec![vec![3, 3, 3, 3, 3]];
        assert!(positive_pairs(&walks, PairMode::StartVsRest).pairs.is_empty());
        assert!(positive_pairs(&walks, PairMode::AllOffsets).pairs.is_empty());
    }

    #[test]
    fn all_offsets_mode_pairs_every_position() {
        let walks = vec![vec![0, 1, 2]];
        let got = positive_pairs(&walks, PairMode::AllOffsets);
        assert_eq!(got.pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn disconnected_cliques_never_pair_across() {
        let mut edges = Vec::new();
        for u in 0..5usize {
            for v in (u + 1)..5 {
                edges.push((u, v));
                edges.push((u + 5, v + 5));
            }
        }
        let g = graph(&edges, 10);
        let cfg = WalkConfig {
            walks_per_node: 100,
            walk_length: 4,
        };
        let walks = random_walks(&g, &cfg, 42).unwrap();
        assert_eq!(walks.len(), 1000);
        let pairs = positive_pairs(&walks, PairMode::StartVsRest);
        // exhaustive scan: both members always on the same side
        for &(a, b) in &pairs.pairs {
            assert_eq!(a < 5, b < 5, "cross-clique pair ({a},{b})");
        }
    }

    #[test]
    fn tree_layer_sizes_multiply() {
        let mut edges = Vec::new();
        for u in 0..6usize {
            for v in (u + 1)..6 {
                edges.push((u, v));
            }
        }
        let g = graph(&edges, 6);
        let mut rng = substream(5, "t");
        let tree = sample_tree(&g, 0, &[20, 10], &mut rng).unwrap();
        assert_eq!(tree.layers[0].len(), 1);
        assert_eq!(tree.layers[1].len(), 20);
        assert_eq!(tree.layers[2].len(), 200);
    }

    #[test]
    fn single_neighbor_is_sampled_with_replacement() {
        let g = graph(&[(0, 1)], 2);
        let mut rng = substream(1, "t");
        let tree = sample_tree(&g, 0, &[5], &mut rng).unwrap();
        assert_eq!(tree.layers[1].len(), 5);
        assert!(tree.layers[1].iter().all(|t| t.node == 1));
    }

    #[test]
    fn neighbor_frequencies_are_uniform() {
        let g = graph(&[(0, 1), (0, 2), (0, 3)], 4);
        let mut rng = substream(17, "t");
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let tree = sample_tree(&g, 0, &[3], &mut rng).unwrap();
            for t in &tree.layers[1] {
                counts[t.node] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        assert_eq!(total, 30_000);
        for &c in &counts[1..] {
            let freq = c as f64 / total as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn every_child_is_a_graph_neighbor_of_its_parent() {
        let mut edges = Vec::new();
        for u in 0..8usize {
            edges.push((u, (u + 1) % 8));
            edges.push((u, (u + 2) % 8));
        }
        let g = graph(&edges, 8);
        let mut rng = substream(23, "t");
        for root in 0..8 {
            let tree = sample_tree(&g, root, &[4, 3], &mut rng).unwrap();
            for l in 1..tree.layers.len() {
                for t in &tree.layers[l] {
                    let parent = tree.layers[l - 1][t.parent].node;
                    assert!(
                        g.neighbors(parent).contains(&t.node),
                        "{} not adjacent to parent {parent}",
                        t.node
                    );
                }
            }
        }
    }

    #[test]
    fn isolated_root_errors_with_node_id() {
        let g = graph(&[(0, 1)], 3);
        let mut rng = substream(2, "t");
        match sample_tree(&g, 2, &[3], &mut rng) {
            Err(SamplingError::IsolatedNode(2)) => {}
            other => panic!("expected IsolatedNode(2), got {other:?}"),
        }
    }

    #[test]
    fn identical_seeds_reproduce_walks_and_trees() {
        let g = graph(&[(0, 1), (1, 2), (2, 0), (2, 3)], 4);
        let cfg = WalkConfig::default();
        let w1 = random_walks(&g, &cfg, 5).unwrap();
        let w2 = random_walks(&g, &cfg, 5).unwrap();
        assert_eq!(w1, w2);
        let t1 = sample_tree(&g, 0, &[3, 2], &mut substream(5, "t")).unwrap();
        let t2 = sample_tree(&g, 0, &[3, 2], &mut substream(5, "t")).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn self_tree_repeats_the_root() {
        let tree = NeighborhoodTree::self_tree(4, &[2, 2]);
        assert_eq!(tree.layers[1].len(), 2);
        assert_eq!(tree.layers[2].len(), 4);
        assert!(tree
            .layers
            .iter()
            .flatten()
            .all(|t| t.node == 4));
    }

    #[test]
    fn walk_dump_is_line_per_walk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walks.txt");
        write_walks(&path, &[vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "0 1 2\n3 4 5\n");
    }
}
