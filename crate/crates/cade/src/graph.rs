//! Attributed graph store, file loaders, and the node/edge splits used by
//! the inductive evaluation protocols.
//!
//! Graphs are undirected, self-loop free, and immutable after load.
//! Directed edge files are symmetrized rather than rejected. Labels are
//! carried for evaluation only; [`Graph::training_view`] strips them so the
//! unsupervised training path cannot see them.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::matrix::{Mat, MatIoError, MAT_MAGIC};
use crate::rng::substream;

#[derive(Error, Debug)]
pub enum GraphError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: cannot parse edge line {text:?}")]
    BadEdgeLine {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{path}:{line}: cannot parse {what} {text:?}")]
    BadLine {
        path: String,
        line: usize,
        what: &'static str,
        text: String,
    },
    #[error("node id {id} out of range (graph has {num_nodes} nodes)")]
    NodeOutOfRange { id: usize, num_nodes: usize },
    #[error("feature matrix has {rows} rows but the graph has {num_nodes} nodes")]
    FeatureRowMismatch { rows: usize, num_nodes: usize },
    #[error("feature file {path} has ragged rows ({a} vs {b} columns)")]
    RaggedFeatures { path: String, a: usize, b: usize },
    #[error(transparent)]
    MatIo(#[from] MatIoError),
    #[error("unseen ratio {ratio} leaves an empty train or unseen side for {num_nodes} nodes")]
    DegenerateSplit { ratio: f64, num_nodes: usize },
    #[error(
        "cannot hide {requested} edges without creating a dangling node (only {achieved} hideable)"
    )]
    InfeasibleHide { requested: usize, achieved: usize },
    #[error("graph has too few non-edges to sample {needed} negatives")]
    TooFewNonEdges { needed: usize },
    #[error("graph has no edges")]
    NoEdges,
}

/// Per-node label sets. A node with more than one label makes the store
/// multi-label (PPI-style); otherwise labels are single-class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelStore {
    sets: Vec<Vec<usize>>,
    num_classes: usize,
}

impl LabelStore {
    pub fn new(mut sets: Vec<Vec<usize>>) -> Self {
        let mut num_classes = 0;
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
            for &l in s.iter() {
                num_classes = num_classes.max(l + 1);
            }
        }
        LabelStore { sets, num_classes }
    }

    pub fn labels_of(&self, node: usize) -> &[usize] {
        &self.sets[node]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_nodes(&self) -> usize {
        self.sets.len()
    }

    pub fn is_multi_label(&self) -> bool {
        self.sets.iter().any(|s| s.len() > 1)
    }
}

/// Undirected attributed graph: sorted adjacency, dense features, optional
/// labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    features: Mat,
    labels: Option<LabelStore>,
}

impl Graph {
    /// Build a validated graph from raw (possibly directed / duplicated)
    /// edges. Self-loops are dropped, edges are symmetrized and deduplicated.
    pub fn from_parts(
        edges: &[(usize, usize)],
        features: Mat,
        labels: Option<LabelStore>,
    ) -> Result<Graph, GraphError> {
        let num_nodes = features.rows();
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(GraphError::NodeOutOfRange { id, num_nodes });
                }
            }
            if u == v {
                continue;
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        if let Some(ls) = &labels {
            if ls.num_nodes() != num_nodes {
                return Err(GraphError::FeatureRowMismatch {
                    rows: ls.num_nodes(),
                    num_nodes,
                });
            }
        }
        Ok(Graph {
            adjacency,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&LabelStore> {
        self.labels.as_ref()
    }

    /// Edges as (u, v) with u < v, in sorted order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(self.num_edges());
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            for &v in nbrs {
                if u < v {
                    edges.push((u, v));
                }
            }
        }
        edges
    }

    /// The graph restricted to `split.train_nodes`: edges touching an unseen
    /// node are removed and labels are stripped. Node ids are unchanged.
    pub fn training_view(&self, split: &NodeSplit) -> Graph {
        let mut keep = vec![false; self.num_nodes()];
        for &n in &split.train_nodes {
            keep[n] = true;
        }
        let adjacency = self
            .adjacency
            .iter()
            .enumerate()
            .map(|(u, nbrs)| {
                if !keep[u] {
                    return Vec::new();
                }
                nbrs.iter().copied().filter(|&v| keep[v]).collect()
            })
            .collect();
        Graph {
            adjacency,
            features: self.features.clone(),
            labels: None,
        }
    }

    /// Copy of the graph with the given edges removed (labels retained).
    fn without_edges(&self, removed: &HashSet<(usize, usize)>) -> Graph {
        let adjacency = self
            .adjacency
            .iter()
            .enumerate()
            .map(|(u, nbrs)| {
                nbrs.iter()
                    .copied()
                    .filter(|&v| {
                        let key = if u < v { (u, v) } else { (v, u) };
                        !removed.contains(&key)
                    })
                    .collect()
            })
            .collect();
        Graph {
            adjacency,
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Write the edge list ("u v" per line, u < v) and a text feature file.
    pub fn write(&self, edge_path: &Path, feature_path: &Path) -> Result<(), GraphError> {
        write_edge_file(edge_path, &self.edge_list())?;
        write_feature_text(feature_path, &self.features)
    }

    /// Content hash over structure and features, used to tie embeddings to
    /// the exact graph they were generated from.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.num_nodes().to_le_bytes());
        for (u, v) in self.edge_list() {
            h.update(u.to_le_bytes());
            h.update(v.to_le_bytes());
        }
        for &x in self.features.as_slice() {
            h.update((x as f32).to_le_bytes());
        }
        crate::model::hex_string(&h.finalize())
    }
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parse an edge file: one "u v" pair per line, `#` comments, blank lines ok.
pub fn read_edge_file(path: &Path) -> Result<Vec<(usize, usize)>, GraphError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut edges = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let bad = || GraphError::BadEdgeLine {
            path: path.display().to_string(),
            line: lineno + 1,
            text: line.clone(),
        };
        let u: usize = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let v: usize = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if it.next().is_some() {
            return Err(bad());
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn write_edge_file(path: &Path, edges: &[(usize, usize)]) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for &(u, v) in edges {
        writeln!(w, "{u} {v}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Load features from either the text format (one row of decimals per node)
/// or the binary matrix format, detected by magic bytes.
pub fn read_feature_file(path: &Path) -> Result<Mat, GraphError> {
    let mut head = [0u8; 8];
    let n = File::open(path)
        .map_err(io_err(path))?
        .read(&mut head)
        .map_err(io_err(path))?;
    if n == 8 && &head == MAT_MAGIC {
        return Ok(Mat::load(path)?);
    }
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for tok in trimmed.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| GraphError::BadLine {
                path: path.display().to_string(),
                line: lineno + 1,
                what: "feature value",
                text: tok.to_string(),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(GraphError::RaggedFeatures {
                    path: path.display().to_string(),
                    a: first.len(),
                    b: row.len(),
                });
            }
        }
        rows.push(row);
    }
    Ok(Mat::from_rows(rows))
}

pub fn write_feature_text(path: &Path, features: &Mat) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in 0..features.rows() {
        let row = features.row(r);
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(" ")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Parse a label file: "node_id label_id" per line; a repeated node id adds
/// another label to that node (multi-label).
pub fn read_label_file(path: &Path, num_nodes: usize) -> Result<LabelStore, GraphError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut sets = vec![Vec::new(); num_nodes];
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = || GraphError::BadLine {
            path: path.display().to_string(),
            line: lineno + 1,
            what: "label line",
            text: line.clone(),
        };
        let mut it = trimmed.split_whitespace();
        let node: usize = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let label: usize = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if it.next().is_some() {
            return Err(bad());
        }
        if node >= num_nodes {
            return Err(GraphError::NodeOutOfRange {
                id: node,
                num_nodes,
            });
        }
        sets[node].push(label);
    }
    Ok(LabelStore::new(sets))
}

/// Load and validate a graph from an edge file, a feature file, and an
/// optional label file. The feature row count fixes the node count.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> Result<Graph, GraphError> {
    let features = read_feature_file(feature_path)?;
    let edges = read_edge_file(edge_path)?;
    let labels = match label_path {
        Some(p) => Some(read_label_file(p, features.rows())?),
        None => None,
    };
    Graph::from_parts(&edges, features, labels)
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

/// Partition of the node set into training nodes and unseen nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSplit {
    pub train_nodes: Vec<usize>,
    pub unseen_nodes: Vec<usize>,
    pub seed: u64,
}

/// Uniformly random node partition with `unseen_ratio` of nodes held out.
/// Pure function of (graph size, ratio, seed).
pub fn split_unseen_nodes(
    g: &Graph,
    unseen_ratio: f64,
    seed: u64,
) -> Result<NodeSplit, GraphError> {
    let n = g.num_nodes();
    let unseen_count = (unseen_ratio * n as f64).round() as usize;
    if !(0.0..1.0).contains(&unseen_ratio) || unseen_count == 0 || unseen_count >= n {
        return Err(GraphError::DegenerateSplit {
            ratio: unseen_ratio,
            num_nodes: n,
        });
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, "node-split");
    ids.shuffle(&mut rng);
    let mut unseen_nodes: Vec<usize> = ids[..unseen_count].to_vec();
    let mut train_nodes: Vec<usize> = ids[unseen_count..].to_vec();
    unseen_nodes.sort_unstable();
    train_nodes.sort_unstable();
    Ok(NodeSplit {
        train_nodes,
        unseen_nodes,
        seed,
    })
}

/// Link-prediction split: hidden edges plus matched non-edges form the test
/// set; the remaining edges form `train_graph` and, with matched non-edges,
/// the link predictor's training set.
#[derive(Clone, Debug)]
pub struct EdgeSplit {
    pub train_graph: Graph,
    pub train_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Hide `hide_fraction` of the edges without creating a dangling node,
/// returning the reduced graph and the hidden edges.
///
/// Hiding is greedy over a shuffled edge order; an edge is hidden only if
/// both endpoints keep degree >= 1 afterwards. Rejection is monotone (a
/// rejected edge never becomes hideable later), so a single pass decides
/// feasibility. `eligible`, when given, restricts hidden edges to pairs
/// with both endpoints marked true.
pub fn hide_edges(
    g: &Graph,
    hide_fraction: f64,
    rng: &mut impl Rng,
    eligible: Option<&[bool]>,
) -> Result<(Graph, Vec<(usize, usize)>), GraphError> {
    let edges = g.edge_list();
    if edges.is_empty() {
        return Err(GraphError::NoEdges);
    }
    let ok = |u: usize, v: usize| eligible.is_none_or(|e| e[u] && e[v]);
    let target = (hide_fraction * edges.len() as f64).round() as usize;

    let mut order = edges;
    order.shuffle(rng);
    let mut degree: Vec<usize> = (0..g.num_nodes()).map(|u| g.degree(u)).collect();
    let mut hidden_set: HashSet<(usize, usize)> = HashSet::new();
    let mut hidden = Vec::with_capacity(target);
    for &(u, v) in &order {
        if hidden.len() == target {
            break;
        }
        if ok(u, v) && degree[u] > 1 && degree[v] > 1 {
            degree[u] -= 1;
            degree[v] -= 1;
            hidden_set.insert((u, v));
            hidden.push((u, v));
        }
    }
    if hidden.len() < target {
        return Err(GraphError::InfeasibleHide {
            requested: target,
            achieved: hidden.len(),
        });
    }
    Ok((g.without_edges(&hidden_set), hidden))
}

/// Full link-prediction split: hidden edges plus matched non-edges of the
/// original graph form the test set; the surviving edges plus matched
/// non-edges form the predictor's training set.
pub fn split_edges_for_lp(
    g: &Graph,
    hide_fraction: f64,
    seed: u64,
    eligible: Option<&[bool]>,
) -> Result<EdgeSplit, GraphError> {
    let mut rng = substream(seed, "edge-split");
    let (train_graph, test_pos) = hide_edges(g, hide_fraction, &mut rng, eligible)?;
    let train_pos = train_graph.edge_list();

    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let test_neg = sample_non_edges(g, test_pos.len(), &mut taken, &mut rng, eligible)?;
    let train_neg = sample_non_edges(g, train_pos.len(), &mut taken, &mut rng, None)?;

    Ok(EdgeSplit {
        train_graph,
        train_pos,
        train_neg,
        test_pos,
        test_neg,
        seed,
    })
}

/// Uniform non-edges of `g`, excluding self pairs, existing edges, and pairs
/// already in `taken` (which is extended with the result).
fn sample_non_edges(
    g: &Graph,
    count: usize,
    taken: &mut HashSet<(usize, usize)>,
    rng: &mut impl Rng,
    eligible: Option<&[bool]>,
) -> Result<Vec<(usize, usize)>, GraphError> {
    let n = g.num_nodes();
    let total_pairs = n * (n - 1) / 2;
    if total_pairs.saturating_sub(g.num_edges() + taken.len()) < count {
        return Err(GraphError::TooFewNonEdges { needed: count });
    }
    let ok = |u: usize, v: usize| eligible.is_none_or(|e| e[u] && e[v]);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let max_attempts = 200 * count + 10_000;
    while out.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(GraphError::TooFewNonEdges { needed: count });
        }
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let key = if u < v { (u, v) } else { (v, u) };
        if g.has_edge(key.0, key.1) || taken.contains(&key) || !ok(key.0, key.1) {
            continue;
        }
        taken.insert(key);
        out.push(key);
    }
    Ok(out)
}
