//! Whole-graph embedding generation from a trained model.
//!
//! Positive pairs are collected by random walks over the full graph (seen
//! and unseen nodes alike); every pair is dual-encoded and each node's
//! final embedding is the mean of all encodings collected for it. Nodes in
//! no pair (isolated after splits) fall back to a direct encoding of a
//! degenerate self-neighborhood and are flagged with coverage 0.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::dual::{dual_encode_with_trees, model_similarity, sample_candidate_trees};
use crate::encoder::{lease_model, sagb_forward};
use crate::graph::Graph;
use crate::matrix::{Mat, MatIoError};
use crate::model::Model;
use crate::rng::substream;
use crate::sampling::{positive_pairs, random_walks, NeighborhoodTree, PairMode, WalkConfig};
use crate::tape::Tape;

#[derive(Error, Debug)]
pub enum InferError {
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Sampling(#[from] crate::sampling::SamplingError),
    #[error(transparent)]
    MatIo(#[from] MatIoError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model expects {expected} feature dims, graph has {actual}")]
    FeatureDimMismatch { expected: usize, actual: usize },
    #[error("node {0} is isolated; pass allow_isolated to embed it from features alone")]
    IsolatedNode(usize),
    #[error("embedding sidecar {path}: {reason}")]
    BadSidecar { path: String, reason: String },
}

/// Where an embedding matrix came from: hashes of the checkpoint and the
/// graph it was generated on.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Provenance {
    pub checkpoint_hash: Option<String>,
    pub graph_hash: Option<String>,
}

/// Final per-node embeddings plus how many dual encodings were averaged
/// into each row (0 marks the feature-only fallback).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub vectors: Mat,
    pub coverage: Vec<u32>,
    pub provenance: Provenance,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn num_nodes(&self) -> usize {
        self.vectors.rows()
    }

    pub fn row(&self, node: usize) -> &[f64] {
        self.vectors.row(node)
    }

    pub fn with_provenance(mut self, model: &Model, g: &Graph) -> EmbeddingMatrix {
        self.provenance = Provenance {
            checkpoint_hash: Some(model.content_hash()),
            graph_hash: Some(g.content_hash()),
        };
        self
    }

    /// Binary matrix plus a text sidecar mapping row -> node id and
    /// coverage count, with provenance hashes in header comments.
    pub fn save(&self, mat_path: &Path, sidecar_path: &Path) -> Result<(), InferError> {
        self.vectors.save(mat_path)?;
        let io = |source| InferError::Io {
            path: sidecar_path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(sidecar_path).map_err(io)?);
        if let Some(h) = &self.provenance.checkpoint_hash {
            writeln!(w, "# checkpoint {h}").map_err(io)?;
        }
        if let Some(h) = &self.provenance.graph_hash {
            writeln!(w, "# graph {h}").map_err(io)?;
        }
        writeln!(w, "# row\tnode\tcoverage").map_err(io)?;
        for (row, &cov) in self.coverage.iter().enumerate() {
            writeln!(w, "{row}\t{row}\t{cov}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(mat_path: &Path, sidecar_path: &Path) -> Result<EmbeddingMatrix, InferError> {
        let vectors = Mat::load(mat_path)?;
        let io = |source| InferError::Io {
            path: sidecar_path.display().to_string(),
            source,
        };
        let file = File::open(sidecar_path).map_err(io)?;
        let mut coverage = vec![0u32; vectors.rows()];
        let mut provenance = Provenance::default();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| InferError::Io {
                path: sidecar_path.display().to_string(),
                source,
            })?;
            let t = line.trim();
            if let Some(rest) = t.strip_prefix("# checkpoint ") {
                provenance.checkpoint_hash = Some(rest.trim().to_string());
                continue;
            }
            if let Some(rest) = t.strip_prefix("# graph ") {
                provenance.graph_hash = Some(rest.trim().to_string());
                continue;
            }
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| InferError::BadSidecar {
                path: sidecar_path.display().to_string(),
                reason: reason.to_string(),
            };
            let mut it = t.split_whitespace();
            let row: usize = it
                .next()
                .ok_or_else(|| bad("missing row"))?
                .parse()
                .map_err(|_| bad("bad row"))?;
            let _node: usize = it
                .next()
                .ok_or_else(|| bad("missing node"))?
                .parse()
                .map_err(|_| bad("bad node"))?;
            let cov: u32 = it
                .next()
                .ok_or_else(|| bad("missing coverage"))?
                .parse()
                .map_err(|_| bad("bad coverage"))?;
            if row >= coverage.len() {
                return Err(bad("row out of range"));
            }
            coverage[row] = cov;
        }
        Ok(EmbeddingMatrix {
            vectors,
            coverage,
            provenance,
        })
    }
}

fn check_dims(g: &Graph, model: &Model) -> Result<(), InferError> {
    if g.feature_dim() != model.cfg.feat_dim {
        return Err(InferError::FeatureDimMismatch {
            expected: model.cfg.feat_dim,
            actual: g.feature_dim(),
        });
    }
    Ok(())
}

/// Dual-encode one pair on a fresh tape and return both embeddings.
fn encode_pair(
    g: &Graph,
    model: &Model,
    pair: (usize, usize),
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>), crate::sampling::SamplingError> {
    let trees_a = sample_candidate_trees(g, pair.0, &model.cfg, rng)?;
    let trees_p = sample_candidate_trees(g, pair.1, &model.cfg, rng)?;
    let mut tape = Tape::new();
    let lease = lease_model(&mut tape, model);
    let bias = lease.bias.as_ref().map(|b| (b, &model.bias));
    let similarity = model_similarity(&model.cfg, &lease);
    let out = dual_encode_with_trees(
        &mut tape,
        &model.cfg,
        &lease,
        bias,
        &trees_a,
        &trees_p,
        g.features(),
        similarity,
    );
    Ok((
        tape.data(out.z_anchor).as_slice().to_vec(),
        tape.data(out.z_partner).as_slice().to_vec(),
    ))
}

/// Direct encoding of a degenerate self-neighborhood (the fallback for
/// nodes that appear in no pair).
fn encode_self_fallback(g: &Graph, model: &Model, node: usize) -> Vec<f64> {
    let tree = NeighborhoodTree::self_tree(node, &model.cfg.layer_sizes);
    let mut tape = Tape::new();
    let lease = lease_model(&mut tape, model);
    let bias = lease.bias.as_ref().map(|b| (b, &model.bias));
    let z = sagb_forward(
        &mut tape,
        &model.cfg,
        &lease.encoders[0],
        bias,
        &tree,
        g.features(),
    );
    tape.data(z).as_slice().to_vec()
}

/// Run the embedding-generation pass over a given pair list. Each pair
/// draws its trees from its own substream of `seed`, so the result is
/// independent of how pairs are distributed over threads.
pub fn generate_embeddings_from_pairs(
    g: &Graph,
    model: &Model,
    pairs: &[(usize, usize)],
    seed: u64,
    threads: usize,
) -> Result<EmbeddingMatrix, InferError> {
    check_dims(g, model)?;
    let d = model.cfg.dim;
    let n = g.num_nodes();

    type Encoded = Vec<(usize, Vec<f64>, Vec<f64>)>;
    let encode_chunk =
        |range: std::ops::Range<usize>| -> Result<Encoded, crate::sampling::SamplingError> {
            range
                .map(|idx| {
                    let mut rng = substream(seed, &format!("infer-trees/{idx}"));
                    let (za, zp) = encode_pair(g, model, pairs[idx], &mut rng)?;
                    Ok((idx, za, zp))
                })
                .collect()
        };

    let mut encoded: Encoded = if threads <= 1 || pairs.len() < 2 {
        encode_chunk(0..pairs.len()).map_err(InferError::Sampling)?
    } else {
        let workers = threads.min(pairs.len());
        let chunk = pairs.len().div_ceil(workers);
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(pairs.len());
                    scope.spawn(move || encode_chunk(lo..hi))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("inference worker panicked"))
                .collect::<Vec<_>>()
        });
        let mut merged = Vec::with_capacity(pairs.len());
        for r in results {
            merged.extend(r.map_err(InferError::Sampling)?);
        }
        merged
    };
    // canonical merge order regardless of worker layout
    encoded.sort_by_key(|(idx, _, _)| *idx);

    let mut sums = Mat::zeros(n, d);
    let mut coverage = vec![0u32; n];
    for (idx, za, zp) in encoded {
        let (v, vp) = pairs[idx];
        for (c, &x) in za.iter().enumerate() {
            let cur = sums.get(v, c);
            sums.set(v, c, cur + x);
        }
        for (c, &x) in zp.iter().enumerate() {
            let cur = sums.get(vp, c);
            sums.set(vp, c, cur + x);
        }
        coverage[v] += 1;
        coverage[vp] += 1;
    }
    for node in 0..n {
        if coverage[node] > 0 {
            let k = coverage[node] as f64;
            for c in 0..d {
                let v = sums.get(node, c) / k;
                sums.set(node, c, v);
            }
        } else {
            let z = encode_self_fallback(g, model, node);
            for (c, &x) in z.iter().enumerate() {
                sums.set(node, c, x);
            }
        }
    }
    Ok(EmbeddingMatrix {
        vectors: sums,
        coverage,
        provenance: Provenance {
            checkpoint_hash: Some(model.content_hash()),
            graph_hash: Some(g.content_hash()),
        },
    })
}

/// Embeddings for every node of `g`: walk the whole graph, dual-encode
/// every positive pair, and average per node.
pub fn generate_embeddings(
    g: &Graph,
    model: &Model,
    walk_cfg: &WalkConfig,
    pair_mode: PairMode,
    seed: u64,
    threads: usize,
) -> Result<EmbeddingMatrix, InferError> {
    check_dims(g, model)?;
    let walk_seed: u64 = substream(seed, "infer-walks").gen();
    let pairs = if g.num_edges() > 0 {
        positive_pairs(&random_walks(g, walk_cfg, walk_seed)?, pair_mode).pairs
    } else {
        Vec::new()
    };
    generate_embeddings_from_pairs(g, model, &pairs, seed, threads)
}

/// Embed a single node by dual-encoding `n_pairs` locally walked pairs and
/// averaging the anchor side.
pub fn embed_single(
    g: &Graph,
    model: &Model,
    node: usize,
    n_pairs: usize,
    walk_length: usize,
    seed: u64,
    allow_isolated: bool,
) -> Result<Vec<f64>, InferError> {
    check_dims(g, model)?;
    assert!(n_pairs >= 1 && walk_length >= 1);
    if g.degree(node) == 0 {
        if allow_isolated {
            return Ok(encode_self_fallback(g, model, node));
        }
        return Err(InferError::IsolatedNode(node));
    }
    let mut walk_rng = substream(seed, "single-walk");
    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let mut here = node;
        for _ in 0..walk_length {
            let nbrs = g.neighbors(here);
            here = nbrs[walk_rng.gen_range(0..nbrs.len())];
            if here != node && pairs.len() < n_pairs {
                pairs.push((node, here));
            }
        }
    }
    let mut sum = vec![0.0; model.cfg.dim];
    for (idx, pair) in pairs.iter().enumerate() {
        let mut rng = substream(seed, &format!("single-trees/{idx}"));
        let (za, _) = encode_pair(g, model, *pair, &mut rng)?;
        for (c, &x) in za.iter().enumerate() {
            sum[c] += x;
        }
    }
    for x in &mut sum {
        *x /= n_pairs as f64;
    }
    Ok(sum)
}
