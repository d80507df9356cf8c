//! Trainable parameters of the dual encoder and checkpoint persistence.
//!
//! A checkpoint is a directory of binary matrices plus a text manifest and
//! the list of nodes that own a global-bias row. All hidden layers share
//! width `dim` because the single global-bias table is added at every
//! hidden layer; layer 1 lifts the feature dimension into `dim`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::{Mat, MatIoError};
use crate::rng::substream;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    MatIo(#[from] MatIoError),
    #[error("checkpoint manifest {path}: {reason}")]
    BadManifest { path: String, reason: String },
    #[error("checkpoint is missing matrix {name}")]
    MissingMatrix { name: String },
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Pass-through; mainly for hand-computed tests.
    Identity,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        })
    }
}

/// Neighborhood aggregator family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregatorKind {
    /// Parameter-free elementwise mean of the children.
    Mean,
    /// Dense transform plus activation per child, then elementwise max.
    MaxPool,
}

impl AggregatorKind {
    pub fn parse(s: &str) -> Option<AggregatorKind> {
        match s {
            "mean" => Some(AggregatorKind::Mean),
            "maxpool" => Some(AggregatorKind::MaxPool),
            _ => None,
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::MaxPool => "maxpool",
        })
    }
}

/// Candidate-generation variant of the dual encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualMode {
    /// K independently sampled neighborhoods through one shared encoder.
    MultiSample,
    /// One sampled neighborhood through K encoder parameter sets, fused
    /// with a trainable weight-vector similarity.
    MultiAggregate,
}

impl DualMode {
    pub fn parse(s: &str) -> Option<DualMode> {
        match s {
            "ms" => Some(DualMode::MultiSample),
            "ma" => Some(DualMode::MultiAggregate),
            _ => None,
        }
    }
}

impl fmt::Display for DualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DualMode::MultiSample => "ms",
            DualMode::MultiAggregate => "ma",
        })
    }
}

pub const MAX_CANDIDATES: usize = 32;

/// Architecture hyperparameters; fixed at init and stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: DualMode,
    /// Candidate embeddings per node (K).
    pub candidates: usize,
    /// Hierarchy depth (L); `layer_sizes.len() == depth`.
    pub depth: usize,
    pub feat_dim: usize,
    /// Hidden and output embedding width (d).
    pub dim: usize,
    pub layer_sizes: Vec<usize>,
    pub aggregator: AggregatorKind,
    pub activation: Activation,
    pub normalize_output: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.candidates == 0 || self.candidates > MAX_CANDIDATES {
            return Err(format!(
                "candidates must be in 1..={MAX_CANDIDATES}, got {}",
                self.candidates
            ));
        }
        if self.depth == 0 {
            return Err("depth must be >= 1".into());
        }
        if self.layer_sizes.len() != self.depth {
            return Err(format!(
                "layer_sizes has {} entries for depth {}",
                self.layer_sizes.len(),
                self.depth
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err("layer sizes must be >= 1".into());
        }
        if self.dim == 0 || self.feat_dim == 0 {
            return Err("dim and feat_dim must be >= 1".into());
        }
        Ok(())
    }

    /// Input width of layer `l` (1-based): features at the bottom, `dim`
    /// above. The aggregated vector has the same width, so the layer weight
    /// is `[2 * input_width(l), dim]`.
    pub fn input_width(&self, layer: usize) -> usize {
        if layer == 1 {
            self.feat_dim
        } else {
            self.dim
        }
    }
}

/// Per-layer weights of one encoder parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    /// `[2 * input_width, dim]`, applied after concatenating self and
    /// aggregated representations.
    pub weight: Mat,
    /// Max-pool transform and bias (`[input_width, input_width]`,
    /// `[1, input_width]`); `None` for the mean aggregator.
    pub pool: Option<(Mat, Mat)>,
}

/// One full encoder parameter set (all layers).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub layers: Vec<LayerWeights>,
}

/// Trainable per-node additive identity for training nodes; unseen nodes
/// have no row and receive a zero bias.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalBias {
    /// `[train_nodes.len(), dim]`, row order following `node_rows`.
    pub table: Mat,
    /// Per graph node: its row in `table`, if it is a training node.
    pub node_rows: Vec<Option<usize>>,
    /// When false the table is excluded from optimization (ablations).
    pub trainable: bool,
}

impl GlobalBias {
    pub fn new(num_nodes: usize, train_nodes: &[usize], dim: usize, trainable: bool) -> Self {
        let mut node_rows = vec![None; num_nodes];
        for (row, &n) in train_nodes.iter().enumerate() {
            node_rows[n] = Some(row);
        }
        GlobalBias {
            table: Mat::zeros(train_nodes.len(), dim),
            node_rows,
            trainable,
        }
    }

    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.node_rows.get(node).copied().flatten()
    }
}

/// The complete trainable model: one encoder set for the multi-sample
/// variant, K sets plus the attention weight vector for multi-aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoders: Vec<EncoderWeights>,
    pub bias: GlobalBias,
    /// `[2 * dim, 1]` similarity weight vector; multi-aggregate only.
    pub attention: Option<Mat>,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(r, c, rng.gen_range(-limit..limit));
        }
    }
    m
}

impl Model {
    /// Initialize with Xavier-uniform weights, a zero bias table, and (for
    /// multi-aggregate) a Xavier attention vector, all from the `init`
    /// substream of `cfg.seed`.
    pub fn init(cfg: ModelConfig, num_nodes: usize, train_nodes: &[usize]) -> Model {
        cfg.validate().expect("invalid model config");
        let mut rng = substream(cfg.seed, "init");
        let sets = match cfg.mode {
            DualMode::MultiSample => 1,
            DualMode::MultiAggregate => cfg.candidates,
        };
        let mut encoders = Vec::with_capacity(sets);
        for _ in 0..sets {
            let mut layers = Vec::with_capacity(cfg.depth);
            for l in 1..=cfg.depth {
                let din = cfg.input_width(l);
                let pool = match cfg.aggregator {
                    AggregatorKind::Mean => None,
                    AggregatorKind::MaxPool => {
                        Some((xavier(&mut rng, din, din), Mat::zeros(1, din)))
                    }
                };
                layers.push(LayerWeights {
                    weight: xavier(&mut rng, 2 * din, cfg.dim),
                    pool,
                });
            }
            encoders.push(EncoderWeights { layers });
        }
        let attention = match cfg.mode {
            DualMode::MultiSample => None,
            DualMode::MultiAggregate => Some(xavier(&mut rng, 2 * cfg.dim, 1)),
        };
        let bias = GlobalBias::new(num_nodes, train_nodes, cfg.dim, true);
        Model {
            cfg,
            encoders,
            bias,
            attention,
        }
    }

    /// Named parameters in a stable order. `bias.table` is included even
    /// when frozen; the optimizer consults [`Model::trainable_names`].
    pub fn params(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (e, enc) in self.encoders.iter().enumerate() {
            for (l, layer) in enc.layers.iter().enumerate() {
                out.push((format!("enc{e}.layer{}.weight", l + 1), &layer.weight));
                if let Some((pw, pb)) = &layer.pool {
                    out.push((format!("enc{e}.layer{}.pool_weight", l + 1), pw));
                    out.push((format!("enc{e}.layer{}.pool_bias", l + 1), pb));
                }
            }
        }
        out.push(("global_bias".to_string(), &self.bias.table));
        if let Some(a) = &self.attention {
            out.push(("attention".to_string(), a));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out: Vec<(String, &mut Mat)> = Vec::new();
        for (e, enc) in self.encoders.iter_mut().enumerate() {
            for (l, layer) in enc.layers.iter_mut().enumerate() {
                out.push((format!("enc{e}.layer{}.weight", l + 1), &mut layer.weight));
                if let Some((pw, pb)) = &mut layer.pool {
                    out.push((format!("enc{e}.layer{}.pool_weight", l + 1), pw));
                    out.push((format!("enc{e}.layer{}.pool_bias", l + 1), pb));
                }
            }
        }
        out.push(("global_bias".to_string(), &mut self.bias.table));
        if let Some(a) = &mut self.attention {
            out.push(("attention".to_string(), a));
        }
        out
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        name != "global_bias" || self.bias.trainable
    }

    /// The bias table is optimized sparsely: rows with an all-zero gradient
    /// in a step are skipped entirely.
    pub fn is_sparse(&self, name: &str) -> bool {
        name == "global_bias"
    }

    fn manifest_string(&self) -> String {
        let mut kv = BTreeMap::new();
        kv.insert("format", "cade-checkpoint-1".to_string());
        kv.insert("mode", self.cfg.mode.to_string());
        kv.insert("candidates", self.cfg.candidates.to_string());
        kv.insert("depth", self.cfg.depth.to_string());
        kv.insert("feat_dim", self.cfg.feat_dim.to_string());
        kv.insert("dim", self.cfg.dim.to_string());
        kv.insert(
            "layer_sizes",
            self.cfg
                .layer_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("aggregator", self.cfg.aggregator.to_string());
        kv.insert("activation", self.cfg.activation.to_string());
        kv.insert("normalize_output", self.cfg.normalize_output.to_string());
        kv.insert("seed", self.cfg.seed.to_string());
        kv.insert("num_nodes", self.bias.node_rows.len().to_string());
        kv.insert("bias_trainable", self.bias.trainable.to_string());
        let mut s = String::new();
        for (k, v) in kv {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Content hash over the manifest, bias-row mapping, and every
    /// parameter, in the stable `params()` order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest_string().as_bytes());
        for (row, slot) in self.bias.node_rows.iter().enumerate() {
            if let Some(r) = slot {
                h.update(row.to_le_bytes());
                h.update(r.to_le_bytes());
            }
        }
        for (name, mat) in self.params() {
            h.update(name.as_bytes());
            for &v in mat.as_slice() {
                h.update((v as f32).to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |source| ModelError::Io {
            path: dir.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("manifest.txt"), self.manifest_string()).map_err(io)?;
        let mut bias_nodes = String::new();
        let mut ordered: Vec<(usize, usize)> = self
            .bias
            .node_rows
            .iter()
            .enumerate()
            .filter_map(|(n, r)| r.map(|r| (r, n)))
            .collect();
        ordered.sort_unstable();
        for (_, node) in ordered {
            bias_nodes.push_str(&format!("{node}\n"));
        }
        fs::write(dir.join("bias_nodes.txt"), bias_nodes).map_err(io)?;
        for (name, mat) in self.params() {
            mat.save(&dir.join(format!("{name}.mat")))?;
        }
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Model, ModelError> {
        let manifest_path = dir.join("manifest.txt");
        let io = |source| ModelError::Io {
            path: manifest_path.display().to_string(),
            source,
        };
        let text = fs::read_to_string(&manifest_path).map_err(io)?;
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let bad = |reason: &str| ModelError::BadManifest {
            path: manifest_path.display().to_string(),
            reason: reason.to_string(),
        };
        let get = |key: &str| {
            kv.get(key)
                .cloned()
                .ok_or_else(|| bad(&format!("missing key {key}")))
        };
        let parse_usize =
            |key: &str| -> Result<usize, ModelError> { get(key)?.parse().map_err(|_| bad(key)) };
        let cfg = ModelConfig {
            mode: DualMode::parse(&get("mode")?).ok_or_else(|| bad("mode"))?,
            candidates: parse_usize("candidates")?,
            depth: parse_usize("depth")?,
            feat_dim: parse_usize("feat_dim")?,
            dim: parse_usize("dim")?,
            layer_sizes: get("layer_sizes")?
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| bad("layer_sizes")))
                .collect::<Result<Vec<usize>, _>>()?,
            aggregator: AggregatorKind::parse(&get("aggregator")?)
                .ok_or_else(|| bad("aggregator"))?,
            activation: Activation::parse(&get("activation")?)
                .ok_or_else(|| bad("activation"))?,
            normalize_output: get("normalize_output")? == "true",
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
        };
        let num_nodes = parse_usize("num_nodes")?;
        let bias_trainable = get("bias_trainable")? == "true";

        let bias_text = fs::read_to_string(dir.join("bias_nodes.txt")).map_err(io)?;
        let train_nodes: Vec<usize> = bias_text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse().map_err(|_| bad("bias_nodes.txt")))
            .collect::<Result<_, _>>()?;

        let load = |name: String| -> Result<Mat, ModelError> {
            let path = dir.join(format!("{name}.mat"));
            if !path.exists() {
                return Err(ModelError::MissingMatrix { name });
            }
            Ok(Mat::load(&path)?)
        };

        let sets = match cfg.mode {
            DualMode::MultiSample => 1,
            DualMode::MultiAggregate => cfg.candidates,
        };
        let mut encoders = Vec::with_capacity(sets);
        for e in 0..sets {
            let mut layers = Vec::with_capacity(cfg.depth);
            for l in 1..=cfg.depth {
                let weight = load(format!("enc{e}.layer{l}.weight"))?;
                let pool = match cfg.aggregator {
                    AggregatorKind::Mean => None,
                    AggregatorKind::MaxPool => Some((
                        load(format!("enc{e}.layer{l}.pool_weight"))?,
                        load(format!("enc{e}.layer{l}.pool_bias"))?,
                    )),
                };
                layers.push(LayerWeights { weight, pool });
            }
            encoders.push(EncoderWeights { layers });
        }
        let mut bias = GlobalBias::new(num_nodes, &train_nodes, cfg.dim, bias_trainable);
        bias.table = load("global_bias".to_string())?;
        let attention = match cfg.mode {
            DualMode::MultiSample => None,
            DualMode::MultiAggregate => Some(load("attention".to_string())?),
        };
        Ok(Model {
            cfg,
            encoders,
            bias,
            attention,
        })
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
