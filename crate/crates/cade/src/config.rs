//! Flat dotted-key run configuration.
//!
//! Config files are diff-able experiment records: `key = value` lines with
//! `#` comments. Unknown keys are rejected. Command-line overrides are
//! applied on top of the file, so flags win. Defaults follow the reference
//! experimental settings (embedding width 256, two layers sampling 20 then
//! 10, K = 10, learning rate 1e-4, 100 walks of length 4 per node).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::{EdgeFeature, Method, ProbeConfig, ProtocolSpec, Task};
use crate::model::{Activation, AggregatorKind, DualMode, ModelConfig};
use crate::sampling::{PairMode, WalkConfig};
use crate::train::TrainConfig;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 'key = value', got {text:?}")]
    BadSyntax {
        path: String,
        line: usize,
        text: String,
    },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("bad value {value:?} for key {key}")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every tunable, under the dotted names used in config files and reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub edges_path: Option<PathBuf>,
    pub features_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: DualMode,
    pub negatives: usize,
    pub neg_power: f64,
    pub pairs_per_epoch: usize,
    pub checkpoint_every: usize,
    pub candidates: usize,
    pub depth: usize,
    pub layer_sizes: Vec<usize>,
    pub dim: usize,
    pub aggregator: AggregatorKind,
    pub activation: Activation,
    pub normalize_output: bool,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub pair_mode: PairMode,
    /// 0 = reuse the training walk settings at inference.
    pub infer_walks: usize,
    pub infer_length: usize,
    pub task: Task,
    pub method: Method,
    pub unseen_ratio: f64,
    pub hide_fraction: f64,
    pub lp_unseen_edges_allow: bool,
    pub edge_feature: EdgeFeature,
    pub probe_lr: f64,
    pub probe_epochs: usize,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 1,
            edges_path: None,
            features_path: None,
            labels_path: None,
            out_dir: PathBuf::from("out"),
            lr: 1e-4,
            epochs: 10,
            batch_size: 512,
            mode: DualMode::MultiSample,
            negatives: 20,
            neg_power: 0.75,
            pairs_per_epoch: 0,
            checkpoint_every: 0,
            candidates: 10,
            depth: 2,
            layer_sizes: vec![20, 10],
            dim: 256,
            aggregator: AggregatorKind::Mean,
            activation: Activation::Relu,
            normalize_output: false,
            walks_per_node: 100,
            walk_length: 4,
            pair_mode: PairMode::StartVsRest,
            infer_walks: 0,
            infer_length: 0,
            task: Task::NodeClassification,
            method: Method::CadeMs,
            unseen_ratio: 0.3,
            hide_fraction: 0.2,
            lp_unseen_edges_allow: true,
            edge_feature: EdgeFeature::Hadamard,
            probe_lr: 0.01,
            probe_epochs: 300,
            repeats: 1,
        }
    }
}

fn parse_list(value: &str) -> Option<Vec<usize>> {
    let parts: Result<Vec<usize>, _> =
        value.split(',').map(|s| s.trim().parse::<usize>()).collect();
    parts.ok().filter(|v| !v.is_empty())
}

impl RunConfig {
    /// Set one dotted key. Unknown keys and unparsable values are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! parse {
            () => {
                value.trim().parse().map_err(|_| bad())?
            };
        }
        let v = value.trim();
        match key {
            "seed" => self.seed = parse!(),
            "threads" => self.threads = parse!(),
            "paths.edges" => self.edges_path = Some(PathBuf::from(v)),
            "paths.features" => self.features_path = Some(PathBuf::from(v)),
            "paths.labels" => self.labels_path = Some(PathBuf::from(v)),
            "paths.out" => self.out_dir = PathBuf::from(v),
            "train.lr" => self.lr = parse!(),
            "train.epochs" => self.epochs = parse!(),
            "train.batch_size" => self.batch_size = parse!(),
            "train.mode" => self.mode = DualMode::parse(v).ok_or_else(bad)?,
            "train.negatives" => self.negatives = parse!(),
            "train.neg_power" => self.neg_power = parse!(),
            "train.pairs_per_epoch" => self.pairs_per_epoch = parse!(),
            "train.checkpoint_every" => self.checkpoint_every = parse!(),
            "model.K" => self.candidates = parse!(),
            "model.L" => self.depth = parse!(),
            "model.sizes" => self.layer_sizes = parse_list(v).ok_or_else(bad)?,
            "model.d" => self.dim = parse!(),
            "model.aggregator" => self.aggregator = AggregatorKind::parse(v).ok_or_else(bad)?,
            "model.activation" => self.activation = Activation::parse(v).ok_or_else(bad)?,
            "model.normalize_output" => {
                self.normalize_output = v.parse().map_err(|_| bad())?
            }
            "sampling.walks" => self.walks_per_node = parse!(),
            "sampling.length" => self.walk_length = parse!(),
            "sampling.pair_mode" => {
                self.pair_mode = match v {
                    "start_vs_rest" => PairMode::StartVsRest,
                    "all_offsets" => PairMode::AllOffsets,
                    _ => return Err(bad()),
                }
            }
            "infer.walks" => self.infer_walks = parse!(),
            "infer.length" => self.infer_length = parse!(),
            "eval.task" => self.task = Task::parse(v).ok_or_else(bad)?,
            "eval.method" => self.method = Method::parse(v).ok_or_else(bad)?,
            "eval.unseen_ratio" => self.unseen_ratio = parse!(),
            "eval.hide_fraction" => self.hide_fraction = parse!(),
            "eval.lp_unseen_edges" => {
                self.lp_unseen_edges_allow = match v {
                    "allow" => true,
                    "exclude" => false,
                    _ => return Err(bad()),
                }
            }
            "eval.edge_feature" => self.edge_feature = EdgeFeature::parse(v).ok_or_else(bad)?,
            "eval.probe_lr" => self.probe_lr = parse!(),
            "eval.probe_epochs" => self.probe_epochs = parse!(),
            "eval.repeats" => self.repeats = parse!(),
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str, path: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.merge_str(text, path)?;
        Ok(cfg)
    }

    pub fn merge_str(&mut self, text: &str, path: &str) -> Result<(), ConfigError> {
        for (lineno, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| ConfigError::BadSyntax {
                path: path.to_string(),
                line: lineno + 1,
                text: line.to_string(),
            })?;
            self.apply(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RunConfig::parse_str(&text, &path.display().to_string())
    }

    /// Resolved configuration as sorted `key = value` lines.
    pub fn echo(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        kv.insert("seed".into(), self.seed.to_string());
        kv.insert("threads".into(), self.threads.to_string());
        if let Some(p) = &self.edges_path {
            kv.insert("paths.edges".into(), p.display().to_string());
        }
        if let Some(p) = &self.features_path {
            kv.insert("paths.features".into(), p.display().to_string());
        }
        if let Some(p) = &self.labels_path {
            kv.insert("paths.labels".into(), p.display().to_string());
        }
        kv.insert("paths.out".into(), self.out_dir.display().to_string());
        kv.insert("train.lr".into(), format!("{}", self.lr));
        kv.insert("train.epochs".into(), self.epochs.to_string());
        kv.insert("train.batch_size".into(), self.batch_size.to_string());
        kv.insert("train.mode".into(), self.mode.to_string());
        kv.insert("train.negatives".into(), self.negatives.to_string());
        kv.insert("train.neg_power".into(), format!("{}", self.neg_power));
        kv.insert(
            "train.pairs_per_epoch".into(),
            self.pairs_per_epoch.to_string(),
        );
        kv.insert(
            "train.checkpoint_every".into(),
            self.checkpoint_every.to_string(),
        );
        kv.insert("model.K".into(), self.candidates.to_string());
        kv.insert("model.L".into(), self.depth.to_string());
        kv.insert(
            "model.sizes".into(),
            self.layer_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("model.d".into(), self.dim.to_string());
        kv.insert("model.aggregator".into(), self.aggregator.to_string());
        kv.insert("model.activation".into(), self.activation.to_string());
        kv.insert(
            "model.normalize_output".into(),
            self.normalize_output.to_string(),
        );
        kv.insert("sampling.walks".into(), self.walks_per_node.to_string());
        kv.insert("sampling.length".into(), self.walk_length.to_string());
        kv.insert(
            "sampling.pair_mode".into(),
            match self.pair_mode {
                PairMode::StartVsRest => "start_vs_rest".into(),
                PairMode::AllOffsets => "all_offsets".into(),
            },
        );
        kv.insert("infer.walks".into(), self.infer_walks.to_string());
        kv.insert("infer.length".into(), self.infer_length.to_string());
        kv.insert("eval.task".into(), self.task.to_string());
        kv.insert("eval.method".into(), self.method.to_string());
        kv.insert("eval.unseen_ratio".into(), format!("{}", self.unseen_ratio));
        kv.insert(
            "eval.hide_fraction".into(),
            format!("{}", self.hide_fraction),
        );
        kv.insert(
            "eval.lp_unseen_edges".into(),
            if self.lp_unseen_edges_allow {
                "allow".into()
            } else {
                "exclude".into()
            },
        );
        kv.insert("eval.edge_feature".into(), self.edge_feature.to_string());
        kv.insert("eval.probe_lr".into(), format!("{}", self.probe_lr));
        kv.insert("eval.probe_epochs".into(), self.probe_epochs.to_string());
        kv.insert("eval.repeats".into(), self.repeats.to_string());
        let mut s = String::new();
        for (k, v) in kv {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn model_config(&self, feat_dim: usize) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            candidates: self.candidates,
            depth: self.depth,
            feat_dim,
            dim: self.dim,
            layer_sizes: self.layer_sizes.clone(),
            aggregator: self.aggregator,
            activation: self.activation,
            normalize_output: self.normalize_output,
            seed: self.seed,
        }
    }

    pub fn train_config(&self, feat_dim: usize) -> TrainConfig {
        TrainConfig {
            model: self.model_config(feat_dim),
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            negatives: self.negatives,
            neg_power: self.neg_power,
            pairs_per_epoch: self.pairs_per_epoch,
            walk: WalkConfig {
                walks_per_node: self.walks_per_node,
                walk_length: self.walk_length,
            },
            pair_mode: self.pair_mode,
            bias_trainable: true,
            checkpoint_every: self.checkpoint_every,
            checkpoint_dir: None,
        }
    }

    pub fn infer_walk(&self) -> WalkConfig {
        WalkConfig {
            walks_per_node: if self.infer_walks > 0 {
                self.infer_walks
            } else {
                self.walks_per_node
            },
            walk_length: if self.infer_length > 0 {
                self.infer_length
            } else {
                self.walk_length
            },
        }
    }

    pub fn protocol_spec(&self, feat_dim: usize) -> ProtocolSpec {
        ProtocolSpec {
            method: self.method,
            task: self.task,
            train: self.train_config(feat_dim),
            unseen_ratio: self.unseen_ratio,
            hide_fraction: self.hide_fraction,
            lp_unseen_edges_allow: self.lp_unseen_edges_allow,
            edge_feature: self.edge_feature,
            probe: ProbeConfig {
                lr: self.probe_lr,
                epochs: self.probe_epochs,
            },
            infer_walk: self.infer_walk(),
            pair_mode: self.pair_mode,
            threads: self.threads,
        }
    }

    /// Structural validation; dataset-dependent checks happen later.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_config(1)
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.lr <= 0.0 || self.probe_lr <= 0.0 {
            return Err(ConfigError::Invalid("learning rates must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.negatives == 0 {
            return Err(ConfigError::Invalid(
                "epochs, batch_size, and negatives must be >= 1".into(),
            ));
        }
        if self.walks_per_node == 0 || self.walk_length == 0 {
            return Err(ConfigError::Invalid(
                "sampling.walks and sampling.length must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.unseen_ratio) || self.unseen_ratio == 0.0 {
            return Err(ConfigError::Invalid(
                "eval.unseen_ratio must be in (0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.hide_fraction) || self.hide_fraction == 0.0 {
            return Err(ConfigError::Invalid(
                "eval.hide_fraction must be in (0, 1)".into(),
            ));
        }
        if self.repeats == 0 || self.threads == 0 {
            return Err(ConfigError::Invalid(
                "eval.repeats and threads must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
