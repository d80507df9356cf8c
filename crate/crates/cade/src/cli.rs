//! Command implementations behind the thin `cade` binary.
//!
//! Exit codes: 2 for configuration problems, 3 for data problems, 4 for
//! numeric aborts. Every run prints and writes a resolved-config echo so
//! experiments are reproducible from their artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::eval::{
    link_prediction, node_classification, run_protocol_repeats, summarize, EvalError, MetricReport,
    ProbeConfig, Task,
};
use crate::graph::{load_graph, split_edges_for_lp, split_unseen_nodes, Graph, GraphError};
use crate::infer::{generate_embeddings, EmbeddingMatrix, InferError};
use crate::model::{Model, ModelError};
use crate::rng::substream;
use crate::sampling::{random_walks, write_walks};
use crate::train::{fit, TrainError};
use crate::verify::{run_full_gradcheck, stop_gradient_claim};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteLoss { .. } => {
                CliError::Numeric(e.to_string())
            }
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<InferError> for CliError {
    fn from(e: InferError) -> Self {
        match e {
            InferError::FeatureDimMismatch { .. } => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ProvenanceMismatch | EvalError::SizeMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            EvalError::Train(t) => t.into(),
            EvalError::Infer(i) => i.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_dataset(cfg: &RunConfig) -> Result<Graph, CliError> {
    let edges = cfg
        .edges_path
        .as_ref()
        .ok_or_else(|| CliError::Config("paths.edges is required".into()))?;
    let features = cfg
        .features_path
        .as_ref()
        .ok_or_else(|| CliError::Config("paths.features is required".into()))?;
    Ok(load_graph(edges, features, cfg.labels_path.as_deref())?)
}

fn echo_and_persist(cfg: &RunConfig) -> Result<(), CliError> {
    let echo = cfg.echo();
    print!("{echo}");
    write_file(&cfg.out_dir.join("config_echo.txt"), &echo)
}

/// `train`: load, split off unseen nodes, fit on the training view, write
/// the checkpoint, epoch log, and config echo.
pub fn cmd_train(cfg: &RunConfig, dump_walks: Option<&Path>) -> Result<(), CliError> {
    cfg.validate()?;
    echo_and_persist(cfg)?;
    let g = load_dataset(cfg)?;
    let split = split_unseen_nodes(&g, cfg.unseen_ratio, cfg.seed)?;
    let view = g.training_view(&split);

    if let Some(path) = dump_walks {
        let walk_seed: u64 = substream(cfg.seed, "epoch-walks/0").gen();
        let walks = random_walks(&view, &cfg.train_config(g.feature_dim()).walk, walk_seed)?;
        write_walks(path, &walks)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {} walks to {}", walks.len(), path.display());
    }

    let mut tcfg = cfg.train_config(g.feature_dim());
    tcfg.checkpoint_dir = Some(cfg.out_dir.join("checkpoint"));
    let (model, log) = fit(&view, &split.train_nodes, &tcfg)?;
    write_file(&cfg.out_dir.join("train.log"), &log.to_text())?;
    println!("checkpoint = {}", model.content_hash());
    println!(
        "final epoch loss = {}",
        log.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

/// `embed`: load a checkpoint, generate embeddings for every node of the
/// full graph, and write the matrix plus its sidecar.
pub fn cmd_embed(cfg: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    echo_and_persist(cfg)?;
    let g = load_dataset(cfg)?;
    let model = Model::load_checkpoint(checkpoint)?;
    if model.cfg.feat_dim != g.feature_dim() {
        return Err(CliError::Config(format!(
            "checkpoint manifest expects feat_dim {}, dataset has {}",
            model.cfg.feat_dim,
            g.feature_dim()
        )));
    }
    let embed_seed: u64 = substream(cfg.seed, "embed").gen();
    let emb = generate_embeddings(
        &g,
        &model,
        &cfg.infer_walk(),
        cfg.pair_mode,
        embed_seed,
        cfg.threads,
    )?;
    let mat_path = cfg.out_dir.join("embeddings.mat");
    let sidecar_path = cfg.out_dir.join("embeddings.tsv");
    emb.save(&mat_path, &sidecar_path)?;
    let covered = emb.coverage.iter().filter(|&&c| c > 0).count();
    println!(
        "embedded {} nodes ({} via pairs, {} fallback) into {}",
        emb.num_nodes(),
        covered,
        emb.num_nodes() - covered,
        mat_path.display()
    );
    Ok(())
}

fn summary_lines(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let collect = |f: &dyn Fn(&MetricReport) -> Option<f64>| -> Vec<f64> {
        reports.iter().filter_map(f).collect()
    };
    for (name, values) in [
        ("micro_f1", collect(&|r| r.micro_f1)),
        ("auc", collect(&|r| r.auc)),
        ("ap", collect(&|r| r.ap)),
    ] {
        if !values.is_empty() {
            let s = summarize(&values);
            out.push_str(&format!(
                "summary.{name} = {} +- {} over {} runs\n",
                s.mean, s.stddev, s.runs
            ));
        }
    }
    out
}

/// `eval` without precomputed embeddings: run the full protocol
/// (split, train, embed, evaluate) for `eval.repeats` seeds.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    echo_and_persist(cfg)?;
    let g = load_dataset(cfg)?;
    let spec = cfg.protocol_spec(g.feature_dim());
    let reports = run_protocol_repeats(&g, &spec, cfg.seed, cfg.repeats)?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.render());
    }
    text.push_str(&summary_lines(&reports));
    write_file(&cfg.out_dir.join("report.txt"), &text)?;
    print!("{}", summary_lines(&reports));
    Ok(())
}

/// `eval --embeddings`: score precomputed embeddings on the task's split,
/// regenerated from the same seed.
pub fn cmd_eval_embeddings(
    cfg: &RunConfig,
    mat_path: &Path,
    sidecar_path: &Path,
) -> Result<(), CliError> {
    cfg.validate()?;
    echo_and_persist(cfg)?;
    let g = load_dataset(cfg)?;
    let emb = EmbeddingMatrix::load(mat_path, sidecar_path)?;
    if emb.num_nodes() != g.num_nodes() {
        return Err(CliError::Config(format!(
            "embeddings have {} rows, dataset has {} nodes",
            emb.num_nodes(),
            g.num_nodes()
        )));
    }
    let probe = ProbeConfig {
        lr: cfg.probe_lr,
        epochs: cfg.probe_epochs,
    };
    let mut lines = Vec::new();
    match cfg.task {
        Task::NodeClassification => {
            let labels = g
                .labels()
                .ok_or_else(|| CliError::Data("dataset has no labels".into()))?;
            let split = split_unseen_nodes(&g, cfg.unseen_ratio, cfg.seed)?;
            let f1 = node_classification(&emb, labels, &split, &probe)?;
            lines.push(format!("micro_f1 = {f1}"));
        }
        Task::LinkPrediction => {
            let edge_split = split_edges_for_lp(&g, cfg.hide_fraction, cfg.seed, None)?;
            let (auc_v, ap_v) = link_prediction(&emb, &edge_split, &probe, cfg.edge_feature)?;
            lines.push(format!("auc = {auc_v}"));
            lines.push(format!("ap = {ap_v}"));
        }
    }
    let text = lines.join("\n") + "\n";
    write_file(&cfg.out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// `gradcheck`: kernel ops, the base-encoder pair loss, and the
/// multi-aggregate bi-attention loss against central finite differences,
/// plus the exact stop-gradient assertion. Nonzero exit if any check
/// exceeds the tolerance.
pub fn cmd_gradcheck(seed: u64, tolerance: f64) -> Result<(), CliError> {
    let (checks, worst) = run_full_gradcheck(seed);
    for c in &checks {
        let status = if c.report.max_rel_error < tolerance {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{status:4} {:<24} max rel error {:.3e}",
            c.name, c.report.max_rel_error
        );
    }
    let sg = stop_gradient_claim(seed);
    let sg_ok = sg.neg_term_attention_grad_max == 0.0 && sg.full_loss_fd_max > 1e-8;
    println!(
        "{} {:<24} neg-term dA = {:e}, full-loss fd max = {:.3e}",
        if sg_ok { "ok  " } else { "FAIL" },
        "stop_gradient_claim",
        sg.neg_term_attention_grad_max,
        sg.full_loss_fd_max
    );
    println!("worst = {worst:.3e} (tolerance {tolerance:.1e})");
    if worst >= tolerance {
        return Err(CliError::Numeric(format!(
            "gradient check failed: worst relative error {worst:.3e} >= {tolerance:.1e}"
        )));
    }
    if !sg_ok {
        return Err(CliError::Numeric(
            "stop-gradient claim failed: negative term leaks gradient into the attention vector"
                .into(),
        ));
    }
    Ok(())
}

/// `sweep`: rerun the evaluation protocol for each value of one config
/// key, emitting one table row per value.
pub fn cmd_sweep(cfg: &RunConfig, key: &str, values: &[String]) -> Result<(), CliError> {
    cfg.validate()?;
    echo_and_persist(cfg)?;
    let g = load_dataset(cfg)?;
    let mut table = String::from("# value\tmicro_f1\tauc\tap\n");
    for value in values {
        let mut swept = cfg.clone();
        swept.apply(key, value)?;
        swept.validate()?;
        let spec = swept.protocol_spec(g.feature_dim());
        let reports = run_protocol_repeats(&g, &spec, swept.seed, swept.repeats)?;
        let cell = |f: &dyn Fn(&MetricReport) -> Option<f64>| -> String {
            let vals: Vec<f64> = reports.iter().filter_map(f).collect();
            if vals.is_empty() {
                "-".to_string()
            } else {
                format!("{}", summarize(&vals).mean)
            }
        };
        let row = format!(
            "{value}\t{}\t{}\t{}\n",
            cell(&|r| r.micro_f1),
            cell(&|r| r.auc),
            cell(&|r| r.ap)
        );
        print!("{row}");
        table.push_str(&row);
    }
    write_file(&cfg.out_dir.join("sweep.txt"), &table)?;
    Ok(())
}

/// Apply `--set key=value` style overrides on top of a loaded config.
pub fn apply_overrides(cfg: &mut RunConfig, sets: &[String]) -> Result<(), CliError> {
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.apply(k.trim(), v.trim())?;
    }
    Ok(())
}

/// Build the effective config: file (if any), then overrides, flags last.
pub fn resolve_config(
    config_path: Option<&PathBuf>,
    sets: &[String],
) -> Result<RunConfig, CliError> {
    let mut cfg = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, sets)?;
    Ok(cfg)
}
