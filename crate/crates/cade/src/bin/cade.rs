//! Thin command-line front end; all logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cade::cli::{
    self, apply_overrides, cmd_embed, cmd_eval, cmd_eval_embeddings, cmd_gradcheck, cmd_sweep,
    cmd_train, resolve_config, CliError,
};

#[derive(Parser)]
#[command(name = "cade", about = "Context-aware dual encoding for inductive node embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set model.K=5 (repeatable; wins
    /// over the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shortcut for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Shortcut for --set paths.out=DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, extra: &[String]) -> Result<cade::config::RunConfig, CliError> {
        let mut cfg = resolve_config(self.config.as_ref(), &self.sets)?;
        apply_overrides(&mut cfg, extra)?;
        if let Some(seed) = self.seed {
            cfg.apply("seed", &seed.to_string())
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(out) = &self.out {
            cfg.apply("paths.out", &out.display().to_string())
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus the epoch log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Shortcut for --set train.mode=ms|ma.
        #[arg(long)]
        mode: Option<String>,
        /// Shortcut for --set model.K=N.
        #[arg(long = "K")]
        candidates: Option<usize>,
        /// Write the first epoch's walks to this file for debugging.
        #[arg(long)]
        dump_walks: Option<PathBuf>,
    },
    /// Generate embeddings for the whole graph from a checkpoint.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shortcut for --set infer.walks=N (0 reuses the training count).
        #[arg(long)]
        infer_walks: Option<usize>,
    },
    /// Run the evaluation protocol (nc or lp), or score precomputed
    /// embeddings.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Shortcut for --set eval.task=nc|lp.
        #[arg(long)]
        task: Option<String>,
        /// Shortcut for --set eval.method=....
        #[arg(long)]
        method: Option<String>,
        /// Shortcut for --set eval.repeats=N.
        #[arg(long)]
        repeats: Option<usize>,
        /// Precomputed embedding matrix (needs --sidecar).
        #[arg(long, requires = "sidecar")]
        embeddings: Option<PathBuf>,
        /// Sidecar written next to the embedding matrix.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Fail if any check's worst relative error reaches this value.
        #[arg(long, default_value_t = cli::GRADCHECK_TOLERANCE)]
        tolerance: f64,
    },
    /// Rerun the evaluation protocol for each value of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config key to vary, e.g. model.K.
        #[arg(long)]
        key: String,
        /// Comma-separated values to sweep over.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

fn run() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Train {
            common,
            mode,
            candidates,
            dump_walks,
        } => {
            let mut extra = Vec::new();
            if let Some(m) = mode {
                extra.push(format!("train.mode={m}"));
            }
            if let Some(k) = candidates {
                extra.push(format!("model.K={k}"));
            }
            let cfg = common.resolve(&extra)?;
            cmd_train(&cfg, dump_walks.as_deref())
        }
        Command::Embed {
            common,
            checkpoint,
            infer_walks,
        } => {
            let mut extra = Vec::new();
            if let Some(n) = infer_walks {
                extra.push(format!("infer.walks={n}"));
            }
            let cfg = common.resolve(&extra)?;
            cmd_embed(&cfg, &checkpoint)
        }
        Command::Eval {
            common,
            task,
            method,
            repeats,
            embeddings,
            sidecar,
        } => {
            let mut extra = Vec::new();
            if let Some(t) = task {
                extra.push(format!("eval.task={t}"));
            }
            if let Some(m) = method {
                extra.push(format!("eval.method={m}"));
            }
            if let Some(r) = repeats {
                extra.push(format!("eval.repeats={r}"));
            }
            let cfg = common.resolve(&extra)?;
            match (embeddings, sidecar) {
                (Some(mat), Some(side)) => cmd_eval_embeddings(&cfg, &mat, &side),
                _ => cmd_eval(&cfg),
            }
        }
        Command::Gradcheck { common, tolerance } => {
            let cfg = common.resolve(&[])?;
            cmd_gradcheck(cfg.seed, tolerance)
        }
        Command::Sweep {
            common,
            key,
            values,
        } => {
            let cfg = common.resolve(&[])?;
            cmd_sweep(&cfg, &key, &values)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
