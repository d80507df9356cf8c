//! Sensitivity of classification quality to the number of candidate
//! embeddings K, at toy scale.
//!
//!     cargo run --example sweep_candidates

use cade::eval::{run_protocol_repeats, summarize};
use cade::synth;

fn main() {
    let g = synth::two_cliques(10, 6);
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    let feats = dir.path().join("features.txt");
    g.write(&edges, &feats).unwrap();

    let mut cfg = cade::config::RunConfig::default();
    for (k, v) in [
        ("model.d", "8"),
        ("model.sizes", "4,3"),
        ("model.activation", "sigmoid"),
        ("model.normalize_output", "true"),
        ("train.lr", "0.01"),
        ("train.epochs", "5"),
        ("train.batch_size", "40"),
        ("train.negatives", "4"),
        ("train.pairs_per_epoch", "150"),
        ("sampling.walks", "10"),
        ("sampling.length", "4"),
        ("infer.walks", "5"),
        ("eval.task", "lp"),
        ("eval.method", "cade-ms"),
        ("eval.unseen_ratio", "0.2"),
        ("eval.probe_epochs", "150"),
        ("eval.repeats", "2"),
    ] {
        cfg.apply(k, v).unwrap();
    }

    println!("K\tmean AUC\tmean AP\t(link prediction, 2 seeds)");
    for k in [1usize, 2, 5, 10] {
        cfg.apply("model.K", &k.to_string()).unwrap();
        let spec = cfg.protocol_spec(g.feature_dim());
        let reports = run_protocol_repeats(&g, &spec, cfg.seed, cfg.repeats).unwrap();
        let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auc).collect();
        let aps: Vec<f64> = reports.iter().filter_map(|r| r.ap).collect();
        println!(
            "{k}\t{:.4}\t{:.4}",
            summarize(&aucs).mean,
            summarize(&aps).mean
        );
    }
}
