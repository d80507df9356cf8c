//! End-to-end tests of the `cade` binary: subcommands, exit codes, and
//! artifact files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cade::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cade"))
}

struct Dataset {
    _dir: tempfile::TempDir,
    root: PathBuf,
    edges: PathBuf,
    features: PathBuf,
    labels: PathBuf,
}

fn toy_dataset() -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let g = synth::two_cliques(4, 3);
    let edges = root.join("edges.txt");
    let features = root.join("features.txt");
    let labels = root.join("labels.txt");
    g.write(&edges, &features).unwrap();
    let label_text: String = (0..8)
        .map(|u| format!("{u} {}\n", usize::from(u >= 4)))
        .collect();
    std::fs::write(&labels, label_text).unwrap();
    Dataset {
        _dir: dir,
        root,
        edges,
        features,
        labels,
    }
}

fn tiny_args(ds: &Dataset, out: &Path) -> Vec<String> {
    [
        format!("paths.edges={}", ds.edges.display()),
        format!("paths.features={}", ds.features.display()),
        format!("paths.labels={}", ds.labels.display()),
        format!("paths.out={}", out.display()),
        "model.K=2".into(),
        "model.d=4".into(),
        "model.sizes=2,2".into(),
        "model.activation=sigmoid".into(),
        "model.normalize_output=true".into(),
        "train.epochs=2".into(),
        "train.batch_size=8".into(),
        "train.negatives=2".into(),
        "train.pairs_per_epoch=16".into(),
        "sampling.walks=3".into(),
        "sampling.length=3".into(),
        "eval.unseen_ratio=0.25".into(),
        "eval.probe_epochs=60".into(),
    ]
    .iter()
    .flat_map(|kv| ["--set".to_string(), kv.clone()])
    .collect()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_feature_file_exits_3_and_names_the_path() {
    let ds = toy_dataset();
    let out = ds.root.join("out");
    let mut args = tiny_args(&ds, &out);
    // point the features at a nonexistent file
    let missing = ds.root.join("nope.txt");
    args.push("--set".into());
    args.push(format!("paths.features={}", missing.display()));
    let result = bin().arg("train").args(&args).output().unwrap();
    assert_eq!(result.status.code(), Some(3), "{}", stderr_of(&result));
    assert!(stderr_of(&result).contains("nope.txt"));
}

#[test]
fn unknown_config_key_exits_2() {
    let result = bin()
        .args(["train", "--set", "model.owls=3"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    assert!(stderr_of(&result).contains("model.owls"));
}

#[test]
fn invalid_value_exits_2() {
    let result = bin()
        .args(["train", "--set", "model.K=many"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn train_echoes_the_resolved_config_and_is_reproducible() {
    let ds = toy_dataset();
    let out = ds.root.join("out");
    let run = || {
        bin()
            .arg("train")
            .args(tiny_args(&ds, &out))
            .args(["--mode", "ma", "--K", "10", "--seed", "5"])
            .output()
            .unwrap()
    };
    let first = run();
    assert_eq!(first.status.code(), Some(0), "{}", stderr_of(&first));
    let text = stdout_of(&first);
    assert!(text.contains("train.mode = ma"), "echo missing mode: {text}");
    assert!(text.contains("model.K = 10"), "echo missing K: {text}");
    assert!(out.join("checkpoint/manifest.txt").exists());
    assert!(out.join("train.log").exists());
    assert!(out.join("config_echo.txt").exists());

    let hash_line = |o: &Output| {
        stdout_of(o)
            .lines()
            .find(|l| l.starts_with("checkpoint = "))
            .unwrap()
            .to_string()
    };
    let second = run();
    assert_eq!(hash_line(&first), hash_line(&second));
}

#[test]
fn embed_writes_one_row_per_node_with_full_coverage() {
    let ds = toy_dataset();
    let out = ds.root.join("out");
    let train = bin()
        .arg("train")
        .args(tiny_args(&ds, &out))
        .output()
        .unwrap();
    assert_eq!(train.status.code(), Some(0), "{}", stderr_of(&train));

    let embed = bin()
        .arg("embed")
        .args(tiny_args(&ds, &out))
        .args(["--checkpoint".into(), out.join("checkpoint").display().to_string()])
        .output()
        .unwrap();
    assert_eq!(embed.status.code(), Some(0), "{}", stderr_of(&embed));

    let sidecar = std::fs::read_to_string(out.join("embeddings.tsv")).unwrap();
    let rows: Vec<&str> = sidecar
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .collect();
    assert_eq!(rows.len(), 8, "one sidecar row per node");
    // connected graph: every node covered by at least one pair
    for row in rows {
        let coverage: u32 = row.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!(coverage >= 1);
    }
}

#[test]
fn embed_rejects_a_checkpoint_with_mismatched_dims() {
    let ds = toy_dataset();
    let out = ds.root.join("out");
    let train = bin()
        .arg("train")
        .args(tiny_args(&ds, &out))
        .output()
        .unwrap();
    assert_eq!(train.status.code(), Some(0));

    // widen the feature file to three columns
    let wide = ds.root.join("wide.txt");
    let text: String = (0..8).map(|u| format!("{u} 1 1\n")).collect();
    std::fs::write(&wide, text).unwrap();
    let mut args = tiny_args(&ds, &out);
    args.push("--set".into());
    args.push(format!("paths.features={}", wide.display()));
    let embed = bin()
        .arg("embed")
        .args(&args)
        .args(["--checkpoint".into(), out.join("checkpoint").display().to_string()])
        .output()
        .unwrap();
    assert_eq!(embed.status.code(), Some(2), "{}", stderr_of(&embed));
    assert!(stderr_of(&embed).contains("feat_dim"));
}

#[test]
fn eval_protocol_writes_a_report() {
    let ds = toy_dataset();
    let out = ds.root.join("out");
    let result = bin()
        .arg("eval")
        .args(tiny_args(&ds, &out))
        .args(["--task", "nc", "--method", "raw-features"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0), "{}", stderr_of(&result));
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("micro_f1 = "), "report: {report}");
    assert!(report.contains("method = raw-features"));
    assert!(stdout_of(&result).contains("summary.micro_f1"));
}

#[test]
fn eval_scores_precomputed_embeddings() {
    let ds = toy_dataset();
    let out = ds.root.join("out");
    let train = bin()
        .arg("train")
        .args(tiny_args(&ds, &out))
        .output()
        .unwrap();
    assert_eq!(train.status.code(), Some(0));
    let embed = bin()
        .arg("embed")
        .args(tiny_args(&ds, &out))
        .args(["--checkpoint".into(), out.join("checkpoint").display().to_string()])
        .output()
        .unwrap();
    assert_eq!(embed.status.code(), Some(0));

    let result = bin()
        .arg("eval")
        .args(tiny_args(&ds, &out))
        .args([
            "--task".into(),
            "nc".into(),
            "--embeddings".into(),
            out.join("embeddings.mat").display().to_string(),
            "--sidecar".into(),
            out.join("embeddings.tsv").display().to_string(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0), "{}", stderr_of(&result));
    assert!(stdout_of(&result).contains("micro_f1 = "));
}

#[test]
fn gradcheck_passes_and_reports_per_check_lines() {
    let result = bin().arg("gradcheck").output().unwrap();
    assert_eq!(result.status.code(), Some(0), "{}", stderr_of(&result));
    let text = stdout_of(&result);
    assert!(text.contains("sagb_pair_loss"));
    assert!(text.contains("ma_biattention_loss"));
    assert!(text.contains("stop_gradient_claim"));
    assert!(text.contains("worst = "));
}

#[test]
fn gradcheck_with_unreachable_tolerance_exits_4() {
    let result = bin()
        .args(["gradcheck", "--tolerance", "1e-18"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(4));
}

#[test]
fn sweep_emits_one_row_per_value() {
    let ds = toy_dataset();
    let out = ds.root.join("out");
    let result = bin()
        .arg("sweep")
        .args(tiny_args(&ds, &out))
        .args([
            "--key",
            "model.K",
            "--values",
            "1,5,10,15",
            "--set",
            "eval.method=raw-features",
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0), "{}", stderr_of(&result));
    let table = std::fs::read_to_string(out.join("sweep.txt")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4, "table: {table}");
    for (row, k) in rows.iter().zip(["1", "5", "10", "15"]) {
        assert!(row.starts_with(&format!("{k}\t")));
    }
}

#[test]
fn dump_walks_writes_the_debug_file() {
    let ds = toy_dataset();
    let out = ds.root.join("out");
    let walks = ds.root.join("walks.txt");
    let result = bin()
        .arg("train")
        .args(tiny_args(&ds, &out))
        .args(["--dump-walks".into(), walks.display().to_string()])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0), "{}", stderr_of(&result));
    let text = std::fs::read_to_string(&walks).unwrap();
    assert!(!text.is_empty());
    // every line is a space-separated list of node ids
    for line in text.lines() {
        assert!(line.split_whitespace().all(|t| t.parse::<usize>().is_ok()));
    }
}
