//! Integration tests running the `disco` binary end to end against
//! temporary run directories.

use std::path::PathBuf;
use std::process::{Command, Output};

use disco_core::data::{synthetic_clustered_corpus, SyntheticSpec};

fn disco() -> Command {
    Command::new(env!("CARGO_BIN_EXE_disco"))
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    labels: PathBuf,
    rates: PathBuf,
}

fn workspace(vocabs: usize, seed: u64) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (text, labels) = synthetic_clustered_corpus(&SyntheticSpec::new(vocabs, 6_000, seed));
    let corpus = root.join("corpus.txt");
    std::fs::write(&corpus, &text).unwrap();
    let labels_path = root.join("labels.txt");
    let label_text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&labels_path, label_text).unwrap();
    let rates = root.join("rates.tsv");
    std::fs::write(&rates, "RTX4090\t0.35\nA100\t2.28\n").unwrap();
    Workspace {
        _dir: dir,
        root,
        corpus,
        labels: labels_path,
        rates,
    }
}

fn write_config(ws: &Workspace, name: &str, experts: usize, with_labels: bool) -> PathBuf {
    let top_k = experts.min(2);
    let labels_line = if with_labels {
        format!("labels = {:?}\n", ws.labels.display().to_string())
    } else {
        String::new()
    };
    let config = format!(
        r#"corpus = {corpus:?}
run_root = {run_root:?}
rates = {rates:?}
{labels_line}
[model]
vocab_size = 256
d_model = 16
n_layers = 1
n_heads = 2
d_ff = 16
num_experts = {experts}
top_k = {top_k}
max_seq_len = 16

[training]
seed = 5
submodel_steps = 3
finetune_steps = 3
batch_size = 2
seq_len = 12
eval_every = 2
eval_max_tokens = 200
kmeans_restarts = 2
"#,
        corpus = ws.corpus.display().to_string(),
        run_root = ws.root.join("runs").display().to_string(),
        rates = ws.rates.display().to_string(),
        labels_line = labels_line,
        experts = experts,
        top_k = top_k,
    );
    let path = ws.root.join(name);
    std::fs::write(&path, config).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

#[test]
fn partition_is_deterministic_and_prints_purity() {
    let ws = workspace(2, 11);
    let config = write_config(&ws, "cfg.toml", 2, true);
    let out_a = ws.root.join("part_a");
    let out_b = ws.root.join("part_b");

    let a = run(disco().args([
        "partition",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]));
    assert_eq!(
        code(&a),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&a.stderr)
    );
    let b = run(disco().args([
        "partition",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]));
    assert_eq!(code(&b), 0);

    let manifest_a = std::fs::read(out_a.join("shards.tsv")).unwrap();
    let manifest_b = std::fs::read(out_b.join("shards.tsv")).unwrap();
    assert_eq!(manifest_a, manifest_b, "manifest must be byte-identical");
    assert!(out_a.join("scatter.csv").exists());

    let text = stdout(&a);
    assert!(text.contains("cluster 0:"), "{text}");
    let purity_line = text
        .lines()
        .find(|l| l.starts_with("purity:"))
        .expect("purity printed when labels are configured");
    let purity: f64 = purity_line
        .trim_start_matches("purity:")
        .trim()
        .parse()
        .unwrap();
    assert!(purity >= 0.99, "purity {purity}");
}

#[test]
fn partition_single_cluster_holds_every_line() {
    let ws = workspace(2, 13);
    let config = write_config(&ws, "cfg.toml", 1, false);
    let out = ws.root.join("part");
    let result = run(disco().args([
        "partition",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code(&result), 0);
    let manifest = std::fs::read_to_string(out.join("shards.tsv")).unwrap();
    let nonblank = std::fs::read_to_string(&ws.corpus)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count();
    let sentence_rows = manifest
        .lines()
        .filter(|l| l.starts_with("sentence\t"))
        .count();
    assert_eq!(sentence_rows, nonblank);
    assert!(manifest
        .lines()
        .filter(|l| l.starts_with("sentence\t"))
        .all(|l| l.ends_with("\t0")));
}

#[test]
fn missing_corpus_is_input_error() {
    let ws = workspace(2, 15);
    let config = write_config(&ws, "cfg.toml", 2, false);
    std::fs::remove_file(&ws.corpus).unwrap();
    let result = run(disco().args(["partition", "--config", config.to_str().unwrap()]));
    assert_eq!(code(&result), 2);
}

#[test]
fn unknown_config_key_is_rejected_before_work() {
    let ws = workspace(2, 17);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let mut text = std::fs::read_to_string(&config).unwrap();
    text.push_str("\n[training_extra]\nmystery = 1\n");
    std::fs::write(&config, text).unwrap();
    let result = run(disco().args(["partition", "--config", config.to_str().unwrap()]));
    assert_eq!(code(&result), 2);
    let err = String::from_utf8_lossy(&result.stderr).into_owned();
    assert!(err.contains("config"), "{err}");
}

#[test]
fn train_disco_leaves_full_run_tree() {
    let ws = workspace(2, 19);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let out = ws.root.join("disco_run");
    let result = run(disco().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "disco",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(
        code(&result),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    for file in [
        "config.snapshot.toml",
        "shards.tsv",
        "submodel_0.ckpt",
        "submodel_0.meta.json",
        "submodel_1.ckpt",
        "merged.ckpt",
        "final.ckpt",
        "merge_report.tsv",
        "report_submodel_0.csv",
        "report_submodel_1.csv",
        "report_finetune.csv",
        "summary.json",
        "status.json",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
}

#[test]
fn train_full_leaves_one_checkpoint_and_one_report() {
    let ws = workspace(2, 21);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let out = ws.root.join("full_run");
    let result = run(disco().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "full",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code(&result), 0);
    let checkpoints: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".ckpt"))
        .collect();
    assert_eq!(checkpoints.len(), 1);
    let reports: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            let n = e.file_name().to_string_lossy().into_owned();
            n.starts_with("report_") && n.ends_with(".csv")
        })
        .collect();
    assert_eq!(reports.len(), 1);
    assert!(out.join("report_full.csv").exists());
}

#[test]
fn resubmitting_a_completed_run_refuses_without_force() {
    let ws = workspace(2, 23);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let env_root = ws.root.join("envruns");
    let base_args = [
        "train",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "disco",
    ];
    let first = run(disco()
        .args(base_args)
        .env("DISCO_RUN_ROOT", env_root.to_str().unwrap()));
    assert_eq!(
        code(&first),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&first.stderr)
    );
    // The run landed under DISCO_RUN_ROOT.
    assert!(env_root.read_dir().unwrap().next().is_some());

    let second = run(disco()
        .args(base_args)
        .env("DISCO_RUN_ROOT", env_root.to_str().unwrap()));
    assert_eq!(code(&second), 3, "resubmission must refuse");

    let forced = run(disco()
        .args(base_args)
        .arg("--force")
        .env("DISCO_RUN_ROOT", env_root.to_str().unwrap()));
    assert_eq!(code(&forced), 0);
}

#[test]
fn cost_replay_prints_published_rows_and_savings() {
    let out = run(disco().args(["cost", "--replay-table4"]));
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for cost in ["6.8704", "3.3424", "10.9116", "6.7388", "8.1316", "15.1352"] {
        assert!(text.contains(cost), "missing total {cost} in:\n{text}");
    }
    for pct in ["69.5", "51.8", "63.5", "47.6", "52.2", "52.9"] {
        assert!(text.contains(pct), "missing savings {pct} in:\n{text}");
    }
}

#[test]
fn cost_from_run_dirs_emits_report_curves_and_savings() {
    let ws = workspace(2, 25);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let disco_dir = ws.root.join("disco_run");
    let full_dir = ws.root.join("full_run");
    assert_eq!(
        code(&run(disco().args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--mode",
            "disco",
            "--out",
            disco_dir.to_str().unwrap(),
        ]))),
        0
    );
    assert_eq!(
        code(&run(disco().args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--mode",
            "full",
            "--out",
            full_dir.to_str().unwrap(),
        ]))),
        0
    );
    let out_dir = ws.root.join("cost_out");
    let result = run(disco().args([
        "cost",
        disco_dir.to_str().unwrap(),
        full_dir.to_str().unwrap(),
        "--rates",
        ws.rates.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(
        code(&result),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert!(out_dir.join("cost_report.tsv").exists());
    assert!(out_dir.join("cost_report.json").exists());
    assert!(out_dir.join("curve_disco.csv").exists());
    assert!(out_dir.join("curve_full.csv").exists());
    assert!(stdout(&result).contains("savings:"));
    let structured = std::fs::read_to_string(out_dir.join("cost_report.json")).unwrap();
    assert!(structured.contains("savings_vs_baseline"), "{structured}");

    // Curve endpoint equals the reported staged total.
    let report = std::fs::read_to_string(out_dir.join("cost_report.tsv")).unwrap();
    let staged_line = report
        .lines()
        .find(|l| l.contains("\tdisco\t"))
        .expect("staged row present");
    let total: f64 = staged_line.split('\t').nth(6).unwrap().parse().unwrap();
    let curve = std::fs::read_to_string(out_dir.join("curve_disco.csv")).unwrap();
    let last = curve.lines().last().unwrap();
    let endpoint: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(
        (endpoint - total).abs() < 1e-3,
        "curve endpoint {endpoint} vs total {total}"
    );
}

#[test]
fn cost_without_reports_is_input_error() {
    let ws = workspace(2, 27);
    let empty = ws.root.join("empty_run");
    std::fs::create_dir_all(&empty).unwrap();
    let result = run(disco().args([
        "cost",
        empty.to_str().unwrap(),
        "--rates",
        ws.rates.to_str().unwrap(),
    ]));
    assert_eq!(code(&result), 2);
}

#[test]
fn ablate_partition_emits_two_curves_differing_only_in_mode() {
    let ws = workspace(2, 29);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let out = ws.root.join("ablate_run");
    let result = run(disco().args([
        "ablate",
        "--config",
        config.to_str().unwrap(),
        "--which",
        "partition",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(
        code(&result),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert!(out.join("finetune_kmeans.csv").exists());
    assert!(out.join("finetune_random.csv").exists());

    // The paired snapshots differ only in the partition mode.
    let a = std::fs::read_to_string(out.join("kmeans/config.snapshot.toml")).unwrap();
    let b = std::fs::read_to_string(out.join("random/config.snapshot.toml")).unwrap();
    let diff: Vec<(&str, &str)> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(diff.len(), 1, "diff lines: {diff:?}");
    assert!(diff[0].0.contains("partition_mode"));
    assert!(diff[0].0.contains("kmeans") && diff[0].1.contains("random"));
}

#[test]
fn ablate_experts_emits_one_tree_per_expert_count() {
    let ws = workspace(4, 31);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let out = ws.root.join("ablate_e");
    let result = run(disco().args([
        "ablate",
        "--config",
        config.to_str().unwrap(),
        "--which",
        "experts",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(
        code(&result),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    for e in [2, 4] {
        assert!(out.join(format!("e{e}/final.ckpt")).exists());
        assert!(out.join(format!("finetune_e{e}.csv")).exists());
    }
}

#[test]
fn numerical_abort_exits_4_with_failure_record() {
    let ws = workspace(2, 35);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let mut text = std::fs::read_to_string(&config).unwrap();
    text.push_str("finetune_peak_lr = 1e18\nwarmup_ratio = 0.0\n");
    std::fs::write(&config, text).unwrap();
    let out = ws.root.join("blowup");
    let result = run(disco().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "full",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(
        code(&result),
        4,
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let status = std::fs::read_to_string(out.join("status.json")).unwrap();
    assert!(status.contains("failed"), "{status}");
    assert!(status.contains("non-finite"), "{status}");
}

#[test]
fn invalid_model_config_is_rejected() {
    let ws = workspace(2, 33);
    let config = write_config(&ws, "cfg.toml", 2, false);
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("seq_len = 12", "seq_len = 99");
    std::fs::write(&config, text).unwrap();
    let result = run(disco().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "disco",
    ]));
    assert_eq!(code(&result), 2);
}
