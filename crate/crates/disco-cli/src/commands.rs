//! Subcommand implementations. Every command resolves one run directory,
//! writes its artifacts there, and reports through a stable exit-code
//! contract: 0 success, 2 input error, 3 refused overwrite, 4 numerical
//! abort.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use disco_core::checkpoint::write_checkpoint;
use disco_core::cost::{
    curve_csv, emit_cost_curve, find_rate, phase_cost, read_rates, replay_report, round_dollars,
    savings, staged_totals, CostReport, Phase, PhaseRecord, StagedTotals,
};
use disco_core::data::{
    cluster_purity, embed_corpus, pca_project, scatter_csv, shards_from_assignments,
    write_manifest, Corpus, KmeansOptions,
};
use disco_core::model::init_params;
use disco_core::pipeline::{
    run_ablation_experts, run_ablation_partition, run_disco, run_full_baseline, BaselineArtifacts,
    CommStats, DiscoArtifacts, PartitionMode, RunConfig,
};
use disco_core::scalar::{DType, Scalar};
use disco_core::seeding::{derive_seed, rng_for, Stream};
use disco_core::store::ParamStore;
use disco_core::Error;

use crate::config::{ConfigFile, CostSection};

/// Command failure with its contract exit code.
pub struct Fail {
    pub code: u8,
    pub message: String,
}

impl Fail {
    pub fn refused(message: impl Into<String>) -> Fail {
        Fail {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        let code = match e {
            Error::Numeric(_) => 4,
            _ => 2,
        };
        Fail {
            code,
            message: e.to_string(),
        }
    }
}

pub type CmdResult = Result<(), Fail>;

/// Prints a line, ignoring a closed stdout (e.g. piping into `head`).
fn say(text: impl AsRef<str>) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", text.as_ref());
}

/// Prints preformatted text verbatim, ignoring a closed stdout.
fn say_raw(text: impl AsRef<str>) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_ref().as_bytes());
}

#[derive(Debug, Serialize, Deserialize)]
struct StatusRecord {
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exit_code: Option<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub dtype: String,
    pub workers: usize,
    pub s_wall_times_s: Vec<f64>,
    pub s_max_wall_s: f64,
    pub f_wall_s: f64,
    pub final_loss: f64,
    pub final_ppl: f64,
    pub s_device: String,
    pub f_device: String,
    pub f_devices: usize,
    pub comm: Option<CommStats>,
}

fn write_status(dir: &Path, record: &StatusRecord) {
    if let Ok(json) = serde_json::to_string_pretty(record) {
        let _ = std::fs::write(dir.join("status.json"), json);
    }
}

fn completed(dir: &Path) -> bool {
    let path = dir.join("status.json");
    let Ok(text) = std::fs::read_to_string(path) else {
        return false;
    };
    serde_json::from_str::<StatusRecord>(&text)
        .map(|s| s.status == "ok")
        .unwrap_or(false)
}

/// Output root precedence: --out parent is explicit, else DISCO_RUN_ROOT,
/// else the config's run_root, else ./runs.
fn run_root(cfg: &ConfigFile) -> PathBuf {
    if let Ok(root) = std::env::var("DISCO_RUN_ROOT") {
        if !root.is_empty() {
            return PathBuf::from(root);
        }
    }
    cfg.run_root
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// One run directory per invocation, named by config fingerprint plus
/// timestamp. A completed run with the same fingerprint refuses to rerun
/// without --force.
fn resolve_run_dir(
    cfg: &ConfigFile,
    tag: &str,
    out: Option<&Path>,
    force: bool,
    check_refusal: bool,
) -> Result<PathBuf, Fail> {
    let fingerprint = cfg.fingerprint(tag)?;
    if let Some(dir) = out {
        if check_refusal && completed(dir) && !force {
            return Err(Fail::refused(format!(
                "run directory {} already holds a completed run; pass --force to redo",
                dir.display()
            )));
        }
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        return Ok(dir.to_path_buf());
    }
    let root = run_root(cfg);
    std::fs::create_dir_all(&root).map_err(Error::from)?;
    if check_refusal && !force {
        let prefix = format!("{tag}-{fingerprint}-");
        if let Ok(entries) = std::fs::read_dir(&root) {
            for entry in entries.flatten() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.starts_with(&prefix) && completed(&entry.path()) {
                    return Err(Fail::refused(format!(
                        "completed run {} exists for this configuration; pass --force to redo",
                        entry.path().display()
                    )));
                }
            }
        }
    }
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut dir = root.join(format!("{tag}-{fingerprint}-{stamp}"));
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = root.join(format!("{tag}-{fingerprint}-{stamp}-{n}"));
    }
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    Ok(dir)
}

fn apply_seed(cfg: &mut ConfigFile, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
}

fn load_labels(path: &Path, expected: usize) -> Result<Vec<usize>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read labels {}: {e}", path.display())))?;
    let labels: Vec<usize> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad label line `{l}`")))
        })
        .collect::<Result<_, _>>()?;
    if labels.len() != expected {
        return Err(Error::Input(format!(
            "{} labels for {} sentences",
            labels.len(),
            expected
        )));
    }
    Ok(labels)
}

// ---- partition -------------------------------------------------------------------

pub fn cmd_partition(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    force: bool,
) -> CmdResult {
    let mut cfg = ConfigFile::load(config_path)?;
    apply_seed(&mut cfg, seed);
    let run = cfg.to_run_config();
    match run.dtype {
        DType::F32 => partition_impl::<f32>(&cfg, &run, out, force),
        DType::F64 => partition_impl::<f64>(&cfg, &run, out, force),
    }
}

fn partition_impl<T: Scalar>(
    cfg: &ConfigFile,
    run: &RunConfig,
    out: Option<&Path>,
    force: bool,
) -> CmdResult {
    let corpus = Corpus::load(&cfg.corpus)?;
    let dir = resolve_run_dir(cfg, "partition", out, force, false)?;
    std::fs::write(dir.join("config.snapshot.toml"), cfg.snapshot()?).map_err(Error::from)?;

    let mut rng = rng_for(run.seed, Stream::Init);
    let store: ParamStore<T> = init_params(&run.model, &mut rng)?;
    let embed = store.shared("shared/embed/tok")?;
    let vectors = embed_corpus(&corpus, embed)?;
    let points: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();

    let (assignments, centroids) = match run.partition_mode {
        PartitionMode::Kmeans => {
            let result = disco_core::data::kmeans(
                &points,
                run.model.num_experts,
                derive_seed(run.seed, Stream::Partition),
                KmeansOptions {
                    restarts: run.kmeans_restarts,
                    ..KmeansOptions::default()
                },
            )?;
            (result.assignments, result.centroids)
        }
        PartitionMode::Random => {
            let shards = disco_core::data::partition_random(
                &corpus,
                embed,
                run.model.num_experts,
                derive_seed(run.seed, Stream::Partition),
            )?;
            let mut assignments = vec![0usize; corpus.len()];
            for s in &shards {
                for &m in &s.members {
                    assignments[m] = s.cluster_id;
                }
            }
            let centroids = shards.iter().map(|s| s.centroid.clone()).collect();
            (assignments, centroids)
        }
    };
    let shards = shards_from_assignments(&assignments, &centroids);
    write_manifest(&dir.join("shards.tsv"), &shards)?;

    let pca = pca_project(&points, 2)?;
    if pca.degenerate {
        say("warning: sentence vectors are degenerate; scatter is all zeros");
    }
    std::fs::write(
        dir.join("scatter.csv"),
        scatter_csv(&pca.coords, &assignments),
    )
    .map_err(Error::from)?;

    for shard in &shards {
        say(format!(
            "cluster {}: {} sentences",
            shard.cluster_id,
            shard.sample_count()
        ));
    }
    if let Some(labels_path) = &cfg.labels {
        let labels = load_labels(labels_path, corpus.len())?;
        say(format!("purity: {:.4}", cluster_purity(&shards, &labels)));
    }
    write_status(
        &dir,
        &StatusRecord {
            status: "ok".to_string(),
            error: None,
            exit_code: None,
        },
    );
    say(format!("run directory: {}", dir.display()));
    Ok(())
}

// ---- train ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainMode {
    Disco,
    Full,
}

pub fn cmd_train(
    config_path: &Path,
    mode: TrainMode,
    seed: Option<u64>,
    out: Option<&Path>,
    force: bool,
) -> CmdResult {
    let mut cfg = ConfigFile::load(config_path)?;
    apply_seed(&mut cfg, seed);
    let run = cfg.to_run_config();
    let tag = match mode {
        TrainMode::Disco => "train-disco",
        TrainMode::Full => "train-full",
    };
    let dir = resolve_run_dir(&cfg, tag, out, force, true)?;
    let outcome = match run.dtype {
        DType::F32 => train_impl::<f32>(&cfg, &run, mode, &dir),
        DType::F64 => train_impl::<f64>(&cfg, &run, mode, &dir),
    };
    if let Err(fail) = &outcome {
        write_status(
            &dir,
            &StatusRecord {
                status: "failed".to_string(),
                error: Some(fail.message.clone()),
                exit_code: Some(fail.code),
            },
        );
    }
    outcome
}

fn train_impl<T: Scalar>(
    cfg: &ConfigFile,
    run: &RunConfig,
    mode: TrainMode,
    dir: &Path,
) -> CmdResult {
    let corpus = Corpus::load(&cfg.corpus)?;
    std::fs::write(dir.join("config.snapshot.toml"), cfg.snapshot()?).map_err(Error::from)?;
    match mode {
        TrainMode::Disco => {
            let artifacts = run_disco::<T>(run, &corpus)?;
            write_disco_artifacts(dir, &artifacts, run, &cfg.cost)?;
            let last = artifacts.reports.last().and_then(|r| r.points.last());
            if let Some(p) = last {
                say(format!(
                    "fine-tune final: loss {:.4}, ppl {:.2} ({} submodel workers)",
                    p.loss,
                    p.ppl,
                    artifacts.checkpoints.len()
                ));
            }
        }
        TrainMode::Full => {
            let artifacts = run_full_baseline::<T>(run, &corpus)?;
            write_baseline_artifacts(dir, &artifacts, run, &cfg.cost)?;
            if let Some(p) = artifacts.report.points.last() {
                say(format!(
                    "full training final: loss {:.4}, ppl {:.2}",
                    p.loss, p.ppl
                ));
            }
        }
    }
    write_status(
        dir,
        &StatusRecord {
            status: "ok".to_string(),
            error: None,
            exit_code: None,
        },
    );
    say(format!("run directory: {}", dir.display()));
    Ok(())
}

pub fn write_disco_artifacts<T: Scalar>(
    dir: &Path,
    artifacts: &DiscoArtifacts<T>,
    run: &RunConfig,
    cost: &CostSection,
) -> Result<(), Error> {
    write_manifest(&dir.join("shards.tsv"), &artifacts.shards)?;
    for ck in &artifacts.checkpoints {
        ck.save(&dir.join(format!("submodel_{}", ck.expert_index)))?;
    }
    write_checkpoint(&dir.join("merged.ckpt"), &artifacts.merged_store.flatten())?;
    write_checkpoint(&dir.join("final.ckpt"), &artifacts.final_store.flatten())?;
    std::fs::write(dir.join("merge_report.tsv"), &artifacts.merge_report)?;
    for report in &artifacts.reports {
        let name = match report.worker {
            Some(k) => format!("report_submodel_{k}.csv"),
            None => "report_finetune.csv".to_string(),
        };
        report.write_csv(&dir.join(name))?;
    }
    let last = artifacts
        .reports
        .last()
        .and_then(|r| r.points.last())
        .ok_or_else(|| Error::Structural("fine-tune report is empty".to_string()))?;
    let summary = RunSummary {
        mode: "disco".to_string(),
        seed: run.seed,
        dtype: T::DTYPE.to_string(),
        workers: artifacts.checkpoints.len(),
        s_wall_times_s: artifacts.cost_inputs.submodel_wall_times_s.clone(),
        s_max_wall_s: artifacts.cost_inputs.submodel_max_wall_s,
        f_wall_s: artifacts.cost_inputs.finetune_wall_s,
        final_loss: last.loss,
        final_ppl: last.ppl,
        s_device: cost.s_device.clone(),
        f_device: cost.f_device.clone(),
        f_devices: cost.f_devices,
        comm: Some(artifacts.comm),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Format(format!("summary encode: {e}")))?;
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

pub fn write_baseline_artifacts<T: Scalar>(
    dir: &Path,
    artifacts: &BaselineArtifacts<T>,
    run: &RunConfig,
    cost: &CostSection,
) -> Result<(), Error> {
    write_checkpoint(&dir.join("final.ckpt"), &artifacts.final_store.flatten())?;
    artifacts.report.write_csv(&dir.join("report_full.csv"))?;
    let last = artifacts
        .report
        .points
        .last()
        .ok_or_else(|| Error::Structural("baseline report is empty".to_string()))?;
    let summary = RunSummary {
        mode: "full".to_string(),
        seed: run.seed,
        dtype: T::DTYPE.to_string(),
        workers: 0,
        s_wall_times_s: Vec::new(),
        s_max_wall_s: 0.0,
        f_wall_s: artifacts.wall_time_s,
        final_loss: last.loss,
        final_ppl: last.ppl,
        s_device: cost.s_device.clone(),
        f_device: cost.f_device.clone(),
        f_devices: cost.f_devices,
        comm: None,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Format(format!("summary encode: {e}")))?;
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

// ---- ablate ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblateKind {
    Partition,
    Experts,
}

pub fn cmd_ablate(
    config_path: &Path,
    which: AblateKind,
    seed: Option<u64>,
    out: Option<&Path>,
    force: bool,
) -> CmdResult {
    let mut cfg = ConfigFile::load(config_path)?;
    apply_seed(&mut cfg, seed);
    let run = cfg.to_run_config();
    let tag = match which {
        AblateKind::Partition => "ablate-partition",
        AblateKind::Experts => "ablate-experts",
    };
    let dir = resolve_run_dir(&cfg, tag, out, force, true)?;
    let outcome = match run.dtype {
        DType::F32 => ablate_impl::<f32>(&cfg, &run, which, &dir),
        DType::F64 => ablate_impl::<f64>(&cfg, &run, which, &dir),
    };
    if let Err(fail) = &outcome {
        write_status(
            &dir,
            &StatusRecord {
                status: "failed".to_string(),
                error: Some(fail.message.clone()),
                exit_code: Some(fail.code),
            },
        );
    }
    outcome
}

fn ablate_impl<T: Scalar>(
    cfg: &ConfigFile,
    run: &RunConfig,
    which: AblateKind,
    dir: &Path,
) -> CmdResult {
    let corpus = Corpus::load(&cfg.corpus)?;
    std::fs::write(dir.join("config.snapshot.toml"), cfg.snapshot()?).map_err(Error::from)?;
    match which {
        AblateKind::Partition => {
            let (km, rd) = run_ablation_partition::<T>(run, &corpus)?;
            for (name, artifacts, mode) in [
                ("kmeans", &km, PartitionMode::Kmeans),
                ("random", &rd, PartitionMode::Random),
            ] {
                let sub = dir.join(name);
                std::fs::create_dir_all(&sub).map_err(Error::from)?;
                let mut sub_cfg = cfg.clone();
                sub_cfg.training.partition_mode = mode;
                std::fs::write(sub.join("config.snapshot.toml"), sub_cfg.snapshot()?)
                    .map_err(Error::from)?;
                let mut sub_run = run.clone();
                sub_run.partition_mode = mode;
                write_disco_artifacts(&sub, artifacts, &sub_run, &cfg.cost)?;
                let ft = artifacts
                    .reports
                    .last()
                    .ok_or_else(|| Error::Structural("missing fine-tune report".to_string()))?;
                ft.write_csv(&dir.join(format!("finetune_{name}.csv")))?;
                if let Some(p) = ft.points.last() {
                    say(format!("{name}: fine-tune final loss {:.4}", p.loss));
                }
            }
        }
        AblateKind::Experts => {
            let runs = run_ablation_experts::<T>(run, &corpus, &cfg.ablate.expert_counts)?;
            for (e, artifacts) in &runs {
                let sub = dir.join(format!("e{e}"));
                std::fs::create_dir_all(&sub).map_err(Error::from)?;
                let mut sub_cfg = cfg.clone();
                sub_cfg.model.num_experts = *e;
                sub_cfg.model.top_k = sub_cfg.model.top_k.min(*e);
                std::fs::write(sub.join("config.snapshot.toml"), sub_cfg.snapshot()?)
                    .map_err(Error::from)?;
                let mut sub_run = run.clone();
                sub_run.model.num_experts = *e;
                sub_run.model.top_k = sub_run.model.top_k.min(*e);
                write_disco_artifacts(&sub, artifacts, &sub_run, &cfg.cost)?;
                let ft = artifacts
                    .reports
                    .last()
                    .ok_or_else(|| Error::Structural("missing fine-tune report".to_string()))?;
                ft.write_csv(&dir.join(format!("finetune_e{e}.csv")))?;
                if let Some(p) = ft.points.last() {
                    say(format!("E={e}: fine-tune final loss {:.4}", p.loss));
                }
            }
        }
    }
    write_status(
        dir,
        &StatusRecord {
            status: "ok".to_string(),
            error: None,
            exit_code: None,
        },
    );
    say(format!("run directory: {}", dir.display()));
    Ok(())
}

// ---- cost -----------------------------------------------------------------------

fn read_summary(dir: &Path) -> Result<RunSummary, Error> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Input(format!("missing run summary {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("summary decode: {e}")))
}

const SECONDS_PER_HOUR: f64 = 3600.0;

pub fn cmd_cost(
    runs: &[PathBuf],
    rates_path: Option<&Path>,
    out: Option<&Path>,
    replay_table4: bool,
) -> CmdResult {
    if replay_table4 {
        let report = replay_report()?;
        say_raw(&report);
        for row in disco_core::cost::replay_reference_table()? {
            say(format!(
                "savings {} {}: {:.1}% (published {:.1}%)",
                row.reference.model,
                row.reference.dataset,
                row.savings_fraction * 100.0,
                row.reference.published_savings_pct
            ));
        }
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(Error::from)?;
            std::fs::write(dir.join("cost_report.tsv"), report).map_err(Error::from)?;
        }
        return Ok(());
    }
    if runs.is_empty() {
        return Err(Fail::from(Error::Input(
            "cost needs at least one run directory (or --replay-table4)".to_string(),
        )));
    }
    let rates_path = rates_path.ok_or_else(|| {
        Fail::from(Error::Input(
            "cost needs --rates pointing at a device rate file".to_string(),
        ))
    })?;
    let rates = read_rates(rates_path)?;

    let mut staged: Option<(PathBuf, RunSummary)> = None;
    let mut full: Option<(PathBuf, RunSummary)> = None;
    for dir in runs {
        let summary = read_summary(dir)?;
        match summary.mode.as_str() {
            "disco" => staged = Some((dir.clone(), summary)),
            "full" => full = Some((dir.clone(), summary)),
            other => {
                return Err(Fail::from(Error::Input(format!(
                    "run {} has unknown mode `{other}`",
                    dir.display()
                ))))
            }
        }
    }

    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| runs[0].clone());
    std::fs::create_dir_all(&out_dir).map_err(Error::from)?;

    let mut report = String::from(
        "run\tmode\ts_cost\ts_time_h\tf_cost\tf_time_h\ttotal_cost\ttotal_time_h\ts_cost_exact\n",
    );
    let mut staged_total: Option<f64> = None;
    let mut staged_totals_record: Option<StagedTotals> = None;
    let mut full_total: Option<f64> = None;

    if let Some((dir, s)) = &staged {
        let s_rate = find_rate(&rates, &s.s_device)?;
        let f_rate = find_rate(&rates, &s.f_device)?;
        let s_time_h = s.s_max_wall_s / SECONDS_PER_HOUR;
        let f_time_h = s.f_wall_s / SECONDS_PER_HOUR;
        let totals = staged_totals(s_time_h, s.workers, s_rate, f_time_h, s.f_devices, f_rate)?;
        // Per-worker exact billing, as an alternate column.
        let exact: f64 = s
            .s_wall_times_s
            .iter()
            .map(|t| t / SECONDS_PER_HOUR * s_rate.dollars_per_hour)
            .sum();
        report.push_str(&format!(
            "{}\tdisco\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            dir.display(),
            round_dollars(totals.s_cost),
            s_time_h,
            round_dollars(totals.f_cost),
            f_time_h,
            round_dollars(totals.total_cost),
            totals.total_time_h,
            round_dollars(exact),
        ));
        staged_total = Some(totals.total_cost);
        staged_totals_record = Some(totals);
        let phases = vec![
            PhaseRecord::new(Phase::S, s_time_h, s.workers, s_rate.clone())?,
            PhaseRecord::new(Phase::F, f_time_h, s.f_devices, f_rate.clone())?,
        ];
        let curve = emit_cost_curve(&phases, phase_curve_resolution(&phases))?;
        std::fs::write(out_dir.join("curve_disco.csv"), curve_csv(&curve)).map_err(Error::from)?;
    }
    if let Some((dir, s)) = &full {
        let f_rate = find_rate(&rates, &s.f_device)?;
        let time_h = s.f_wall_s / SECONDS_PER_HOUR;
        let cost = phase_cost(time_h, f_rate, s.f_devices)?;
        report.push_str(&format!(
            "{}\tfull\t\t\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t\n",
            dir.display(),
            round_dollars(cost),
            time_h,
            round_dollars(cost),
            time_h,
        ));
        full_total = Some(cost);
        let phases = vec![PhaseRecord::new(
            Phase::Full,
            time_h,
            s.f_devices,
            f_rate.clone(),
        )?];
        let curve = emit_cost_curve(&phases, phase_curve_resolution(&phases))?;
        std::fs::write(out_dir.join("curve_full.csv"), curve_csv(&curve)).map_err(Error::from)?;
    }
    if let (Some(st), Some(fu)) = (staged_total, full_total) {
        let frac = savings(fu, st)?;
        report.push_str(&format!("savings\t{:.1}%\n", frac * 100.0));
        say(format!("savings: {:.1}%", frac * 100.0));
    }
    if let Some(totals) = staged_totals_record {
        let structured = CostReport::new(totals, full_total)?;
        let json = serde_json::to_string_pretty(&structured)
            .map_err(|e| Error::Format(format!("cost report encode: {e}")))?;
        std::fs::write(out_dir.join("cost_report.json"), json).map_err(Error::from)?;
    }
    say_raw(&report);
    std::fs::write(out_dir.join("cost_report.tsv"), report).map_err(Error::from)?;
    Ok(())
}

fn phase_curve_resolution(phases: &[PhaseRecord]) -> f64 {
    let total: f64 = phases.iter().map(|p| p.wall_time_h).sum();
    (total / 100.0).max(1e-9)
}
