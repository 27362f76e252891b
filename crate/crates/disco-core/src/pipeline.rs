//! End-to-end staged training: broadcast the shared backbone, train one
//! dense submodel per expert on its clustered shard with zero cross-worker
//! communication, merge the checkpoints, fine-tune globally, and record
//! per-phase reports and wall times for cost accounting. Also hosts the
//! full-parameter baseline and the two ablation runners.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{partition_dataset, partition_random, Corpus, DataShard, KmeansOptions};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::merge::{
    merge_checkpoints, merge_report, merge_shared, GateInit, MergeWeights, SubmodelCheckpoint,
};
use crate::model::{
    extract_submodel, forward, harvest_grads, init_params, stream_nll, MoEConfig, ModelParams,
    Routing,
};
use crate::optim::{AdamW, AdamWConfig, LrSchedule};
use crate::scalar::{DType, Scalar};
use crate::seeding::{derive_seed, rng_for, Stream};
use crate::store::{DenseSubmodel, ParamStore, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Kmeans,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateInitMode {
    ColumnConcatRandom,
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerExecution {
    Sequential,
    Concurrent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: MoEConfig,
    pub seed: u64,
    pub submodel_steps: u64,
    pub finetune_steps: u64,
    /// Matches the staged run's combined budget unless overridden.
    pub baseline_steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub submodel_lr: f64,
    pub submodel_weight_decay: f64,
    pub finetune_peak_lr: f64,
    pub finetune_weight_decay: f64,
    pub warmup_ratio: f64,
    pub partition_mode: PartitionMode,
    pub gate_init: GateInitMode,
    pub worker_execution: WorkerExecution,
    pub eval_every: u64,
    /// Held-out fraction of the corpus used for every phase's evaluation.
    pub eval_fraction: f64,
    /// Evaluation stream is truncated to this many tokens to bound cost.
    pub eval_max_tokens: usize,
    pub kmeans_restarts: usize,
    pub dtype: DType,
}

impl RunConfig {
    pub fn new(model: MoEConfig, seed: u64) -> Self {
        let submodel_steps = 300;
        let finetune_steps = 300;
        RunConfig {
            model,
            seed,
            submodel_steps,
            finetune_steps,
            baseline_steps: submodel_steps + finetune_steps,
            batch_size: 8,
            seq_len: 64,
            submodel_lr: 1e-4,
            submodel_weight_decay: 0.0,
            finetune_peak_lr: 3e-4,
            finetune_weight_decay: 0.01,
            warmup_ratio: 0.03,
            partition_mode: PartitionMode::Kmeans,
            gate_init: GateInitMode::ColumnConcatRandom,
            worker_execution: WorkerExecution::Concurrent,
            eval_every: 50,
            eval_fraction: 0.10,
            eval_max_tokens: 4096,
            kmeans_restarts: 4,
            dtype: DType::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::Config(
                "batch and sequence must be positive".to_string(),
            ));
        }
        if self.seq_len > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "seq_len {} exceeds model max_seq_len {}",
                self.seq_len, self.model.max_seq_len
            )));
        }
        if !(0.0..0.9).contains(&self.eval_fraction) {
            return Err(Error::Config(format!(
                "eval_fraction {} outside [0, 0.9)",
                self.eval_fraction
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".to_string()));
        }
        if self.submodel_lr <= 0.0 || self.finetune_peak_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".to_string()));
        }
        Ok(())
    }

    /// Per-worker seed: hash of the global seed and the worker index.
    pub fn worker_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, Stream::Worker(k))
    }
}

// ---- reporting -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub loss: f64,
    pub ppl: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub phase: String,
    pub worker: Option<usize>,
    pub points: Vec<EvalPoint>,
    pub steps: u64,
    pub wall_time_s: f64,
}

impl TrainingReport {
    fn push(&mut self, point: EvalPoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.step <= last.step {
                return Err(Error::Structural(format!(
                    "report steps must strictly increase: {} then {}",
                    last.step, point.step
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("step,loss,ppl,wall_time_s\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{:?},{:?},{:.3}\n",
                p.step, p.loss, p.ppl, p.wall_time_s
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv())?;
        Ok(())
    }
}

// ---- zero-communication instrumentation ------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Orchestrator,
    Worker(usize),
}

/// Counts state accesses by (accessor, owner) class. Workers own their
/// shard and their model replica; the orchestrator owns broadcast data
/// (initial parameters, evaluation stream). A worker touching another
/// worker's state would land in `cross_worker`.
#[derive(Debug, Default)]
pub struct CommLedger {
    cross_worker: AtomicU64,
    own_state: AtomicU64,
    broadcast_reads: AtomicU64,
    orchestrator_collects: AtomicU64,
}

impl CommLedger {
    pub fn record(&self, accessor: Actor, owner: Actor) {
        match (accessor, owner) {
            (Actor::Worker(a), Actor::Worker(b)) if a != b => {
                self.cross_worker.fetch_add(1, Ordering::Relaxed);
            }
            (Actor::Worker(_), Actor::Worker(_)) => {
                self.own_state.fetch_add(1, Ordering::Relaxed);
            }
            (Actor::Worker(_), Actor::Orchestrator) => {
                self.broadcast_reads.fetch_add(1, Ordering::Relaxed);
            }
            (Actor::Orchestrator, _) => {
                self.orchestrator_collects.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn stats(&self) -> CommStats {
        CommStats {
            cross_worker: self.cross_worker.load(Ordering::Relaxed),
            own_state: self.own_state.load(Ordering::Relaxed),
            broadcast_reads: self.broadcast_reads.load(Ordering::Relaxed),
            orchestrator_collects: self.orchestrator_collects.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CommStats {
    /// Reads or writes of another worker's state during the submodel phase;
    /// the method guarantees exactly zero.
    pub cross_worker: u64,
    pub own_state: u64,
    pub broadcast_reads: u64,
    pub orchestrator_collects: u64,
}

// ---- batching ---------------------------------------------------------------------

/// Deterministic epoch batcher: reshuffles the sentence order each epoch
/// with its own rng, concatenates to a token stream, and deals consecutive
/// `[batch, seq + 1]` windows.
struct Batcher<'c> {
    corpus: &'c Corpus,
    members: Vec<usize>,
    rng: rand_chacha::ChaCha8Rng,
    stream: Vec<u32>,
    cursor: usize,
    epoch: u64,
    batch: usize,
    window: usize,
}

impl<'c> Batcher<'c> {
    fn new(corpus: &'c Corpus, members: Vec<usize>, seed: u64, batch: usize, seq: usize) -> Self {
        use rand_chacha::rand_core::SeedableRng;
        let mut b = Batcher {
            corpus,
            members,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            stream: Vec::new(),
            cursor: 0,
            epoch: 0,
            batch,
            window: seq + 1,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        let mut order = self.members.clone();
        order.shuffle(&mut self.rng);
        self.stream = self.corpus.stream(&order);
        self.cursor = 0;
        self.epoch += 1;
    }

    fn tile_to(&mut self, need: usize) {
        let mut tiled = Vec::with_capacity(need);
        while tiled.len() < need {
            tiled.extend_from_slice(&self.stream);
        }
        self.stream = tiled;
    }

    /// (inputs, targets, batch id). Streams shorter than one window tile
    /// themselves rather than starving the step loop.
    fn next_batch(&mut self) -> (Vec<u32>, Vec<u32>, String) {
        let need = self.batch * self.window;
        if self.stream.len() < need {
            self.tile_to(need);
        }
        if self.cursor + need > self.stream.len() {
            self.reshuffle();
            if self.stream.len() < need {
                self.tile_to(need);
            }
        }
        let id = format!("epoch{}:{}", self.epoch, self.cursor / need);
        let mut inputs = Vec::with_capacity(need - self.batch);
        let mut targets = Vec::with_capacity(need - self.batch);
        for b in 0..self.batch {
            let w =
                &self.stream[self.cursor + b * self.window..self.cursor + (b + 1) * self.window];
            inputs.extend_from_slice(&w[..self.window - 1]);
            targets.extend_from_slice(&w[1..]);
        }
        self.cursor += need;
        (inputs, targets, id)
    }
}

// ---- training loops ------------------------------------------------------------------

fn eval_model<T: Scalar, P: ModelParams<T>>(
    params: &P,
    cfg: &MoEConfig,
    eval_stream: &[u32],
    run: &RunConfig,
    routing: Routing,
) -> Result<(f64, f64)> {
    let (total, count) = stream_nll(
        params,
        cfg,
        eval_stream,
        run.batch_size,
        run.seq_len,
        routing,
    )?;
    let mean = total / count as f64;
    Ok((mean, mean.exp()))
}

struct PhaseSpec<'a> {
    label: String,
    worker: Option<usize>,
    steps: u64,
    schedule: LrSchedule,
    weight_decay: f64,
    routing: Routing,
    eval_stream: &'a [u32],
}

/// Shared step loop for submodel training, fine-tuning, and the baseline.
/// Aborts with a (phase, step, batch) diagnostic on a non-finite loss.
fn train_phase<T: Scalar, P: ModelParams<T> + Params<T>>(
    params: &mut P,
    cfg: &MoEConfig,
    run: &RunConfig,
    phase: &PhaseSpec<'_>,
    batcher: &mut Batcher<'_>,
    mut on_batch: impl FnMut(),
) -> Result<TrainingReport> {
    let mut report = TrainingReport {
        phase: phase.label.clone(),
        worker: phase.worker,
        points: Vec::new(),
        steps: phase.steps,
        wall_time_s: 0.0,
    };
    let start = Instant::now();
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: phase.weight_decay,
        ..AdamWConfig::default()
    })?;
    let (eval_loss, eval_ppl) = eval_model(params, cfg, phase.eval_stream, run, phase.routing)?;
    report.push(EvalPoint {
        step: 0,
        loss: eval_loss,
        ppl: eval_ppl,
        wall_time_s: start.elapsed().as_secs_f64(),
    })?;
    for step in 1..=phase.steps {
        let (inputs, targets, batch_id) = batcher.next_batch();
        on_batch();
        let lr = phase.schedule.lr_at(step)?;
        let mut g = Graph::<T>::new();
        let out = forward(
            &mut g,
            params,
            cfg,
            &inputs,
            run.batch_size,
            run.seq_len,
            phase.routing,
            true,
        )?;
        let loss_node = g.cross_entropy(out.logits, &targets)?;
        let loss = g.data(loss_node)[0].to_f64();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss in phase `{}` at step {step}, batch {batch_id}",
                phase.label
            )));
        }
        g.backward(loss_node)?;
        harvest_grads(&g, &out.bindings, params)?;
        opt.step(params, lr)?;
        for (_, t) in params.params_mut() {
            t.zero_grad();
        }
        if step % run.eval_every == 0 || step == phase.steps {
            let (eval_loss, eval_ppl) =
                eval_model(params, cfg, phase.eval_stream, run, phase.routing)?;
            report.push(EvalPoint {
                step,
                loss: eval_loss,
                ppl: eval_ppl,
                wall_time_s: start.elapsed().as_secs_f64(),
            })?;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

type WorkerOutcome<T> = Result<(SubmodelCheckpoint<T>, TrainingReport)>;

/// Trains the dense submodel for expert `k` on its shard only, constant
/// learning rate, never touching any other worker's state.
pub fn train_submodel<T: Scalar>(
    k: usize,
    corpus: &Corpus,
    shard: &DataShard,
    broadcast: DenseSubmodel<T>,
    run: &RunConfig,
    eval_stream: &[u32],
    ledger: &CommLedger,
) -> WorkerOutcome<T> {
    if shard.members.is_empty() {
        return Err(Error::Input(format!("shard {k} is empty")));
    }
    let worker_seed = run.worker_seed(k);
    let mut sub = broadcast;
    ledger.record(Actor::Worker(k), Actor::Orchestrator); // broadcast receipt
    let mut batcher = Batcher::new(
        corpus,
        shard.members.clone(),
        worker_seed,
        run.batch_size,
        run.seq_len,
    );
    let phase = PhaseSpec {
        label: format!("submodel_{k}"),
        worker: Some(k),
        steps: run.submodel_steps,
        schedule: LrSchedule::Constant {
            peak_lr: run.submodel_lr,
        },
        weight_decay: run.submodel_weight_decay,
        routing: Routing::Forced(0),
        eval_stream,
    };
    let start = Instant::now();
    let report = train_phase(&mut sub, &run.model, run, &phase, &mut batcher, || {
        ledger.record(Actor::Worker(k), Actor::Worker(k));
    })?;
    let wall = start.elapsed().as_secs_f64();
    let checkpoint = SubmodelCheckpoint::from_submodel(
        &sub,
        shard.sample_count(),
        worker_seed,
        run.submodel_steps,
        wall,
    );
    Ok((checkpoint, report))
}

// ---- corpus split ----------------------------------------------------------------

/// (train corpus, evaluation token stream). The split is a deterministic
/// seeded shuffle; the eval stream is shared read-only by every phase.
pub fn split_corpus(corpus: &Corpus, run: &RunConfig) -> Result<(Corpus, Vec<u32>)> {
    if corpus.is_empty() {
        return Err(Error::Input("empty corpus".to_string()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    use rand::seq::SliceRandom;
    let mut rng = rng_for(run.seed, Stream::EvalSplit);
    order.shuffle(&mut rng);
    let eval_n = ((corpus.len() as f64 * run.eval_fraction).round() as usize)
        .clamp(1, corpus.len().saturating_sub(1).max(1));
    let mut eval_idx: Vec<usize> = order[..eval_n].to_vec();
    eval_idx.sort_unstable();
    let mut train_idx: Vec<usize> = order[eval_n..].to_vec();
    train_idx.sort_unstable();
    if train_idx.is_empty() {
        return Err(Error::Input("corpus too small to split".to_string()));
    }
    let train = Corpus {
        sentences: train_idx
            .iter()
            .map(|&i| corpus.sentences[i].clone())
            .collect(),
    };
    let mut eval_stream = corpus.stream(&eval_idx);
    let cap = run.eval_max_tokens.max(run.seq_len + 2);
    eval_stream.truncate(cap);
    Ok((train, eval_stream))
}

// ---- staged pipeline ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostInputs {
    pub submodel_wall_times_s: Vec<f64>,
    pub submodel_max_wall_s: f64,
    pub finetune_wall_s: f64,
}

impl CostInputs {
    fn from_times(times: Vec<f64>, finetune_wall_s: f64) -> Self {
        let max = times.iter().copied().fold(0.0, f64::max);
        CostInputs {
            submodel_wall_times_s: times,
            submodel_max_wall_s: max,
            finetune_wall_s,
        }
    }
}

pub struct DiscoArtifacts<T: Scalar> {
    pub final_store: ParamStore<T>,
    /// Snapshot of the assembled store before any fine-tune step.
    pub merged_store: ParamStore<T>,
    pub checkpoints: Vec<SubmodelCheckpoint<T>>,
    pub shards: Vec<DataShard>,
    pub gamma: MergeWeights,
    /// E submodel reports followed by one fine-tune report.
    pub reports: Vec<TrainingReport>,
    pub merge_report: String,
    pub cost_inputs: CostInputs,
    pub comm: CommStats,
}

/// The full staged run: partition, train E submodels in parallel with zero
/// inter-worker communication, merge, fine-tune on the whole training
/// corpus under the cosine schedule.
pub fn run_disco<T: Scalar>(run: &RunConfig, corpus: &Corpus) -> Result<DiscoArtifacts<T>> {
    run.validate()?;
    let e = run.model.num_experts;
    let (train_corpus, eval_stream) = split_corpus(corpus, run)?;

    let mut init_rng = rng_for(run.seed, Stream::Init);
    let store: ParamStore<T> = init_params(&run.model, &mut init_rng)?;

    let embed = store.shared("shared/embed/tok")?;
    let shards = match run.partition_mode {
        PartitionMode::Kmeans => partition_dataset(
            &train_corpus,
            embed,
            e,
            derive_seed(run.seed, Stream::Partition),
            KmeansOptions {
                restarts: run.kmeans_restarts,
                ..KmeansOptions::default()
            },
        )?,
        PartitionMode::Random => partition_random(
            &train_corpus,
            embed,
            e,
            derive_seed(run.seed, Stream::Partition),
        )?,
    };
    if let Some(bad) = shards.iter().find(|s| s.members.is_empty()) {
        return Err(Error::Input(format!(
            "partition produced an empty shard {}",
            bad.cluster_id
        )));
    }

    // Broadcast: every worker starts from a deep copy of the global shared
    // parameters plus its own expert.
    let ledger = CommLedger::default();
    let broadcasts: Vec<DenseSubmodel<T>> = (0..e)
        .map(|k| extract_submodel(&store, k))
        .collect::<Result<_>>()?;
    for sub in &broadcasts {
        for (path, t) in &sub.shared {
            if !t.bit_eq(store.shared(path)?) {
                return Err(Error::Structural(format!(
                    "broadcast integrity violated at `{path}`"
                )));
            }
        }
    }

    let mut results: Vec<Option<WorkerOutcome<T>>> = (0..e).map(|_| None).collect();
    match run.worker_execution {
        WorkerExecution::Sequential => {
            for (k, sub) in broadcasts.into_iter().enumerate() {
                results[k] = Some(train_submodel(
                    k,
                    &train_corpus,
                    &shards[k],
                    sub,
                    run,
                    &eval_stream,
                    &ledger,
                ));
            }
        }
        WorkerExecution::Concurrent => {
            let slots: Vec<_> = broadcasts.into_iter().enumerate().collect();
            let outcomes: Vec<(usize, WorkerOutcome<T>)> = std::thread::scope(|scope| {
                let handles: Vec<_> = slots
                    .into_iter()
                    .map(|(k, sub)| {
                        let shard = &shards[k];
                        let train_ref = &train_corpus;
                        let eval_ref = &eval_stream;
                        let ledger_ref = &ledger;
                        scope.spawn(move || {
                            (
                                k,
                                train_submodel(k, train_ref, shard, sub, run, eval_ref, ledger_ref),
                            )
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join().unwrap_or_else(|_| {
                            (
                                usize::MAX,
                                Err(Error::Numeric("worker panicked".to_string())),
                            )
                        })
                    })
                    .collect()
            });
            for (k, outcome) in outcomes {
                if k == usize::MAX {
                    return Err(Error::Numeric("worker panicked".to_string()));
                }
                results[k] = Some(outcome);
            }
        }
    }

    let mut checkpoints = Vec::with_capacity(e);
    let mut reports = Vec::with_capacity(e + 1);
    for r in results.into_iter() {
        let (ck, report) = r.expect("all workers ran")?;
        checkpoints.push(ck);
        reports.push(report);
    }
    ledger.record(Actor::Orchestrator, Actor::Orchestrator); // barrier: collect

    let gate_init = match run.gate_init {
        GateInitMode::ColumnConcatRandom => GateInit::ColumnConcatRandom {
            seed: derive_seed(run.seed, Stream::GateInit),
        },
        GateInitMode::Centroid => GateInit::Centroid {
            centroids: shards.iter().map(|s| s.centroid.clone()).collect(),
        },
    };
    let (mut merged, gamma) = merge_checkpoints(&run.model, &checkpoints, &gate_init)?;
    let merged_store = merged.clone();
    let merge_rep = {
        let shared = merge_shared(&checkpoints, &gamma)?;
        merge_report(&gamma, &shared, &checkpoints)
    };

    // Global fine-tune over the full training corpus, fresh optimizer state.
    let all_members: Vec<usize> = (0..train_corpus.len()).collect();
    let mut batcher = Batcher::new(
        &train_corpus,
        all_members,
        derive_seed(run.seed, Stream::Finetune),
        run.batch_size,
        run.seq_len,
    );
    let phase = PhaseSpec {
        label: "finetune".to_string(),
        worker: None,
        steps: run.finetune_steps,
        schedule: LrSchedule::CosineWarmup {
            peak_lr: run.finetune_peak_lr,
            warmup_ratio: run.warmup_ratio,
            total_steps: run.finetune_steps.max(1),
        },
        weight_decay: run.finetune_weight_decay,
        routing: Routing::Learned,
        eval_stream: &eval_stream,
    };
    let ft_start = Instant::now();
    let ft_report = train_phase(&mut merged, &run.model, run, &phase, &mut batcher, || {})?;
    let ft_wall = ft_start.elapsed().as_secs_f64();
    reports.push(ft_report);

    let worker_times: Vec<f64> = checkpoints.iter().map(|c| c.wall_time_s).collect();
    Ok(DiscoArtifacts {
        final_store: merged,
        merged_store,
        checkpoints,
        shards,
        gamma,
        reports,
        merge_report: merge_rep,
        cost_inputs: CostInputs::from_times(worker_times, ft_wall),
        comm: ledger.stats(),
    })
}

pub struct BaselineArtifacts<T: Scalar> {
    pub final_store: ParamStore<T>,
    pub report: TrainingReport,
    pub wall_time_s: f64,
}

/// Full-parameter baseline: the complete MoE trained on the whole training
/// corpus with the cosine schedule, every expert and the gate updated each
/// step.
pub fn run_full_baseline<T: Scalar>(
    run: &RunConfig,
    corpus: &Corpus,
) -> Result<BaselineArtifacts<T>> {
    run.validate()?;
    let (train_corpus, eval_stream) = split_corpus(corpus, run)?;
    let mut init_rng = rng_for(run.seed, Stream::Init);
    let mut store: ParamStore<T> = init_params(&run.model, &mut init_rng)?;
    let all_members: Vec<usize> = (0..train_corpus.len()).collect();
    let mut batcher = Batcher::new(
        &train_corpus,
        all_members,
        derive_seed(run.seed, Stream::Baseline),
        run.batch_size,
        run.seq_len,
    );
    let phase = PhaseSpec {
        label: "full".to_string(),
        worker: None,
        steps: run.baseline_steps,
        schedule: LrSchedule::CosineWarmup {
            peak_lr: run.finetune_peak_lr,
            warmup_ratio: run.warmup_ratio,
            total_steps: run.baseline_steps.max(1),
        },
        weight_decay: run.finetune_weight_decay,
        routing: Routing::Learned,
        eval_stream: &eval_stream,
    };
    let start = Instant::now();
    let report = train_phase(&mut store, &run.model, run, &phase, &mut batcher, || {})?;
    let wall = start.elapsed().as_secs_f64();
    Ok(BaselineArtifacts {
        final_store: store,
        report,
        wall_time_s: wall,
    })
}

/// Paired staged runs differing only in the partition mode (clustered vs
/// random), identical seeds and budgets.
pub fn run_ablation_partition<T: Scalar>(
    run: &RunConfig,
    corpus: &Corpus,
) -> Result<(DiscoArtifacts<T>, DiscoArtifacts<T>)> {
    let mut kmeans_run = run.clone();
    kmeans_run.partition_mode = PartitionMode::Kmeans;
    let mut random_run = run.clone();
    random_run.partition_mode = PartitionMode::Random;
    let a = run_disco(&kmeans_run, corpus)?;
    let b = run_disco(&random_run, corpus)?;
    Ok((a, b))
}

/// One staged run per expert count, same corpus and budgets.
pub fn run_ablation_experts<T: Scalar>(
    run: &RunConfig,
    corpus: &Corpus,
    expert_counts: &[usize],
) -> Result<Vec<(usize, DiscoArtifacts<T>)>> {
    let mut out = Vec::with_capacity(expert_counts.len());
    for &e in expert_counts {
        if e == 0 {
            return Err(Error::Config("expert count must be positive".to_string()));
        }
        let mut cfg = run.clone();
        cfg.model.num_experts = e;
        cfg.model.top_k = cfg.model.top_k.min(e);
        out.push((e, run_disco(&cfg, corpus)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_clustered_corpus, SyntheticSpec};

    fn tiny_cfg(e: usize) -> MoEConfig {
        MoEConfig {
            vocab_size: 256,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            num_experts: e,
            top_k: 2.min(e),
            max_seq_len: 16,
        }
    }

    fn tiny_run(e: usize, seed: u64) -> RunConfig {
        let mut run = RunConfig::new(tiny_cfg(e), seed);
        run.submodel_steps = 4;
        run.finetune_steps = 4;
        run.baseline_steps = 8;
        run.batch_size = 2;
        run.seq_len = 12;
        run.eval_every = 2;
        run.eval_max_tokens = 200;
        run.kmeans_restarts = 2;
        run
    }

    fn tiny_corpus(vocabs: usize, seed: u64) -> Corpus {
        let (text, _) = synthetic_clustered_corpus(&SyntheticSpec::new(vocabs, 6_000, seed));
        Corpus::from_text(&text)
    }

    #[test]
    fn zero_step_worker_returns_broadcast_exactly() {
        let corpus = tiny_corpus(2, 1);
        let mut run = tiny_run(2, 5);
        run.submodel_steps = 0;
        let (train, eval_stream) = split_corpus(&corpus, &run).unwrap();
        let mut rng = rng_for(run.seed, Stream::Init);
        let store: ParamStore<f64> = init_params(&run.model, &mut rng).unwrap();
        let embed = store.shared("shared/embed/tok").unwrap();
        let shards = partition_random(&train, embed, 2, 3).unwrap();
        let ledger = CommLedger::default();
        let sub = extract_submodel(&store, 0).unwrap();
        let (ck, report) =
            train_submodel(0, &train, &shards[0], sub, &run, &eval_stream, &ledger).unwrap();
        for (path, t) in &ck.shared {
            assert!(t.bit_eq(store.shared(path).unwrap()), "{path} drifted");
        }
        assert_eq!(report.points.len(), 1);
        assert_eq!(ck.steps, 0);
    }

    #[test]
    fn disco_structure_and_report_counts() {
        let corpus = tiny_corpus(2, 2);
        let run = tiny_run(2, 9);
        let artifacts: DiscoArtifacts<f64> = run_disco(&run, &corpus).unwrap();
        assert_eq!(artifacts.checkpoints.len(), 2);
        assert_eq!(artifacts.reports.len(), 3); // 2 submodel + 1 finetune
        assert_eq!(artifacts.reports[2].phase, "finetune");
        assert_eq!(artifacts.comm.cross_worker, 0);
        assert!(artifacts.cost_inputs.submodel_max_wall_s > 0.0);
        for r in &artifacts.reports {
            for w in r.points.windows(2) {
                assert!(w[1].step > w[0].step);
            }
        }
        // Shards partition the training corpus.
        let (train, _) = split_corpus(&corpus, &run).unwrap();
        let mut all: Vec<usize> = artifacts
            .shards
            .iter()
            .flat_map(|s| s.members.clone())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..train.len()).collect::<Vec<_>>());
    }

    #[test]
    fn sequential_and_concurrent_workers_match_bit_for_bit() {
        let corpus = tiny_corpus(2, 3);
        let mut run = tiny_run(2, 11);
        run.worker_execution = WorkerExecution::Sequential;
        let a: DiscoArtifacts<f64> = run_disco(&run, &corpus).unwrap();
        run.worker_execution = WorkerExecution::Concurrent;
        let b: DiscoArtifacts<f64> = run_disco(&run, &corpus).unwrap();
        for (ca, cb) in a.checkpoints.iter().zip(&b.checkpoints) {
            for (path, t) in &ca.shared {
                assert!(t.bit_eq(&cb.shared[path]), "shared {path}");
            }
            for (path, t) in &ca.expert {
                assert!(t.bit_eq(&cb.expert[path]), "expert {path}");
            }
        }
        assert!(a.final_store.bit_eq(&b.final_store));
    }

    #[test]
    fn baseline_is_deterministic_and_learns() {
        let corpus = tiny_corpus(2, 4);
        let mut run = tiny_run(2, 13);
        run.baseline_steps = 30;
        let a: BaselineArtifacts<f64> = run_full_baseline(&run, &corpus).unwrap();
        let b: BaselineArtifacts<f64> = run_full_baseline(&run, &corpus).unwrap();
        assert!(a.final_store.bit_eq(&b.final_store));
        let pa: Vec<(u64, f64)> = a.report.points.iter().map(|p| (p.step, p.loss)).collect();
        let pb: Vec<(u64, f64)> = b.report.points.iter().map(|p| (p.step, p.loss)).collect();
        assert_eq!(pa, pb);
        let first = a.report.points.first().unwrap().loss;
        let last = a.report.points.last().unwrap().loss;
        assert!(last < first, "loss should drop: {first} -> {last}");
    }

    #[test]
    fn merged_store_equals_finetune_start() {
        let corpus = tiny_corpus(2, 5);
        let mut run = tiny_run(2, 17);
        run.finetune_steps = 0;
        let artifacts: DiscoArtifacts<f64> = run_disco(&run, &corpus).unwrap();
        // With zero fine-tune steps the final store IS the merge output.
        assert!(artifacts.final_store.bit_eq(&artifacts.merged_store));
    }

    #[test]
    fn single_expert_run_degenerates_cleanly() {
        let corpus = tiny_corpus(1, 6);
        let run = tiny_run(1, 19);
        let artifacts: DiscoArtifacts<f64> = run_disco(&run, &corpus).unwrap();
        assert_eq!(artifacts.gamma.values(), &[1.0]);
        assert_eq!(artifacts.checkpoints.len(), 1);
        assert_eq!(artifacts.reports.len(), 2);
        let (train, _) = split_corpus(&corpus, &run).unwrap();
        assert_eq!(artifacts.shards[0].sample_count(), train.len());
        // With gamma = (1), merged shared parameters equal the lone
        // submodel's exactly.
        for (path, t) in &artifacts.checkpoints[0].shared {
            assert!(
                artifacts.merged_store.shared(path).unwrap().bit_eq(t),
                "{path} drifted through the one-way merge"
            );
        }
    }

    #[test]
    fn same_worker_inputs_give_bit_identical_checkpoints() {
        let corpus = tiny_corpus(2, 8);
        let run = tiny_run(2, 29);
        let (train, eval_stream) = split_corpus(&corpus, &run).unwrap();
        let mut rng = rng_for(run.seed, Stream::Init);
        let store: ParamStore<f64> = init_params(&run.model, &mut rng).unwrap();
        let embed = store.shared("shared/embed/tok").unwrap();
        let shards = partition_random(&train, embed, 2, 3).unwrap();
        let once = train_submodel(
            1,
            &train,
            &shards[1],
            extract_submodel(&store, 1).unwrap(),
            &run,
            &eval_stream,
            &CommLedger::default(),
        )
        .unwrap()
        .0;
        let twice = train_submodel(
            1,
            &train,
            &shards[1],
            extract_submodel(&store, 1).unwrap(),
            &run,
            &eval_stream,
            &CommLedger::default(),
        )
        .unwrap()
        .0;
        for (path, t) in &once.shared {
            assert!(t.bit_eq(&twice.shared[path]));
        }
        for (path, t) in &once.expert {
            assert!(t.bit_eq(&twice.expert[path]));
        }
    }

    #[test]
    fn diverging_run_aborts_with_step_and_batch_diagnostics() {
        let corpus = tiny_corpus(2, 9);
        let mut run = tiny_run(2, 37);
        run.baseline_steps = 40;
        run.finetune_peak_lr = 1e18; // guaranteed blow-up
        run.warmup_ratio = 0.0;
        let msg = match run_full_baseline::<f32>(&run, &corpus) {
            Ok(_) => panic!("run should have aborted on a non-finite loss"),
            Err(e) => e.to_string(),
        };
        assert!(
            msg.contains("non-finite") && msg.contains("step") && msg.contains("batch"),
            "{msg}"
        );
    }

    #[test]
    fn ablation_runners_produce_paired_outputs() {
        let corpus = tiny_corpus(2, 7);
        let run = tiny_run(2, 23);
        let (km, rd): (DiscoArtifacts<f64>, DiscoArtifacts<f64>) =
            run_ablation_partition(&run, &corpus).unwrap();
        assert_eq!(km.reports.len(), rd.reports.len());
        let sizes: Vec<usize> = rd.shards.iter().map(|s| s.sample_count()).collect();
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "random shard sizes {sizes:?}");
        // Identical merged-model structure.
        for ((pa, ta), (pb, tb)) in km.final_store.iter().zip(rd.final_store.iter()) {
            assert_eq!(pa, pb);
            assert_eq!(ta.shape(), tb.shape());
        }

        let runs: Vec<(usize, DiscoArtifacts<f64>)> =
            run_ablation_experts(&run, &corpus, &[2, 4]).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].0, 2);
        assert_eq!(runs[1].0, 4);
        assert_eq!(runs[1].1.checkpoints.len(), 4);
    }

    #[test]
    fn worker_seeds_derive_from_global_seed() {
        let run = tiny_run(2, 31);
        assert_eq!(run.worker_seed(0), derive_seed(31, Stream::Worker(0)));
        assert_ne!(run.worker_seed(0), run.worker_seed(1));
    }
}
