//! Declarative run configuration. One TOML file drives every subcommand;
//! unknown keys are rejected before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use disco_core::model::MoEConfig;
use disco_core::pipeline::{GateInitMode, PartitionMode, RunConfig, WorkerExecution};
use disco_core::scalar::DType;
use disco_core::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Corpus text file: one sentence per nonblank line.
    pub corpus: PathBuf,
    /// Device rates file (name<TAB>dollars_per_hour); needed by `cost`.
    #[serde(default)]
    pub rates: Option<PathBuf>,
    /// Output root for run directories; DISCO_RUN_ROOT and --out override.
    #[serde(default)]
    pub run_root: Option<PathBuf>,
    /// Optional per-line labels (one integer per corpus line); when present,
    /// `partition` prints cluster purity against them.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub model: MoEConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub seed: u64,
    pub submodel_steps: u64,
    pub finetune_steps: u64,
    pub baseline_steps: Option<u64>,
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
    pub eval_fraction: f64,
    pub eval_max_tokens: usize,
    pub kmeans_restarts: usize,
    pub dtype: DType,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let template = RunConfig::new(
            MoEConfig {
                vocab_size: 256,
                d_model: 64,
                n_layers: 2,
                n_heads: 4,
                d_ff: 128,
                num_experts: 4,
                top_k: 2,
                max_seq_len: 64,
            },
            0,
        );
        TrainingSection {
            seed: template.seed,
            submodel_steps: template.submodel_steps,
            finetune_steps: template.finetune_steps,
            baseline_steps: None,
            batch_size: template.batch_size,
            seq_len: template.seq_len,
            submodel_lr: template.submodel_lr,
            submodel_weight_decay: template.submodel_weight_decay,
            finetune_peak_lr: template.finetune_peak_lr,
            finetune_weight_decay: template.finetune_weight_decay,
            warmup_ratio: template.warmup_ratio,
            partition_mode: template.partition_mode,
            gate_init: template.gate_init,
            worker_execution: template.worker_execution,
            eval_every: template.eval_every,
            eval_fraction: template.eval_fraction,
            eval_max_tokens: template.eval_max_tokens,
            kmeans_restarts: template.kmeans_restarts,
            dtype: template.dtype,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    /// Rate-table name billed for the submodel phase (one device per worker).
    pub s_device: String,
    /// Rate-table name billed for the fine-tune / full phase.
    pub f_device: String,
    pub f_devices: usize,
    /// Sampling resolution for the cumulative cost curve, hours.
    pub curve_resolution_h: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            s_device: "RTX4090".to_string(),
            f_device: "A100".to_string(),
            f_devices: 1,
            curve_resolution_h: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub expert_counts: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            expert_counts: vec![2, 4],
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        cfg.to_run_config().validate()?;
        Ok(cfg)
    }

    /// Effective training configuration after applying a seed override.
    pub fn to_run_config(&self) -> RunConfig {
        let t = &self.training;
        RunConfig {
            model: self.model.clone(),
            seed: t.seed,
            submodel_steps: t.submodel_steps,
            finetune_steps: t.finetune_steps,
            baseline_steps: t
                .baseline_steps
                .unwrap_or(t.submodel_steps + t.finetune_steps),
            batch_size: t.batch_size,
            seq_len: t.seq_len,
            submodel_lr: t.submodel_lr,
            submodel_weight_decay: t.submodel_weight_decay,
            finetune_peak_lr: t.finetune_peak_lr,
            finetune_weight_decay: t.finetune_weight_decay,
            warmup_ratio: t.warmup_ratio,
            partition_mode: t.partition_mode,
            gate_init: t.gate_init,
            worker_execution: t.worker_execution,
            eval_every: t.eval_every,
            eval_fraction: t.eval_fraction,
            eval_max_tokens: t.eval_max_tokens,
            kmeans_restarts: t.kmeans_restarts,
            dtype: t.dtype,
        }
    }

    /// Canonical snapshot of the effective configuration, written into every
    /// run directory.
    pub fn snapshot(&self) -> Result<String, Error> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("config encode: {e}")))
    }

    /// Stable fingerprint of the effective configuration (FNV-1a over the
    /// canonical snapshot).
    pub fn fingerprint(&self, command_tag: &str) -> Result<String, Error> {
        let text = format!("{command_tag}\n{}", self.snapshot()?);
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok(format!("{hash:012x}"))
    }
}
