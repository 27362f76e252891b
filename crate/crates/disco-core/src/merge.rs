//! Reassembly of a full MoE parameter store from trained single-expert
//! checkpoints: experts are concatenated untouched, the shared backbone is
//! averaged with sample-count weights, and fresh gate matrices are built by
//! column concatenation.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::model::{expert_schema, normal_draw, shared_schema, MoEConfig, INIT_STD};
use crate::scalar::Scalar;
use crate::store::{expert_path, DenseSubmodel, ParamStore};
use crate::tensor::Tensor;

/// Trained (shared, expert) pair with provenance.
#[derive(Debug, Clone)]
pub struct SubmodelCheckpoint<T: Scalar> {
    /// Backbone parameters, `shared/...` paths, no gates.
    pub shared: BTreeMap<String, Tensor<T>>,
    /// Expert parameters, expert-relative paths.
    pub expert: BTreeMap<String, Tensor<T>>,
    pub expert_index: usize,
    /// Shard sample count n_k; drives the merge weights.
    pub sample_count: usize,
    pub seed: u64,
    pub steps: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    expert_index: usize,
    sample_count: usize,
    seed: u64,
    steps: u64,
    wall_time_s: f64,
}

impl<T: Scalar> SubmodelCheckpoint<T> {
    pub fn from_submodel(
        sub: &DenseSubmodel<T>,
        sample_count: usize,
        seed: u64,
        steps: u64,
        wall_time_s: f64,
    ) -> Self {
        SubmodelCheckpoint {
            shared: sub.shared.clone(),
            expert: sub.expert.clone(),
            expert_index: sub.expert_index,
            sample_count,
            seed,
            steps,
            wall_time_s,
        }
    }

    pub fn as_submodel(&self) -> DenseSubmodel<T> {
        DenseSubmodel {
            shared: self.shared.clone(),
            expert: self.expert.clone(),
            expert_index: self.expert_index,
        }
    }

    /// Writes `<stem>.ckpt` (parameters) and `<stem>.meta.json` (provenance).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut flat = self.shared.clone();
        for (rel, t) in &self.expert {
            flat.insert(expert_path(self.expert_index, rel), t.clone());
        }
        write_checkpoint(&stem.with_extension("ckpt"), &flat)?;
        let meta = CheckpointMeta {
            expert_index: self.expert_index,
            sample_count: self.sample_count,
            seed: self.seed,
            steps: self.steps,
            wall_time_s: self.wall_time_s,
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::Format(format!("meta encode: {e}")))?;
        std::fs::write(stem.with_extension("meta.json"), json)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta_text = std::fs::read_to_string(stem.with_extension("meta.json"))?;
        let meta: CheckpointMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Format(format!("meta decode: {e}")))?;
        let flat = read_checkpoint::<T>(&stem.with_extension("ckpt"))?;
        let mut shared = BTreeMap::new();
        let mut expert = BTreeMap::new();
        let prefix = format!("expert/{}/", meta.expert_index);
        for (path, tensor) in flat {
            if let Some(rel) = path.strip_prefix(&prefix) {
                expert.insert(rel.to_string(), tensor);
            } else if path.starts_with("shared/") {
                shared.insert(path, tensor);
            } else {
                return Err(Error::Schema(format!(
                    "unexpected path `{path}` in submodel checkpoint"
                )));
            }
        }
        Ok(SubmodelCheckpoint {
            shared,
            expert,
            expert_index: meta.expert_index,
            sample_count: meta.sample_count,
            seed: meta.seed,
            steps: meta.steps,
            wall_time_s: meta.wall_time_s,
        })
    }
}

/// Sample-count-proportional averaging weights; they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeWeights(Vec<f64>);

impl MergeWeights {
    /// `gamma_k = n_k / sum(n)`. Any zero count is a domain error — an empty
    /// shard must be repaired upstream.
    pub fn from_sample_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Domain("no sample counts given".to_string()));
        }
        if let Some(k) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Domain(format!(
                "shard {k} has zero samples; merge weights undefined"
            )));
        }
        let total: f64 = counts.iter().map(|&n| n as f64).sum();
        Ok(MergeWeights(
            counts.iter().map(|&n| n as f64 / total).collect(),
        ))
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("no weights given".to_string()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Domain(
                "weights must be finite and non-negative".to_string(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights sum to {sum}, expected 1")));
        }
        Ok(MergeWeights(weights))
    }

    pub fn uniform(e: usize) -> Self {
        MergeWeights(vec![1.0 / e as f64; e])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_same_structure<T: Scalar>(
    reference: &BTreeMap<String, Tensor<T>>,
    other: &BTreeMap<String, Tensor<T>>,
    what: &str,
) -> Result<()> {
    for (path, t) in reference {
        match other.get(path) {
            None => {
                return Err(Error::Schema(format!(
                    "{what} parameter `{path}` missing from a checkpoint"
                )))
            }
            Some(o) if o.shape() != t.shape() => {
                return Err(Error::Schema(format!(
                    "{what} parameter `{path}` has shape {:?} vs {:?}",
                    o.shape(),
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    if other.len() != reference.len() {
        let extra = other.keys().find(|k| !reference.contains_key(*k));
        return Err(Error::Schema(format!(
            "checkpoint carries unexpected {what} parameter `{}`",
            extra.map(String::as_str).unwrap_or("?")
        )));
    }
    Ok(())
}

/// Per-path convex combination of the checkpoints' shared parameters:
/// `theta*[p] = sum_k gamma_k * theta_k[p]`, elementwise. Accumulation runs
/// in f64 regardless of the stored scalar type.
pub fn merge_shared<T: Scalar>(
    checkpoints: &[SubmodelCheckpoint<T>],
    gamma: &MergeWeights,
) -> Result<BTreeMap<String, Tensor<T>>> {
    if checkpoints.is_empty() {
        return Err(Error::Input("no checkpoints to merge".to_string()));
    }
    if checkpoints.len() != gamma.len() {
        return Err(Error::Input(format!(
            "{} checkpoints vs {} merge weights",
            checkpoints.len(),
            gamma.len()
        )));
    }
    let reference = &checkpoints[0].shared;
    for ck in &checkpoints[1..] {
        check_same_structure(reference, &ck.shared, "shared")?;
    }
    let mut out = BTreeMap::new();
    for (path, first) in reference {
        let mut acc = vec![0.0f64; first.numel()];
        for (ck, &w) in checkpoints.iter().zip(gamma.values()) {
            let data = ck.shared[path].data();
            for (a, &v) in acc.iter_mut().zip(data) {
                *a += w * v.to_f64();
            }
        }
        let merged = Tensor::from_f64(first.shape().to_vec(), &acc)?.with_requires_grad(true);
        out.insert(path.clone(), merged);
    }
    Ok(out)
}

/// Orders the trained experts by their `expert_index` and returns them
/// bit-identical. Indices 0..E-1 must each appear exactly once.
pub fn concat_experts<T: Scalar>(
    checkpoints: &[SubmodelCheckpoint<T>],
) -> Result<Vec<BTreeMap<String, Tensor<T>>>> {
    let e = checkpoints.len();
    if e == 0 {
        return Err(Error::Input("no checkpoints to concatenate".to_string()));
    }
    let mut slots: Vec<Option<&SubmodelCheckpoint<T>>> = vec![None; e];
    for ck in checkpoints {
        if ck.expert_index >= e {
            return Err(Error::Assembly(format!(
                "expert index {} out of range for {e} checkpoints",
                ck.expert_index
            )));
        }
        if slots[ck.expert_index].is_some() {
            return Err(Error::Assembly(format!(
                "duplicate expert index {}",
                ck.expert_index
            )));
        }
        slots[ck.expert_index] = Some(ck);
    }
    let reference = &checkpoints[0].expert;
    for ck in &checkpoints[1..] {
        check_same_structure(reference, &ck.expert, "expert")?;
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("all slots filled").expert.clone())
        .collect())
}

/// Gate initialization mode for the merged model.
#[derive(Debug, Clone)]
pub enum GateInit {
    /// Per layer, concatenate one fresh N(0, 0.02^2) column per expert.
    ColumnConcatRandom { seed: u64 },
    /// Per layer, column k is the unit-normalized centroid of shard k, so a
    /// hidden state near a centroid routes to the matching expert.
    Centroid { centroids: Vec<Vec<f64>> },
}

/// Builds the `[d_model, num_experts]` gate matrix for every MoE layer by
/// concatenating per-expert column vectors.
pub fn init_gating<T: Scalar>(
    cfg: &MoEConfig,
    mode: &GateInit,
) -> Result<BTreeMap<String, Tensor<T>>> {
    cfg.validate()?;
    let d = cfg.d_model;
    let e = cfg.num_experts;
    let mut out = BTreeMap::new();
    match mode {
        GateInit::ColumnConcatRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for layer in 0..cfg.n_layers {
                let mut data = vec![T::ZERO; d * e];
                for col in 0..e {
                    for row in 0..d {
                        data[row * e + col] = T::from_f64(normal_draw(&mut rng, INIT_STD));
                    }
                }
                out.insert(
                    format!("gate/{layer}/w"),
                    Tensor::new(vec![d, e], data)?.with_requires_grad(true),
                );
            }
        }
        GateInit::Centroid { centroids } => {
            if centroids.len() != e {
                return Err(Error::Config(format!(
                    "centroid gate init needs {e} centroids, got {}",
                    centroids.len()
                )));
            }
            let mut columns = Vec::with_capacity(e);
            for (k, c) in centroids.iter().enumerate() {
                if c.len() != d {
                    return Err(Error::Config(format!(
                        "centroid {k} has dimension {}, expected d_model {d}",
                        c.len()
                    )));
                }
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= 0.0 || !norm.is_finite() {
                    return Err(Error::Config(format!(
                        "centroid {k} cannot be normalized (norm {norm})"
                    )));
                }
                columns.push(c.iter().map(|v| v / norm).collect::<Vec<f64>>());
            }
            for layer in 0..cfg.n_layers {
                let mut data = vec![T::ZERO; d * e];
                for (col, column) in columns.iter().enumerate() {
                    for (row, &v) in column.iter().enumerate() {
                        data[row * e + col] = T::from_f64(v);
                    }
                }
                out.insert(
                    format!("gate/{layer}/w"),
                    Tensor::new(vec![d, e], data)?.with_requires_grad(true),
                );
            }
        }
    }
    Ok(out)
}

/// Assembles merged shared parameters, concatenated experts, and gate
/// matrices into a ready-to-fine-tune store, validating every path and
/// shape against the model schema.
pub fn assemble<T: Scalar>(
    cfg: &MoEConfig,
    shared: BTreeMap<String, Tensor<T>>,
    experts: Vec<BTreeMap<String, Tensor<T>>>,
    gates: BTreeMap<String, Tensor<T>>,
) -> Result<ParamStore<T>> {
    cfg.validate()?;
    if experts.len() != cfg.num_experts {
        return Err(Error::Assembly(format!(
            "{} expert maps vs config num_experts {}",
            experts.len(),
            cfg.num_experts
        )));
    }
    let mut store = ParamStore::new(cfg.num_experts);
    let mut shared_all = shared;
    for (path, tensor) in gates {
        if shared_all.insert(path.clone(), tensor).is_some() {
            return Err(Error::Assembly(format!("gate path `{path}` collides")));
        }
    }
    for spec in shared_schema(cfg) {
        let tensor = shared_all
            .remove(&spec.path)
            .ok_or_else(|| Error::Schema(format!("missing parameter `{}`", spec.path)))?;
        if tensor.shape() != spec.shape.as_slice() {
            return Err(Error::Schema(format!(
                "parameter `{}` has shape {:?}, expected {:?}",
                spec.path,
                tensor.shape(),
                spec.shape
            )));
        }
        store.insert_shared(&spec.path, tensor.with_requires_grad(true));
    }
    if let Some(extra) = shared_all.keys().next() {
        return Err(Error::Schema(format!("unexpected parameter `{extra}`")));
    }
    let specs = expert_schema(cfg);
    for (k, mut map) in experts.into_iter().enumerate() {
        for spec in &specs {
            let tensor = map.remove(&spec.path).ok_or_else(|| {
                Error::Schema(format!(
                    "missing parameter `{}`",
                    expert_path(k, &spec.path)
                ))
            })?;
            if tensor.shape() != spec.shape.as_slice() {
                return Err(Error::Schema(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    expert_path(k, &spec.path),
                    tensor.shape(),
                    spec.shape
                )));
            }
            store.insert_expert(k, &spec.path, tensor.with_requires_grad(true));
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::Schema(format!(
                "unexpected parameter `{}`",
                expert_path(k, extra)
            )));
        }
    }
    Ok(store)
}

/// Full merge: sample-count weights, shared averaging, expert
/// concatenation, gate initialization, assembly.
pub fn merge_checkpoints<T: Scalar>(
    cfg: &MoEConfig,
    checkpoints: &[SubmodelCheckpoint<T>],
    gate_init: &GateInit,
) -> Result<(ParamStore<T>, MergeWeights)> {
    let counts: Vec<usize> = checkpoints.iter().map(|c| c.sample_count).collect();
    let gamma = MergeWeights::from_sample_counts(&counts)?;
    let shared = merge_shared(checkpoints, &gamma)?;
    let experts = concat_experts(checkpoints)?;
    let gates = init_gating(cfg, gate_init)?;
    let store = assemble(cfg, shared, experts, gates)?;
    Ok((store, gamma))
}

fn l2_norm<T: Scalar>(t: &Tensor<T>) -> f64 {
    t.data()
        .iter()
        .map(|v| {
            let x = v.to_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Delimited merge report: the gamma values, then per shared path the L2
/// norm of the merged tensor next to each input checkpoint's norm.
pub fn merge_report<T: Scalar>(
    gamma: &MergeWeights,
    merged_shared: &BTreeMap<String, Tensor<T>>,
    checkpoints: &[SubmodelCheckpoint<T>],
) -> String {
    let mut out = String::new();
    for (k, w) in gamma.values().iter().enumerate() {
        out.push_str(&format!("gamma\t{k}\t{w:?}\n"));
    }
    for (path, tensor) in merged_shared {
        let mut line = format!("path\t{path}\t{:?}", l2_norm(tensor));
        for ck in checkpoints {
            if let Some(t) = ck.shared.get(path) {
                line.push_str(&format!("\t{:?}", l2_norm(t)));
            }
        }
        line.push('\n');
        out.push_str(&line);
    }
    out
}
