//! Parameter containers: the full model store split into shared and
//! per-expert parameters, and the dense single-expert container used for
//! decomposed training.
//!
//! The split is encoded in path prefixes so merge tooling can operate on
//! paths alone: `shared/...` for the backbone, `gate/<layer>/...` for the
//! routing matrices (stored in the shared map), `expert/<k>/...` for the
//! k-th expert when flattened into a checkpoint.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GATE_PREFIX: &str = "gate/";
pub const SHARED_PREFIX: &str = "shared/";
pub const EXPERT_PREFIX: &str = "expert/";

pub fn is_gate_path(path: &str) -> bool {
    path.starts_with(GATE_PREFIX)
}

/// Anything the optimizer can walk: full stores and dense submodels.
pub trait Params<T: Scalar> {
    fn params_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor<T>)>;
}

pub fn expert_path(k: usize, rel: &str) -> String {
    format!("{EXPERT_PREFIX}{k}/{rel}")
}

#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    /// Backbone parameters plus gate matrices (`shared/...` and `gate/...`).
    shared: BTreeMap<String, Tensor<T>>,
    /// One structurally identical map per expert, keyed by expert-relative
    /// paths (`layer/<l>/ffn/...`).
    experts: Vec<BTreeMap<String, Tensor<T>>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(num_experts: usize) -> Self {
        ParamStore {
            shared: BTreeMap::new(),
            experts: vec![BTreeMap::new(); num_experts],
        }
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn insert_shared(&mut self, path: &str, tensor: Tensor<T>) {
        self.shared.insert(path.to_string(), tensor);
    }

    pub fn insert_expert(&mut self, k: usize, rel_path: &str, tensor: Tensor<T>) {
        self.experts[k].insert(rel_path.to_string(), tensor);
    }

    pub fn shared(&self, path: &str) -> Result<&Tensor<T>> {
        self.shared
            .get(path)
            .ok_or_else(|| Error::Schema(format!("missing shared parameter `{path}`")))
    }

    pub fn shared_mut(&mut self, path: &str) -> Result<&mut Tensor<T>> {
        self.shared
            .get_mut(path)
            .ok_or_else(|| Error::Schema(format!("missing shared parameter `{path}`")))
    }

    pub fn expert(&self, k: usize, rel_path: &str) -> Result<&Tensor<T>> {
        self.experts
            .get(k)
            .ok_or_else(|| Error::Index(format!("expert {k} out of range")))?
            .get(rel_path)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "missing expert parameter `{}`",
                    expert_path(k, rel_path)
                ))
            })
    }

    pub fn shared_map(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.shared
    }

    pub(crate) fn shared_map_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.shared
    }

    pub(crate) fn expert_map_mut(&mut self, k: usize) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.experts[k]
    }

    pub fn expert_map(&self, k: usize) -> Result<&BTreeMap<String, Tensor<T>>> {
        self.experts
            .get(k)
            .ok_or_else(|| Error::Index(format!("expert {k} out of range")))
    }

    /// All parameters with stable full paths, for optimizers and gradient
    /// harvesting.
    pub fn iter_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor<T>)> {
        let shared = self.shared.iter_mut().map(|(p, t)| (p.clone(), t));
        let experts = self
            .experts
            .iter_mut()
            .enumerate()
            .flat_map(|(k, map)| map.iter_mut().map(move |(p, t)| (expert_path(k, p), t)));
        shared.chain(experts)
    }

    pub fn iter(&self) -> impl Iterator<Item = (String, &Tensor<T>)> {
        let shared = self.shared.iter().map(|(p, t)| (p.clone(), t));
        let experts = self
            .experts
            .iter()
            .enumerate()
            .flat_map(|(k, map)| map.iter().map(move |(p, t)| (expert_path(k, p), t)));
        shared.chain(experts)
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.iter_mut() {
            t.zero_grad();
        }
    }

    pub fn set_requires_grad(&mut self, requires: bool) {
        for (_, t) in self.iter_mut() {
            let tensor = std::mem::replace(t, Tensor::zeros(vec![1]));
            *t = tensor.with_requires_grad(requires);
        }
    }

    /// Flattens into a single path-keyed map (checkpoint layout).
    pub fn flatten(&self) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (p, t) in &self.shared {
            out.insert(p.clone(), t.clone());
        }
        for (k, map) in self.experts.iter().enumerate() {
            for (p, t) in map {
                out.insert(expert_path(k, p), t.clone());
            }
        }
        out
    }

    /// Rebuilds a store from a flat checkpoint map.
    pub fn from_flat(flat: BTreeMap<String, Tensor<T>>, num_experts: usize) -> Result<Self> {
        let mut store = ParamStore::new(num_experts);
        for (path, tensor) in flat {
            if let Some(rest) = path.strip_prefix(EXPERT_PREFIX) {
                let (k_str, rel) = rest
                    .split_once('/')
                    .ok_or_else(|| Error::Schema(format!("malformed expert path `{path}`")))?;
                let k: usize = k_str
                    .parse()
                    .map_err(|_| Error::Schema(format!("malformed expert index in `{path}`")))?;
                if k >= num_experts {
                    return Err(Error::Schema(format!(
                        "expert index {k} in `{path}` exceeds expert count {num_experts}"
                    )));
                }
                store.experts[k].insert(rel.to_string(), tensor);
            } else if path.starts_with(SHARED_PREFIX) || is_gate_path(&path) {
                store.shared.insert(path, tensor);
            } else {
                return Err(Error::Schema(format!(
                    "unrecognized parameter path `{path}`"
                )));
            }
        }
        store.validate_expert_symmetry()?;
        Ok(store)
    }

    /// Expert maps must be structurally identical across slots.
    pub fn validate_expert_symmetry(&self) -> Result<()> {
        let Some(first) = self.experts.first() else {
            return Ok(());
        };
        for (k, map) in self.experts.iter().enumerate().skip(1) {
            if map.len() != first.len() {
                return Err(Error::Schema(format!(
                    "expert {k} has {} parameters, expert 0 has {}",
                    map.len(),
                    first.len()
                )));
            }
            for (path, t) in map {
                let reference = first.get(path).ok_or_else(|| {
                    Error::Schema(format!("expert {k} has `{path}` missing from expert 0"))
                })?;
                if reference.shape() != t.shape() {
                    return Err(Error::Schema(format!(
                        "shape of `{path}` differs between expert 0 and expert {k}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Elementwise maximum absolute difference across all parameters, for
    /// closeness diagnostics in tests.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for ((_, a), (_, b)) in self.iter().zip(other.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x.to_f64() - y.to_f64()).abs());
            }
        }
        worst
    }

    /// Exact bitwise equality of every parameter.
    pub fn bit_eq(&self, other: &Self) -> bool {
        if self.experts.len() != other.experts.len() || self.shared.len() != other.shared.len() {
            return false;
        }
        for ((pa, ta), (pb, tb)) in self.shared.iter().zip(&other.shared) {
            if pa != pb || !ta.bit_eq(tb) {
                return false;
            }
        }
        for (ma, mb) in self.experts.iter().zip(&other.experts) {
            if ma.len() != mb.len() {
                return false;
            }
            for ((pa, ta), (pb, tb)) in ma.iter().zip(mb) {
                if pa != pb || !ta.bit_eq(tb) {
                    return false;
                }
            }
        }
        true
    }
}

/// Shared backbone plus exactly one expert, gating removed: a plain dense
/// model that trains on one data shard.
#[derive(Debug, Clone)]
pub struct DenseSubmodel<T: Scalar> {
    /// Deep copy of the backbone without any `gate/...` entries.
    pub shared: BTreeMap<String, Tensor<T>>,
    /// Deep copy of the single expert, expert-relative paths.
    pub expert: BTreeMap<String, Tensor<T>>,
    pub expert_index: usize,
}

impl<T: Scalar> DenseSubmodel<T> {
    pub fn shared(&self, path: &str) -> Result<&Tensor<T>> {
        self.shared
            .get(path)
            .ok_or_else(|| Error::Schema(format!("missing shared parameter `{path}`")))
    }

    pub fn expert_param(&self, rel_path: &str) -> Result<&Tensor<T>> {
        self.expert
            .get(rel_path)
            .ok_or_else(|| Error::Schema(format!("missing expert parameter `{rel_path}`")))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor<T>)> {
        let idx = self.expert_index;
        let shared = self.shared.iter_mut().map(|(p, t)| (p.clone(), t));
        let expert = self
            .expert
            .iter_mut()
            .map(move |(p, t)| (expert_path(idx, p), t));
        shared.chain(expert)
    }

    pub fn zero_grads(&mut self) {
        for t in self.shared.values_mut() {
            t.zero_grad();
        }
        for t in self.expert.values_mut() {
            t.zero_grad();
        }
    }

    pub fn set_requires_grad(&mut self, requires: bool) {
        for t in self.shared.values_mut().chain(self.expert.values_mut()) {
            let tensor = std::mem::replace(t, Tensor::zeros(vec![1]));
            *t = tensor.with_requires_grad(requires);
        }
    }
}

impl<T: Scalar> Params<T> for ParamStore<T> {
    fn params_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor<T>)> {
        self.iter_mut()
    }
}

impl<T: Scalar> Params<T> for DenseSubmodel<T> {
    fn params_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor<T>)> {
        self.iter_mut()
    }
}
