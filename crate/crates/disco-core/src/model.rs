//! Toy MoE transformer: shared backbone (embeddings, attention, layer
//! norms, output head) with a mixture-of-experts feed-forward block in
//! every layer under top-k sparse gating, plus extraction of dense
//! single-expert submodels and evaluation (loss, perplexity).

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;
use crate::store::{expert_path, is_gate_path, DenseSubmodel, ParamStore};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoEConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Per-expert feed-forward hidden width.
    pub d_ff: usize,
    pub num_experts: usize,
    pub top_k: usize,
    pub max_seq_len: usize,
}

impl MoEConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.vocab_size,
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.d_ff,
            self.num_experts,
            self.top_k,
            self.max_seq_len,
        ];
        if extents.contains(&0) {
            return Err(Error::Config(
                "all model extents must be positive".to_string(),
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.top_k > self.num_experts {
            return Err(Error::Config(format!(
                "top_k {} exceeds num_experts {}",
                self.top_k, self.num_experts
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

/// Shared-parameter layout (including gates), in deterministic
/// initialization order.
pub fn shared_schema(cfg: &MoEConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let mut specs = vec![
        ParamSpec {
            path: "shared/embed/tok".into(),
            shape: vec![cfg.vocab_size, d],
            init: InitKind::Normal,
        },
        ParamSpec {
            path: "shared/embed/pos".into(),
            shape: vec![cfg.max_seq_len, d],
            init: InitKind::Normal,
        },
    ];
    for l in 0..cfg.n_layers {
        for (name, shape, init) in [
            ("ln1/gamma", vec![d], InitKind::Ones),
            ("ln1/beta", vec![d], InitKind::Zeros),
            ("attn/wq", vec![d, d], InitKind::Normal),
            ("attn/bq", vec![d], InitKind::Zeros),
            ("attn/wk", vec![d, d], InitKind::Normal),
            ("attn/bk", vec![d], InitKind::Zeros),
            ("attn/wv", vec![d, d], InitKind::Normal),
            ("attn/bv", vec![d], InitKind::Zeros),
            ("attn/wo", vec![d, d], InitKind::Normal),
            ("attn/bo", vec![d], InitKind::Zeros),
            ("ln2/gamma", vec![d], InitKind::Ones),
            ("ln2/beta", vec![d], InitKind::Zeros),
        ] {
            specs.push(ParamSpec {
                path: format!("shared/layer/{l}/{name}"),
                shape,
                init,
            });
        }
    }
    specs.push(ParamSpec {
        path: "shared/ln_f/gamma".into(),
        shape: vec![d],
        init: InitKind::Ones,
    });
    specs.push(ParamSpec {
        path: "shared/ln_f/beta".into(),
        shape: vec![d],
        init: InitKind::Zeros,
    });
    specs.push(ParamSpec {
        path: "shared/head/w".into(),
        shape: vec![d, cfg.vocab_size],
        init: InitKind::Normal,
    });
    for l in 0..cfg.n_layers {
        specs.push(ParamSpec {
            path: format!("gate/{l}/w"),
            shape: vec![d, cfg.num_experts],
            init: InitKind::Normal,
        });
    }
    specs
}

/// Expert-relative parameter layout, identical for every expert slot.
pub fn expert_schema(cfg: &MoEConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    for l in 0..cfg.n_layers {
        specs.push(ParamSpec {
            path: format!("layer/{l}/ffn/w1"),
            shape: vec![cfg.d_model, cfg.d_ff],
            init: InitKind::Normal,
        });
        specs.push(ParamSpec {
            path: format!("layer/{l}/ffn/b1"),
            shape: vec![cfg.d_ff],
            init: InitKind::Zeros,
        });
        specs.push(ParamSpec {
            path: format!("layer/{l}/ffn/w2"),
            shape: vec![cfg.d_ff, cfg.d_model],
            init: InitKind::Normal,
        });
        specs.push(ParamSpec {
            path: format!("layer/{l}/ffn/b2"),
            shape: vec![cfg.d_model],
            init: InitKind::Zeros,
        });
    }
    specs
}

/// Draws standard normals via Box-Muller so initialization depends only on
/// the seed, not on platform distribution details.
pub fn normal_draw(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    use rand::Rng;
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            return std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

fn materialize<T: Scalar>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let numel: usize = spec.shape.iter().product();
    let data: Vec<T> = match spec.init {
        InitKind::Normal => (0..numel)
            .map(|_| T::from_f64(normal_draw(rng, INIT_STD)))
            .collect(),
        InitKind::Zeros => vec![T::ZERO; numel],
        InitKind::Ones => vec![T::ONE; numel],
    };
    Tensor::new(spec.shape.clone(), data)
        .expect("schema shapes are consistent")
        .with_requires_grad(true)
}

/// Fresh parameter store: weight matrices ~ N(0, 0.02^2), biases zero,
/// layer-norm gains one.
pub fn init_params<T: Scalar>(cfg: &MoEConfig, rng: &mut ChaCha8Rng) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new(cfg.num_experts);
    for spec in shared_schema(cfg) {
        let t = materialize(&spec, rng);
        store.insert_shared(&spec.path, t);
    }
    let expert_specs = expert_schema(cfg);
    for k in 0..cfg.num_experts {
        for spec in &expert_specs {
            let t = materialize(spec, rng);
            store.insert_expert(k, &spec.path, t);
        }
    }
    Ok(store)
}

/// Deep-copies the backbone (minus gates) and expert `k` into a dense
/// submodel; mutating the result never touches the source store.
pub fn extract_submodel<T: Scalar>(store: &ParamStore<T>, k: usize) -> Result<DenseSubmodel<T>> {
    if k >= store.num_experts() {
        return Err(Error::Index(format!(
            "expert {k} out of range for {} experts",
            store.num_experts()
        )));
    }
    let shared: BTreeMap<String, Tensor<T>> = store
        .shared_map()
        .iter()
        .filter(|(p, _)| !is_gate_path(p))
        .map(|(p, t)| (p.clone(), t.clone()))
        .collect();
    let expert = store.expert_map(k)?.clone();
    Ok(DenseSubmodel {
        shared,
        expert,
        expert_index: k,
    })
}

// ---- forward ----------------------------------------------------------------

/// How the MoE feed-forward block routes tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Gate matmul, softmax, top-k renormalized mixing.
    Learned,
    /// Route every token to one expert slot with weight one; the gate is
    /// bypassed entirely.
    Forced(usize),
}

/// Read-only view the forward pass needs; implemented by the full store and
/// by dense submodels so both run the identical op sequence.
pub trait ModelParams<T: Scalar> {
    fn shared_tensor(&self, path: &str) -> Result<&Tensor<T>>;
    fn expert_tensor(&self, slot: usize, rel: &str) -> Result<&Tensor<T>>;
    fn expert_full_path(&self, slot: usize, rel: &str) -> String;
    fn gate_tensor(&self, layer: usize) -> Result<&Tensor<T>>;
    fn expert_slots(&self) -> usize;
    fn lookup_mut(&mut self, full_path: &str) -> Option<&mut Tensor<T>>;
}

impl<T: Scalar> ModelParams<T> for ParamStore<T> {
    fn shared_tensor(&self, path: &str) -> Result<&Tensor<T>> {
        self.shared(path)
    }
    fn expert_tensor(&self, slot: usize, rel: &str) -> Result<&Tensor<T>> {
        self.expert(slot, rel)
    }
    fn expert_full_path(&self, slot: usize, rel: &str) -> String {
        expert_path(slot, rel)
    }
    fn gate_tensor(&self, layer: usize) -> Result<&Tensor<T>> {
        self.shared(&format!("gate/{layer}/w"))
    }
    fn expert_slots(&self) -> usize {
        self.num_experts()
    }
    fn lookup_mut(&mut self, full_path: &str) -> Option<&mut Tensor<T>> {
        if let Some(rest) = full_path.strip_prefix("expert/") {
            let (k_str, rel) = rest.split_once('/')?;
            let k: usize = k_str.parse().ok()?;
            if k >= self.num_experts() {
                return None;
            }
            // Split borrows via map access.
            return self.expert_map_mut(k).get_mut(rel);
        }
        self.shared_map_mut().get_mut(full_path)
    }
}

impl<T: Scalar> ModelParams<T> for DenseSubmodel<T> {
    fn shared_tensor(&self, path: &str) -> Result<&Tensor<T>> {
        self.shared(path)
    }
    fn expert_tensor(&self, slot: usize, rel: &str) -> Result<&Tensor<T>> {
        if slot != 0 {
            return Err(Error::Index(format!(
                "dense submodel has a single expert slot, asked for {slot}"
            )));
        }
        self.expert_param(rel)
    }
    fn expert_full_path(&self, _slot: usize, rel: &str) -> String {
        expert_path(self.expert_index, rel)
    }
    fn gate_tensor(&self, _layer: usize) -> Result<&Tensor<T>> {
        Err(Error::Schema(
            "dense submodel carries no gate parameters".to_string(),
        ))
    }
    fn expert_slots(&self) -> usize {
        1
    }
    fn lookup_mut(&mut self, full_path: &str) -> Option<&mut Tensor<T>> {
        if let Some(rest) = full_path.strip_prefix("expert/") {
            let (k_str, rel) = rest.split_once('/')?;
            let k: usize = k_str.parse().ok()?;
            if k != self.expert_index {
                return None;
            }
            return self.expert.get_mut(rel);
        }
        self.shared.get_mut(full_path)
    }
}

pub struct ForwardOutput {
    /// `[batch * seq, vocab]` logits node.
    pub logits: NodeId,
    /// Per MoE layer, the `[batch * seq, num_experts]` renormalized gate
    /// weight node (empty under forced routing).
    pub gate_weights: Vec<NodeId>,
    /// Parameter path -> leaf node, for gradient harvesting.
    pub bindings: Vec<(String, NodeId)>,
}

struct Binder<'p, T: Scalar, P: ModelParams<T>> {
    params: &'p P,
    train: bool,
    bound: BTreeMap<String, NodeId>,
    _marker: std::marker::PhantomData<T>,
}

impl<'p, T: Scalar, P: ModelParams<T>> Binder<'p, T, P> {
    fn new(params: &'p P, train: bool) -> Self {
        Binder {
            params,
            train,
            bound: BTreeMap::new(),
            _marker: std::marker::PhantomData,
        }
    }

    fn bind(&mut self, g: &mut Graph<T>, full_path: &str, tensor: &Tensor<T>) -> NodeId {
        if let Some(&id) = self.bound.get(full_path) {
            return id;
        }
        let id = g.leaf_from(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            tensor.requires_grad() && self.train,
        );
        self.bound.insert(full_path.to_string(), id);
        id
    }

    fn shared(&mut self, g: &mut Graph<T>, path: &str) -> Result<NodeId> {
        let t = self.params.shared_tensor(path)?;
        Ok(self.bind(g, path, t))
    }

    fn expert(&mut self, g: &mut Graph<T>, slot: usize, rel: &str) -> Result<NodeId> {
        let t = self.params.expert_tensor(slot, rel)?;
        let full = self.params.expert_full_path(slot, rel);
        Ok(self.bind(g, &full, t))
    }

    fn gate(&mut self, g: &mut Graph<T>, layer: usize) -> Result<NodeId> {
        let t = self.params.gate_tensor(layer)?;
        let path = format!("gate/{layer}/w");
        Ok(self.bind(g, &path, t))
    }
}

fn expert_ffn<T: Scalar, P: ModelParams<T>>(
    g: &mut Graph<T>,
    binder: &mut Binder<'_, T, P>,
    layer: usize,
    slot: usize,
    input: NodeId,
) -> Result<NodeId> {
    let w1 = binder.expert(g, slot, &format!("layer/{layer}/ffn/w1"))?;
    let b1 = binder.expert(g, slot, &format!("layer/{layer}/ffn/b1"))?;
    let w2 = binder.expert(g, slot, &format!("layer/{layer}/ffn/w2"))?;
    let b2 = binder.expert(g, slot, &format!("layer/{layer}/ffn/b2"))?;
    let h = g.matmul(input, w1)?;
    let h = g.add_bias(h, b1)?;
    let h = g.gelu(h)?;
    let out = g.matmul(h, w2)?;
    g.add_bias(out, b2)
}

/// Runs the transformer on a flat `[batch * seq]` token buffer and returns
/// `[batch * seq, vocab]` logits. Under learned routing, per token and per
/// layer the gate scores all experts, the top-k keep their softmax weights
/// renormalized to sum to one, and only selected experts execute.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Scalar, P: ModelParams<T>>(
    g: &mut Graph<T>,
    params: &P,
    cfg: &MoEConfig,
    tokens: &[u32],
    batch: usize,
    seq: usize,
    routing: Routing,
    train: bool,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    if tokens.len() != batch * seq || batch == 0 || seq == 0 {
        return Err(Error::Input(format!(
            "token buffer of {} does not match batch {batch} x seq {seq}",
            tokens.len()
        )));
    }
    if seq > cfg.max_seq_len {
        return Err(Error::Input(format!(
            "sequence length {seq} exceeds max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Input(format!(
            "token id {bad} out of range for vocab {}",
            cfg.vocab_size
        )));
    }
    match routing {
        Routing::Learned => {
            if params.expert_slots() != cfg.num_experts {
                return Err(Error::Config(format!(
                    "store has {} expert slots, config wants {}",
                    params.expert_slots(),
                    cfg.num_experts
                )));
            }
        }
        Routing::Forced(slot) => {
            if slot >= params.expert_slots() {
                return Err(Error::Index(format!(
                    "forced slot {slot} out of range for {} slots",
                    params.expert_slots()
                )));
            }
        }
    }

    let mut binder = Binder::new(params, train);
    let n = batch * seq;
    let (h_count, dh) = (cfg.n_heads, cfg.head_dim());

    let tok_table = binder.shared(g, "shared/embed/tok")?;
    let pos_table = binder.shared(g, "shared/embed/pos")?;
    let tok = g.embedding(tok_table, tokens)?;
    let pos_ids: Vec<u32> = (0..batch)
        .flat_map(|_| (0..seq as u32).collect::<Vec<_>>())
        .collect();
    let pos = g.embedding(pos_table, &pos_ids)?;
    let mut x = g.add(tok, pos)?;

    // Causal mask shared by every layer.
    let neg = T::from_f64(-1e30);
    let mut mask_data = vec![T::ZERO; seq * seq];
    for i in 0..seq {
        for j in (i + 1)..seq {
            mask_data[i * seq + j] = neg;
        }
    }
    let mask = g.constant(vec![seq, seq], mask_data);

    let mut gate_weights = Vec::new();
    for layer in 0..cfg.n_layers {
        // Attention sublayer.
        let ln1_g = binder.shared(g, &format!("shared/layer/{layer}/ln1/gamma"))?;
        let ln1_b = binder.shared(g, &format!("shared/layer/{layer}/ln1/beta"))?;
        let h = g.layer_norm(x, ln1_g, ln1_b, LN_EPS)?;

        let wq = binder.shared(g, &format!("shared/layer/{layer}/attn/wq"))?;
        let bq = binder.shared(g, &format!("shared/layer/{layer}/attn/bq"))?;
        let wk = binder.shared(g, &format!("shared/layer/{layer}/attn/wk"))?;
        let bk = binder.shared(g, &format!("shared/layer/{layer}/attn/bk"))?;
        let wv = binder.shared(g, &format!("shared/layer/{layer}/attn/wv"))?;
        let bv = binder.shared(g, &format!("shared/layer/{layer}/attn/bv"))?;
        let wo = binder.shared(g, &format!("shared/layer/{layer}/attn/wo"))?;
        let bo = binder.shared(g, &format!("shared/layer/{layer}/attn/bo"))?;

        let q = g.matmul(h, wq)?;
        let q = g.add_bias(q, bq)?;
        let k = g.matmul(h, wk)?;
        let k = g.add_bias(k, bk)?;
        let v = g.matmul(h, wv)?;
        let v = g.add_bias(v, bv)?;

        let qh = g.split_heads(q, batch, seq, h_count, dh)?;
        let kh = g.split_heads(k, batch, seq, h_count, dh)?;
        let vh = g.split_heads(v, batch, seq, h_count, dh)?;

        let scores = g.bmm(qh, kh, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let scores = g.add_broadcast(scores, mask)?;
        let attn = g.softmax(scores)?;
        let ctx = g.bmm(attn, vh, false)?;
        let merged = g.merge_heads(ctx, batch, seq, h_count, dh)?;
        let proj = g.matmul(merged, wo)?;
        let proj = g.add_bias(proj, bo)?;
        x = g.add(x, proj)?;

        // MoE feed-forward sublayer.
        let ln2_g = binder.shared(g, &format!("shared/layer/{layer}/ln2/gamma"))?;
        let ln2_b = binder.shared(g, &format!("shared/layer/{layer}/ln2/beta"))?;
        let u = g.layer_norm(x, ln2_g, ln2_b, LN_EPS)?;

        let ffn_out = match routing {
            Routing::Forced(slot) => expert_ffn(g, &mut binder, layer, slot, u)?,
            Routing::Learned => {
                let gate_w = binder.gate(g, layer)?;
                let gate_logits = g.matmul(u, gate_w)?;
                let probs = g.softmax(gate_logits)?;
                let weights = g.topk_renorm(probs, cfg.top_k)?;
                gate_weights.push(weights);
                let selected = g
                    .topk_selected(weights)
                    .expect("topk_renorm node carries its selection")
                    .to_vec();
                let mut rows_per_expert: Vec<Vec<u32>> = vec![Vec::new(); cfg.num_experts];
                for (row, sel) in selected.chunks_exact(cfg.top_k).enumerate() {
                    for &e in sel {
                        rows_per_expert[e as usize].push(row as u32);
                    }
                }
                let mut acc: Option<NodeId> = None;
                for (e, rows) in rows_per_expert.iter().enumerate() {
                    if rows.is_empty() {
                        continue; // non-selected experts are never evaluated
                    }
                    let xe = g.gather_rows(u, rows)?;
                    let ye = expert_ffn(g, &mut binder, layer, e, xe)?;
                    let we = g.col_at_rows(weights, e, rows)?;
                    let ye = g.row_scale(ye, we)?;
                    let part = g.scatter_rows(ye, rows, n)?;
                    acc = Some(match acc {
                        None => part,
                        Some(prev) => g.add(prev, part)?,
                    });
                }
                acc.expect("top_k >= 1 selects at least one expert per token")
            }
        };
        x = g.add(x, ffn_out)?;
    }

    let lnf_g = binder.shared(g, "shared/ln_f/gamma")?;
    let lnf_b = binder.shared(g, "shared/ln_f/beta")?;
    let xf = g.layer_norm(x, lnf_g, lnf_b, LN_EPS)?;
    let head = binder.shared(g, "shared/head/w")?;
    let logits = g.matmul(xf, head)?;

    Ok(ForwardOutput {
        logits,
        gate_weights,
        bindings: binder.bound.into_iter().collect(),
    })
}

/// Single-sequence logits under learned routing, shaped `[seq, vocab]`.
pub fn moe_forward<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &MoEConfig,
    tokens: &[u32],
) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let out = forward(
        &mut g,
        store,
        cfg,
        tokens,
        1,
        tokens.len(),
        Routing::Learned,
        false,
    )?;
    Ok(g.data(out.logits).to_vec())
}

/// Copies harvested gradients from graph leaves back onto the parameter
/// tensors they were bound from.
pub fn harvest_grads<T: Scalar, P: ModelParams<T>>(
    g: &Graph<T>,
    bindings: &[(String, NodeId)],
    params: &mut P,
) -> Result<()> {
    for (path, node) in bindings {
        let Some(grad) = g.grad(*node) else {
            continue;
        };
        let tensor = params
            .lookup_mut(path)
            .ok_or_else(|| Error::Schema(format!("gradient for unknown parameter `{path}`")))?;
        tensor.accumulate_grad(grad)?;
    }
    Ok(())
}

/// Mean next-token cross entropy between `[rows, vocab]` logits and `rows`
/// one-step-ahead targets, as a graph node.
pub fn lm_loss<T: Scalar>(g: &mut Graph<T>, logits: NodeId, targets: &[u32]) -> Result<NodeId> {
    g.cross_entropy(logits, targets)
}

/// Token-weighted negative log likelihood of a stream. Windows of `seq + 1`
/// tokens overlap by one so every token after the first is predicted exactly
/// once; full windows run in batches of `batch`, the remainder runs alone.
/// Returns (total nll, token count).
pub fn stream_nll<T: Scalar, P: ModelParams<T>>(
    params: &P,
    cfg: &MoEConfig,
    stream: &[u32],
    batch: usize,
    seq: usize,
    routing: Routing,
) -> Result<(f64, usize)> {
    if stream.len() < 2 {
        return Err(Error::Domain(
            "evaluation stream needs at least two tokens".to_string(),
        ));
    }
    if batch == 0 || seq == 0 {
        return Err(Error::Input("batch and seq must be positive".to_string()));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    let mut starts: Vec<usize> = Vec::new();
    let mut start = 0usize;
    while start + 1 < stream.len() {
        starts.push(start);
        if start + seq + 1 >= stream.len() {
            break;
        }
        start += seq;
    }
    let full: Vec<usize> = starts
        .iter()
        .copied()
        .filter(|&s| s + seq < stream.len())
        .collect();
    let tail: Vec<usize> = starts
        .iter()
        .copied()
        .filter(|&s| s + seq >= stream.len())
        .collect();
    for group in full.chunks(batch) {
        let b = group.len();
        let mut inputs = Vec::with_capacity(b * seq);
        let mut targets = Vec::with_capacity(b * seq);
        for &s in group {
            inputs.extend_from_slice(&stream[s..s + seq]);
            targets.extend_from_slice(&stream[s + 1..s + seq + 1]);
        }
        let mut g = Graph::new();
        let out = forward(&mut g, params, cfg, &inputs, b, seq, routing, false)?;
        let loss = g.cross_entropy(out.logits, &targets)?;
        total += g.data(loss)[0].to_f64() * targets.len() as f64;
        count += targets.len();
    }
    for &s in &tail {
        let chunk = &stream[s..];
        let inputs: Vec<u32> = chunk[..chunk.len() - 1].to_vec();
        let targets: Vec<u32> = chunk[1..].to_vec();
        let mut g = Graph::new();
        let out = forward(
            &mut g,
            params,
            cfg,
            &inputs,
            1,
            inputs.len(),
            routing,
            false,
        )?;
        let loss = g.cross_entropy(out.logits, &targets)?;
        total += g.data(loss)[0].to_f64() * targets.len() as f64;
        count += targets.len();
    }
    Ok((total, count))
}

/// exp(token-weighted mean NLL) over a non-empty evaluation stream.
pub fn perplexity<T: Scalar, P: ModelParams<T>>(
    params: &P,
    cfg: &MoEConfig,
    stream: &[u32],
    seq: usize,
    routing: Routing,
) -> Result<f64> {
    if stream.is_empty() {
        return Err(Error::Domain("empty evaluation set".to_string()));
    }
    let (total, count) = stream_nll(params, cfg, stream, 8, seq, routing)?;
    Ok((total / count as f64).exp())
}
