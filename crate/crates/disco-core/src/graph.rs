//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Each training step builds a fresh [`Graph`]; operations compute their
//! forward value eagerly and record enough to run the reverse sweep.
//! Node ids index into the tape in topological order, so the backward pass
//! is a single reverse iteration (cycles are impossible by construction).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    /// `[r, n] + [n]`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    /// `[b, r, c] + [r, c]`, broadcast over the leading dim (attention mask).
    AddBroadcast(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Matmul(NodeId, NodeId),
    Bmm {
        a: NodeId,
        b: NodeId,
        transpose_b: bool,
    },
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<u32>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<u32>,
        probs: Vec<T>,
    },
    Gelu(NodeId),
    Reshape(NodeId),
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    /// Sparse gate weights: keep the top-k entries of each row, renormalized
    /// to sum to one; the selection itself is treated as constant in the
    /// backward pass (straight-through), gradients flow only through the
    /// renormalized weights of selected entries.
    TopKRenorm {
        probs: NodeId,
        k: usize,
        selected: Vec<u32>,
    },
    GatherRows {
        x: NodeId,
        rows: Vec<u32>,
    },
    ScatterRows {
        x: NodeId,
        rows: Vec<u32>,
    },
    /// One column of a matrix sampled at a list of rows, as a vector.
    ColAtRows {
        x: NodeId,
        col: usize,
        rows: Vec<u32>,
    },
    /// `[m, n]` scaled per-row by `[m]`.
    RowScale {
        x: NodeId,
        s: NodeId,
    },
    /// Element-level permutation/gather used by the attention head reshapes.
    PermuteElems {
        x: NodeId,
        map: Vec<u32>,
    },
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

// out += a . b ; a: [m,k], b: [k,n]
fn mm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize) {
    for (a_row, o_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

// out += a . b^T ; a: [m,k], b: [n,k]. Transposes b so the inner loop stays
// in axpy form (the dot-product form defeats autovectorization).
fn mm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize) {
    let mut bt = vec![T::ZERO; b.len()];
    transpose(b, &mut bt, n, k);
    mm_nn(a, &bt, out, k, n);
}

// out += a^T . b ; a: [k,m], b: [k,n]
fn mm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize) {
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (&av, o_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn transpose<T: Scalar>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn softmax_rows<T: Scalar>(data: &[T], out: &mut [T], width: usize) {
    for (row, orow) in data.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let mut max = row[0];
        for &v in row {
            max = max.maximum(v);
        }
        let mut sum = T::ZERO;
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o = *o / sum;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id.0]
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Structural(format!(
                "node id {} does not belong to this graph",
                id.0
            )));
        }
        Ok(())
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    pub fn data(&self, id: NodeId) -> &[T] {
        &self.node(id).data
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.node(id).grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- leaves -----------------------------------------------------------

    pub fn leaf(&mut self, t: &Tensor<T>) -> NodeId {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    pub fn leaf_from(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> NodeId {
        self.push(shape, data, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> NodeId {
        self.push(shape, data, false, Op::Leaf)
    }

    // ---- ops --------------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.node(a).shape, self.node(b).shape),
            ));
        }
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| x + y)
            .collect();
        let rq = self.requires(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), data, rq, Op::Add(a, b)))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(bias)?;
        let n = *self.node(a).shape.last().unwrap_or(&0);
        if self.node(bias).shape != [n] {
            return Err(Error::shape(
                "add_bias",
                format!(
                    "bias {:?} does not match last dim of {:?}",
                    self.node(bias).shape,
                    self.node(a).shape
                ),
            ));
        }
        let bias_data = &self.node(bias).data;
        let data = self
            .node(a)
            .data
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(bias_data).map(|(&x, &b)| x + b))
            .collect();
        let rq = self.requires(&[a, bias]);
        Ok(self.push(self.node(a).shape.clone(), data, rq, Op::AddBias(a, bias)))
    }

    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let ashape = &self.node(a).shape;
        let bshape = &self.node(b).shape;
        if ashape.len() != bshape.len() + 1 || ashape[1..] != bshape[..] {
            return Err(Error::shape(
                "add_broadcast",
                format!("{ashape:?} vs broadcast {bshape:?}"),
            ));
        }
        let chunk = self.node(b).data.len();
        let bdata = &self.node(b).data;
        let data = self
            .node(a)
            .data
            .chunks_exact(chunk)
            .flat_map(|blk| blk.iter().zip(bdata).map(|(&x, &y)| x + y))
            .collect();
        let rq = self.requires(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), data, rq, Op::AddBroadcast(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", self.node(a).shape, self.node(b).shape),
            ));
        }
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| x * y)
            .collect();
        let rq = self.requires(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), data, rq, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        let c = T::from_f64(c);
        let data = self.node(a).data.iter().map(|&x| x * c).collect();
        let rq = self.node(a).requires_grad;
        Ok(self.push(self.node(a).shape.clone(), data, rq, Op::Scale(a, c)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ash, bsh) = (&self.node(a).shape, &self.node(b).shape);
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::shape("matmul", format!("{ash:?} x {bsh:?}")));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut data = vec![T::ZERO; m * n];
        mm_nn(&self.node(a).data, &self.node(b).data, &mut data, k, n);
        let rq = self.requires(&[a, b]);
        Ok(self.push(vec![m, n], data, rq, Op::Matmul(a, b)))
    }

    /// Batched matmul: `[b,m,k] x [b,k,n]`, or `[b,m,k] x [b,n,k]` with
    /// `transpose_b`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ash, bsh) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] {
            return Err(Error::shape("bmm", format!("{ash:?} x {bsh:?}")));
        }
        let (batch, m, k) = (ash[0], ash[1], ash[2]);
        let n = if transpose_b {
            if bsh[2] != k {
                return Err(Error::shape("bmm", format!("{ash:?} x {bsh:?}^T")));
            }
            bsh[1]
        } else {
            if bsh[1] != k {
                return Err(Error::shape("bmm", format!("{ash:?} x {bsh:?}")));
            }
            bsh[2]
        };
        let mut data = vec![T::ZERO; batch * m * n];
        {
            let adata = &self.node(a).data;
            let bdata = &self.node(b).data;
            for bi in 0..batch {
                let asl = &adata[bi * m * k..(bi + 1) * m * k];
                let bsl = &bdata[bi * k * n..(bi + 1) * k * n];
                let osl = &mut data[bi * m * n..(bi + 1) * m * n];
                if transpose_b {
                    mm_nt(asl, bsl, osl, k, n);
                } else {
                    mm_nn(asl, bsl, osl, k, n);
                }
            }
        }
        let rq = self.requires(&[a, b]);
        Ok(self.push(vec![batch, m, n], data, rq, Op::Bmm { a, b, transpose_b }))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let shape = self.node(a).shape.clone();
        let width = *shape
            .last()
            .ok_or_else(|| Error::shape("softmax", "rank-0 input".to_string()))?;
        let mut data = vec![T::ZERO; self.node(a).data.len()];
        softmax_rows(&self.node(a).data, &mut data, width);
        let rq = self.node(a).requires_grad;
        Ok(self.push(shape, data, rq, Op::Softmax(a)))
    }

    /// Layer normalization over the last dimension with learnable gain/bias.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let shape = self.node(x).shape.clone();
        let width = *shape
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "rank-0 input".to_string()))?;
        if self.node(gamma).shape != [width] || self.node(beta).shape != [width] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} vs width {width}",
                    self.node(gamma).shape,
                    self.node(beta).shape
                ),
            ));
        }
        let eps_t = T::from_f64(eps);
        let rows = self.node(x).data.len() / width;
        let mut data = vec![T::ZERO; self.node(x).data.len()];
        let mut mean = vec![T::ZERO; rows];
        let mut inv_std = vec![T::ZERO; rows];
        {
            let xdata = &self.node(x).data;
            let g = &self.node(gamma).data;
            let b = &self.node(beta).data;
            let inv_n = T::from_f64(1.0 / width as f64);
            for r in 0..rows {
                let row = &xdata[r * width..(r + 1) * width];
                let mut mu = T::ZERO;
                for &v in row {
                    mu += v;
                }
                mu = mu * inv_n;
                let mut var = T::ZERO;
                for &v in row {
                    let d = v - mu;
                    var += d * d;
                }
                var = var * inv_n;
                let rstd = T::ONE / (var + eps_t).sqrt();
                mean[r] = mu;
                inv_std[r] = rstd;
                let out = &mut data[r * width..(r + 1) * width];
                for ((o, &v), (&gv, &bv)) in out.iter_mut().zip(row).zip(g.iter().zip(b)) {
                    *o = (v - mu) * rstd * gv + bv;
                }
            }
        }
        let rq = self.requires(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            data,
            rq,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
        ))
    }

    /// Row lookup: `table[ids[i], :]` stacked. Ids out of range are an input
    /// error, not a panic.
    pub fn embedding(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        self.check(table)?;
        let tsh = &self.node(table).shape;
        if tsh.len() != 2 {
            return Err(Error::shape("embedding", format!("table {tsh:?}")));
        }
        let (vocab, dim) = (tsh[0], tsh[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocab {vocab}"
            )));
        }
        let tdata = &self.node(table).data;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(&tdata[i as usize * dim..(i as usize + 1) * dim]);
        }
        let rq = self.node(table).requires_grad;
        Ok(self.push(
            vec![ids.len(), dim],
            data,
            rq,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean next-token negative log likelihood over rows, as a scalar.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[u32]) -> Result<NodeId> {
        self.check(logits)?;
        let lsh = &self.node(logits).shape;
        if lsh.len() != 2 {
            return Err(Error::shape("cross_entropy", format!("logits {lsh:?}")));
        }
        let (rows, vocab) = (lsh[0], lsh[1]);
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{rows} logit rows vs {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Input(format!(
                "target id {bad} out of range for vocab {vocab}"
            )));
        }
        let ldata = &self.node(logits).data;
        let mut probs = vec![T::ZERO; ldata.len()];
        softmax_rows(ldata, &mut probs, vocab);
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            let row = &ldata[r * vocab..(r + 1) * vocab];
            let mut max = row[0];
            for &v in row {
                max = max.maximum(v);
            }
            let mut sum = T::ZERO;
            for &v in row {
                sum += (v - max).exp();
            }
            let lse = max.to_f64() + sum.to_f64().ln();
            total += lse - row[t as usize].to_f64();
        }
        let loss = T::from_f64(total / rows as f64);
        let rq = self.node(logits).requires_grad;
        Ok(self.push(
            vec![1],
            vec![loss],
            rq,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let c = T::from_f64(GELU_C);
        let aa = T::from_f64(GELU_A);
        let half = T::from_f64(0.5);
        let data = self
            .node(a)
            .data
            .iter()
            .map(|&x| {
                let u = c * (x + aa * x * x * x);
                half * x * (T::ONE + u.tanh())
            })
            .collect();
        let rq = self.node(a).requires_grad;
        Ok(self.push(self.node(a).shape.clone(), data, rq, Op::Gelu(a)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.check(a)?;
        let numel: usize = shape.iter().product();
        if numel != self.node(a).data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.node(a).shape),
            ));
        }
        let data = self.node(a).data.clone();
        let rq = self.node(a).requires_grad;
        Ok(self.push(shape, data, rq, Op::Reshape(a)))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no parts".to_string()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let base = self.node(parts[0]).shape.clone();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let sh = &self.node(p).shape;
            if sh.len() != base.len() {
                return Err(Error::shape("concat", format!("{base:?} vs {sh:?}")));
            }
            for (d, (&a, &b)) in base.iter().zip(sh.iter()).enumerate() {
                if d != axis && a != b {
                    return Err(Error::shape("concat", format!("{base:?} vs {sh:?}")));
                }
            }
            axis_total += sh[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![T::ZERO; outer * axis_total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let ext = self.node(p).shape[axis];
            let pdata = &self.node(p).data;
            for o in 0..outer {
                let src = &pdata[o * ext * inner..(o + 1) * ext * inner];
                let dst_start = (o * axis_total + offset) * inner;
                data[dst_start..dst_start + ext * inner].copy_from_slice(src);
            }
            offset += ext;
        }
        let rq = self.requires(parts);
        Ok(self.push(
            out_shape,
            data,
            rq,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Top-k per row with renormalized weights; ties pick the lower index.
    /// Non-selected entries are exactly zero in the output.
    pub fn topk_renorm(&mut self, probs: NodeId, k: usize) -> Result<NodeId> {
        self.check(probs)?;
        let shape = self.node(probs).shape.clone();
        if shape.len() != 2 {
            return Err(Error::shape("topk_renorm", format!("{shape:?}")));
        }
        let (rows, width) = (shape[0], shape[1]);
        if k == 0 || k > width {
            return Err(Error::Domain(format!("top-k {k} out of 1..={width}")));
        }
        let pdata = &self.node(probs).data;
        let mut data = vec![T::ZERO; pdata.len()];
        let mut selected = Vec::with_capacity(rows * k);
        for r in 0..rows {
            let row = &pdata[r * width..(r + 1) * width];
            let mut taken = vec![false; width];
            let mut sum = T::ZERO;
            for _ in 0..k {
                let mut best = usize::MAX;
                for (j, &v) in row.iter().enumerate() {
                    if !taken[j] && (best == usize::MAX || v > row[best]) {
                        best = j;
                    }
                }
                taken[best] = true;
                selected.push(best as u32);
                sum += row[best];
            }
            for &j in &selected[r * k..(r + 1) * k] {
                data[r * width + j as usize] = row[j as usize] / sum;
            }
        }
        let rq = self.node(probs).requires_grad;
        Ok(self.push(shape, data, rq, Op::TopKRenorm { probs, k, selected }))
    }

    /// Flat row-major `[rows * k]` list of selected indices for a
    /// `topk_renorm` node.
    pub fn topk_selected(&self, id: NodeId) -> Option<&[u32]> {
        match &self.node(id).op {
            Op::TopKRenorm { selected, .. } => Some(selected),
            _ => None,
        }
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: &[u32]) -> Result<NodeId> {
        self.check(x)?;
        let xsh = self.node(x).shape.clone();
        if xsh.len() < 2 {
            return Err(Error::shape("gather_rows", format!("{xsh:?}")));
        }
        let n = xsh[0];
        let inner: usize = xsh[1..].iter().product();
        if let Some(&bad) = rows.iter().find(|&&r| r as usize >= n) {
            return Err(Error::Index(format!("row {bad} out of range for {n}")));
        }
        let xdata = &self.node(x).data;
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&xdata[r as usize * inner..(r as usize + 1) * inner]);
        }
        let mut shape = xsh;
        shape[0] = rows.len();
        let rq = self.node(x).requires_grad;
        Ok(self.push(
            shape,
            data,
            rq,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Inverse of gather: place row `i` of `x` at `rows[i]` of a zero output
    /// with `out_rows` rows; repeated targets accumulate.
    pub fn scatter_rows(&mut self, x: NodeId, rows: &[u32], out_rows: usize) -> Result<NodeId> {
        self.check(x)?;
        let xsh = self.node(x).shape.clone();
        if xsh.len() < 2 || xsh[0] != rows.len() {
            return Err(Error::shape(
                "scatter_rows",
                format!("{xsh:?} with {} row targets", rows.len()),
            ));
        }
        let inner: usize = xsh[1..].iter().product();
        if let Some(&bad) = rows.iter().find(|&&r| r as usize >= out_rows) {
            return Err(Error::Index(format!(
                "row {bad} out of range for {out_rows}"
            )));
        }
        let xdata = &self.node(x).data;
        let mut data = vec![T::ZERO; out_rows * inner];
        for (i, &r) in rows.iter().enumerate() {
            let dst = &mut data[r as usize * inner..(r as usize + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(&xdata[i * inner..(i + 1) * inner]) {
                *d += s;
            }
        }
        let mut shape = xsh;
        shape[0] = out_rows;
        let rq = self.node(x).requires_grad;
        Ok(self.push(
            shape,
            data,
            rq,
            Op::ScatterRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn col_at_rows(&mut self, x: NodeId, col: usize, rows: &[u32]) -> Result<NodeId> {
        self.check(x)?;
        let xsh = &self.node(x).shape;
        if xsh.len() != 2 {
            return Err(Error::shape("col_at_rows", format!("{xsh:?}")));
        }
        let (n, width) = (xsh[0], xsh[1]);
        if col >= width {
            return Err(Error::Index(format!("column {col} out of range {width}")));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r as usize >= n) {
            return Err(Error::Index(format!("row {bad} out of range for {n}")));
        }
        let xdata = &self.node(x).data;
        let data = rows
            .iter()
            .map(|&r| xdata[r as usize * width + col])
            .collect();
        let rq = self.node(x).requires_grad;
        Ok(self.push(
            vec![rows.len()],
            data,
            rq,
            Op::ColAtRows {
                x,
                col,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(s)?;
        let xsh = self.node(x).shape.clone();
        if xsh.len() != 2 || self.node(s).shape != [xsh[0]] {
            return Err(Error::shape(
                "row_scale",
                format!("{xsh:?} scaled by {:?}", self.node(s).shape),
            ));
        }
        let width = xsh[1];
        let sdata = &self.node(s).data;
        let data = self
            .node(x)
            .data
            .chunks_exact(width)
            .zip(sdata)
            .flat_map(|(row, &sv)| row.iter().map(move |&v| v * sv))
            .collect();
        let rq = self.requires(&[x, s]);
        Ok(self.push(xsh, data, rq, Op::RowScale { x, s }))
    }

    /// `out[i] = x[map[i]]` element-level gather (total map).
    pub fn permute_elems(&mut self, x: NodeId, map: Vec<u32>, shape: Vec<usize>) -> Result<NodeId> {
        self.check(x)?;
        let numel: usize = shape.iter().product();
        if numel != map.len() {
            return Err(Error::shape(
                "permute_elems",
                format!("map len {} vs shape {shape:?}", map.len()),
            ));
        }
        let n = self.node(x).data.len();
        if let Some(&bad) = map.iter().find(|&&i| i as usize >= n) {
            return Err(Error::Index(format!("map entry {bad} out of range {n}")));
        }
        let xdata = &self.node(x).data;
        let data = map.iter().map(|&i| xdata[i as usize]).collect();
        let rq = self.node(x).requires_grad;
        Ok(self.push(shape, data, rq, Op::PermuteElems { x, map }))
    }

    /// `[b*s, h*dh] -> [b*h, s, dh]`
    pub fn split_heads(
        &mut self,
        x: NodeId,
        b: usize,
        s: usize,
        h: usize,
        dh: usize,
    ) -> Result<NodeId> {
        let xsh = &self.node(x).shape;
        if xsh != &[b * s, h * dh] {
            return Err(Error::shape(
                "split_heads",
                format!("{xsh:?} vs [{b}*{s}, {h}*{dh}]"),
            ));
        }
        let mut map = Vec::with_capacity(b * s * h * dh);
        for bi in 0..b {
            for hi in 0..h {
                for si in 0..s {
                    let src_row = bi * s + si;
                    let base = src_row * h * dh + hi * dh;
                    for d in 0..dh {
                        map.push((base + d) as u32);
                    }
                }
            }
        }
        self.permute_elems(x, map, vec![b * h, s, dh])
    }

    /// `[b*h, s, dh] -> [b*s, h*dh]`
    pub fn merge_heads(
        &mut self,
        x: NodeId,
        b: usize,
        s: usize,
        h: usize,
        dh: usize,
    ) -> Result<NodeId> {
        let xsh = &self.node(x).shape;
        if xsh != &[b * h, s, dh] {
            return Err(Error::shape(
                "merge_heads",
                format!("{xsh:?} vs [{b}*{h}, {s}, {dh}]"),
            ));
        }
        let mut map = Vec::with_capacity(b * s * h * dh);
        for bi in 0..b {
            for si in 0..s {
                for hi in 0..h {
                    let src_batch = bi * h + hi;
                    let base = (src_batch * s + si) * dh;
                    for d in 0..dh {
                        map.push((base + d) as u32);
                    }
                }
            }
        }
        self.permute_elems(x, map, vec![b * s, h * dh])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let mut total = T::ZERO;
        for &v in &self.node(a).data {
            total += v;
        }
        let rq = self.node(a).requires_grad;
        Ok(self.push(vec![1], vec![total], rq, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let n = self.node(a).data.len();
        let mut total = T::ZERO;
        for &v in &self.node(a).data {
            total += v;
        }
        let v = total * T::from_f64(1.0 / n as f64);
        let rq = self.node(a).requires_grad;
        Ok(self.push(vec![1], vec![v], rq, Op::Mean(a)))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients of `requires_grad` nodes
    /// accumulate across calls; use [`Graph::zero_grads`] between steps.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check(loss)?;
        if self.node(loss).data.len() != 1 {
            return Err(Error::Structural(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        if !self.node(loss).requires_grad {
            return Err(Error::Structural(
                "loss does not depend on any requires_grad leaf".to_string(),
            ));
        }
        // Fresh per-pass buffers so repeated backward calls accumulate
        // exactly one extra pass each time.
        let mut work: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        work[loss.0] = Some(vec![T::ONE]);

        for idx in (0..=loss.0).rev() {
            let Some(out_grad) = work[idx].take() else {
                continue;
            };
            // Stash this pass's contribution into the persistent buffer.
            {
                let node = &mut self.nodes[idx];
                let acc = node
                    .grad
                    .get_or_insert_with(|| vec![T::ZERO; node.data.len()]);
                for (a, &g) in acc.iter_mut().zip(&out_grad) {
                    *a += g;
                }
            }
            self.propagate(idx, &out_grad, &mut work);
        }
        Ok(())
    }

    fn want(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn stage(work: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
        work[id.0].get_or_insert_with(|| vec![T::ZERO; len])
    }

    fn propagate(&self, idx: usize, g: &[T], work: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &p in &[*a, *b] {
                    if self.want(p) {
                        let buf = Self::stage(work, p, self.nodes[p.0].data.len());
                        for (o, &gv) in buf.iter_mut().zip(g) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if self.want(*a) {
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                if self.want(*bias) {
                    let n = self.nodes[bias.0].data.len();
                    let buf = Self::stage(work, *bias, n);
                    for row in g.chunks_exact(n) {
                        for (o, &gv) in buf.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::AddBroadcast(a, b) => {
                if self.want(*a) {
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                if self.want(*b) {
                    let n = self.nodes[b.0].data.len();
                    let buf = Self::stage(work, *b, n);
                    for blk in g.chunks_exact(n) {
                        for (o, &gv) in buf.iter_mut().zip(blk) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.want(*a) {
                    let bdata = &self.nodes[b.0].data;
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for ((o, &gv), &bv) in buf.iter_mut().zip(g).zip(bdata) {
                        *o += gv * bv;
                    }
                }
                if self.want(*b) {
                    let adata = &self.nodes[a.0].data;
                    let buf = Self::stage(work, *b, self.nodes[b.0].data.len());
                    for ((o, &gv), &av) in buf.iter_mut().zip(g).zip(adata) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.want(*a) {
                    let c = *c;
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv * c;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let _ = m;
                if self.want(*a) {
                    let bdata = &self.nodes[b.0].data;
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    mm_nt(g, bdata, buf, n, k);
                }
                if self.want(*b) {
                    let adata = &self.nodes[a.0].data;
                    let buf = Self::stage(work, *b, self.nodes[b.0].data.len());
                    mm_tn(adata, g, buf, k, n);
                }
            }
            Op::Bmm { a, b, transpose_b } => {
                let (batch, m, k) = (
                    self.nodes[a.0].shape[0],
                    self.nodes[a.0].shape[1],
                    self.nodes[a.0].shape[2],
                );
                let n = node.shape[2];
                if self.want(*a) {
                    let bdata = &self.nodes[b.0].data;
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let os = &mut buf[bi * m * k..(bi + 1) * m * k];
                        if *transpose_b {
                            // y = a . b^T  =>  da = g . b
                            let bs = &bdata[bi * n * k..(bi + 1) * n * k];
                            mm_nn(gs, bs, os, n, k);
                        } else {
                            let bs = &bdata[bi * k * n..(bi + 1) * k * n];
                            mm_nt(gs, bs, os, n, k);
                        }
                    }
                }
                if self.want(*b) {
                    let adata = &self.nodes[a.0].data;
                    let buf = Self::stage(work, *b, self.nodes[b.0].data.len());
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let as_ = &adata[bi * m * k..(bi + 1) * m * k];
                        if *transpose_b {
                            // y = a . b^T  =>  db = g^T . a
                            let os = &mut buf[bi * n * k..(bi + 1) * n * k];
                            mm_tn(gs, as_, os, n, k);
                        } else {
                            let os = &mut buf[bi * k * n..(bi + 1) * k * n];
                            mm_tn(as_, gs, os, k, n);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if self.want(*a) {
                    let width = *node.shape.last().unwrap();
                    let y = &node.data;
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for ((yrow, grow), orow) in y
                        .chunks_exact(width)
                        .zip(g.chunks_exact(width))
                        .zip(buf.chunks_exact_mut(width))
                    {
                        let mut dot = T::ZERO;
                        for (&yv, &gv) in yrow.iter().zip(grow) {
                            dot += yv * gv;
                        }
                        for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let width = *node.shape.last().unwrap();
                let rows = node.data.len() / width;
                let xdata = &self.nodes[x.0].data;
                let gdata = &self.nodes[gamma.0].data;
                let inv_n = T::from_f64(1.0 / width as f64);
                if self.want(*x) {
                    // dx = r * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                    let buf = Self::stage(work, *x, xdata.len());
                    for r in 0..rows {
                        let xr = &xdata[r * width..(r + 1) * width];
                        let gr = &g[r * width..(r + 1) * width];
                        let out = &mut buf[r * width..(r + 1) * width];
                        let (mu, rstd) = (mean[r], inv_std[r]);
                        let mut s1 = T::ZERO;
                        let mut s2 = T::ZERO;
                        for ((&xv, &gv), &gain) in xr.iter().zip(gr).zip(gdata) {
                            let xhat = (xv - mu) * rstd;
                            let dxhat = gv * gain;
                            s1 += dxhat;
                            s2 += dxhat * xhat;
                        }
                        s1 = s1 * inv_n;
                        s2 = s2 * inv_n;
                        for ((o, (&xv, &gv)), &gain) in
                            out.iter_mut().zip(xr.iter().zip(gr)).zip(gdata)
                        {
                            let xhat = (xv - mu) * rstd;
                            let dxhat = gv * gain;
                            *o += rstd * (dxhat - s1 - xhat * s2);
                        }
                    }
                }
                if self.want(*gamma) {
                    let buf = Self::stage(work, *gamma, width);
                    for r in 0..rows {
                        let xr = &xdata[r * width..(r + 1) * width];
                        let gr = &g[r * width..(r + 1) * width];
                        let (mu, rstd) = (mean[r], inv_std[r]);
                        for ((o, &xv), &gv) in buf.iter_mut().zip(xr).zip(gr) {
                            *o += gv * (xv - mu) * rstd;
                        }
                    }
                }
                if self.want(*beta) {
                    let buf = Self::stage(work, *beta, width);
                    for gr in g.chunks_exact(width) {
                        for (o, &gv) in buf.iter_mut().zip(gr) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if self.want(*table) {
                    let dim = self.nodes[table.0].shape[1];
                    let buf = Self::stage(work, *table, self.nodes[table.0].data.len());
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut buf[id as usize * dim..(id as usize + 1) * dim];
                        let src = &g[i * dim..(i + 1) * dim];
                        for (o, &gv) in dst.iter_mut().zip(src) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.want(*logits) {
                    let vocab = self.nodes[logits.0].shape[1];
                    let rows = targets.len();
                    let scale = g[0] * T::from_f64(1.0 / rows as f64);
                    let buf = Self::stage(work, *logits, self.nodes[logits.0].data.len());
                    for (r, &t) in targets.iter().enumerate() {
                        let prow = &probs[r * vocab..(r + 1) * vocab];
                        let orow = &mut buf[r * vocab..(r + 1) * vocab];
                        for (o, &p) in orow.iter_mut().zip(prow) {
                            *o += scale * p;
                        }
                        orow[t as usize] -= scale;
                    }
                }
            }
            Op::Gelu(a) => {
                if self.want(*a) {
                    let c = T::from_f64(GELU_C);
                    let aa = T::from_f64(GELU_A);
                    let half = T::from_f64(0.5);
                    let three = T::from_f64(3.0);
                    let xdata = &self.nodes[a.0].data;
                    let buf = Self::stage(work, *a, xdata.len());
                    for ((o, &x), &gv) in buf.iter_mut().zip(xdata).zip(g) {
                        let u = c * (x + aa * x * x * x);
                        let t = u.tanh();
                        let du = c * (T::ONE + three * aa * x * x);
                        let dy = half * (T::ONE + t) + half * x * (T::ONE - t * t) * du;
                        *o += gv * dy;
                    }
                }
            }
            Op::Reshape(a) => {
                if self.want(*a) {
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let out_shape = &node.shape;
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis];
                let mut offset = 0usize;
                for &p in parts {
                    let ext = self.nodes[p.0].shape[axis];
                    if self.want(p) {
                        let buf = Self::stage(work, p, self.nodes[p.0].data.len());
                        for o in 0..outer {
                            let src_start = (o * total + offset) * inner;
                            let dst = &mut buf[o * ext * inner..(o + 1) * ext * inner];
                            for (ov, &gv) in
                                dst.iter_mut().zip(&g[src_start..src_start + ext * inner])
                            {
                                *ov += gv;
                            }
                        }
                    }
                    offset += ext;
                }
            }
            Op::TopKRenorm { probs, k, selected } => {
                if self.want(*probs) {
                    let width = node.shape[1];
                    let rows = node.shape[0];
                    let pdata = &self.nodes[probs.0].data;
                    let buf = Self::stage(work, *probs, pdata.len());
                    for r in 0..rows {
                        let sel = &selected[r * k..(r + 1) * k];
                        let prow = &pdata[r * width..(r + 1) * width];
                        let grow = &g[r * width..(r + 1) * width];
                        let mut s = T::ZERO;
                        for &j in sel {
                            s += prow[j as usize];
                        }
                        let mut weighted = T::ZERO;
                        for &j in sel {
                            weighted += grow[j as usize] * prow[j as usize];
                        }
                        let s2 = s * s;
                        for &j in sel {
                            buf[r * width + j as usize] += grow[j as usize] / s - weighted / s2;
                        }
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                if self.want(*x) {
                    let inner: usize = self.nodes[x.0].shape[1..].iter().product();
                    let buf = Self::stage(work, *x, self.nodes[x.0].data.len());
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut buf[r as usize * inner..(r as usize + 1) * inner];
                        for (o, &gv) in dst.iter_mut().zip(&g[i * inner..(i + 1) * inner]) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::ScatterRows { x, rows } => {
                if self.want(*x) {
                    let inner: usize = self.nodes[x.0].shape[1..].iter().product();
                    let buf = Self::stage(work, *x, self.nodes[x.0].data.len());
                    for (i, &r) in rows.iter().enumerate() {
                        let src = &g[r as usize * inner..(r as usize + 1) * inner];
                        let dst = &mut buf[i * inner..(i + 1) * inner];
                        for (o, &gv) in dst.iter_mut().zip(src) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::ColAtRows { x, col, rows } => {
                if self.want(*x) {
                    let width = self.nodes[x.0].shape[1];
                    let buf = Self::stage(work, *x, self.nodes[x.0].data.len());
                    for (i, &r) in rows.iter().enumerate() {
                        buf[r as usize * width + col] += g[i];
                    }
                }
            }
            Op::RowScale { x, s } => {
                let width = node.shape[1];
                if self.want(*x) {
                    let sdata = &self.nodes[s.0].data;
                    let buf = Self::stage(work, *x, self.nodes[x.0].data.len());
                    for ((orow, grow), &sv) in buf
                        .chunks_exact_mut(width)
                        .zip(g.chunks_exact(width))
                        .zip(sdata)
                    {
                        for (o, &gv) in orow.iter_mut().zip(grow) {
                            *o += gv * sv;
                        }
                    }
                }
                if self.want(*s) {
                    let xdata = &self.nodes[x.0].data;
                    let buf = Self::stage(work, *s, self.nodes[s.0].data.len());
                    for ((o, xrow), grow) in buf
                        .iter_mut()
                        .zip(xdata.chunks_exact(width))
                        .zip(g.chunks_exact(width))
                    {
                        let mut dot = T::ZERO;
                        for (&xv, &gv) in xrow.iter().zip(grow) {
                            dot += xv * gv;
                        }
                        *o += dot;
                    }
                }
            }
            Op::PermuteElems { x, map } => {
                if self.want(*x) {
                    let buf = Self::stage(work, *x, self.nodes[x.0].data.len());
                    for (i, &src) in map.iter().enumerate() {
                        buf[src as usize] += g[i];
                    }
                }
            }
            Op::Sum(a) => {
                if self.want(*a) {
                    let gv = g[0];
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for o in buf.iter_mut() {
                        *o += gv;
                    }
                }
            }
            Op::Mean(a) => {
                if self.want(*a) {
                    let n = self.nodes[a.0].data.len();
                    let gv = g[0] * T::from_f64(1.0 / n as f64);
                    let buf = Self::stage(work, *a, self.nodes[a.0].data.len());
                    for o in buf.iter_mut() {
                        *o += gv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf_from(vec![3], vec![1.0, 2.0, 3.0], true);
        let loss = g.sum(x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf_from(vec![1], vec![2.0], true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn backward_accumulates_without_zeroing() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf_from(vec![2], vec![3.0, -1.0], true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        let once: Vec<f64> = g.grad(x).unwrap().to_vec();
        g.backward(loss).unwrap();
        let twice: Vec<f64> = g.grad(x).unwrap().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf_from(vec![2], vec![1.0, 2.0], true);
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn shape_error_names_op() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf_from(vec![2, 3], vec![0.0; 6], false);
        let b = g.leaf_from(vec![2, 2], vec![0.0; 4], false);
        let err = g.matmul(a, b).unwrap_err();
        match err {
            Error::Shape { op, .. } => assert_eq!(op, "matmul"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn embedding_rejects_out_of_range_ids() {
        let mut g = Graph::<f64>::new();
        let table = g.leaf_from(vec![4, 2], vec![0.0; 8], false);
        assert!(matches!(
            g.embedding(table, &[0, 4]).unwrap_err(),
            Error::Input(_)
        ));
    }

    #[test]
    fn topk_ties_pick_lower_index() {
        let mut g = Graph::<f64>::new();
        let p = g.leaf_from(vec![1, 4], vec![0.25, 0.25, 0.25, 0.25], false);
        let w = g.topk_renorm(p, 2).unwrap();
        assert_eq!(g.topk_selected(w).unwrap(), &[0, 1]);
        let d = g.data(w);
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        assert_eq!(d[2], 0.0);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn concat_roundtrip_axis0() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf_from(vec![1, 2], vec![1.0, 2.0], false);
        let b = g.leaf_from(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0], false);
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.shape(c), &[3, 2]);
        assert_eq!(g.data(c), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf_from(vec![2, 3], vec![0.1, 2.0, -1.0, 5.0, 5.0, 5.0], false);
        let s = g.softmax(a).unwrap();
        for row in g.data(s).chunks_exact(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
