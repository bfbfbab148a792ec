use std::sync::Arc;

use super::tensor::{gemm, Scalar, Tensor};
use super::TensorError;

/// Logit assigned to masked attention entries before the softmax.
pub const MASKED_LOGIT: f64 = -1e9;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch geometry of a fused multi-head attention call.
///
/// Queries are `batch*q_len` rows, keys/values `batch*k_len` rows. Keys at
/// positions `>= key_lens[b]` are padding; with `causal` set, key `j` is hidden
/// from query `i` whenever `j > i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub causal: bool,
    pub key_lens: Vec<usize>,
}

impl AttentionLayout {
    fn visible(&self, b: usize, i: usize, j: usize) -> bool {
        j < self.key_lens[b] && !(self.causal && j > i)
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddBias(Var, Var),
    Relu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        smoothing: F,
        probs: Vec<F>,
        count: usize,
    },
    Mse(Var, Var),
    Sum(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Adds an input tensor. Gradients are only accumulated for leaves created
    /// with `requires_grad` and for nodes depending on them.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Adds a leaf sharing storage with an existing tensor.
    pub fn leaf_shared(&mut self, value: Arc<Tensor<F>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shared_value(&self, v: Var) -> Arc<Tensor<F>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First element of a node's value; meant for scalar losses.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value.item()
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<F>> {
        self.nodes[v.0].grad.take()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(name, self.shape(a), self.shape(b)));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let t = self.value(a);
        let out = Tensor::from_fn(t.shape(), |i| t.data()[i] * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Adds a bias vector to every row (the only broadcast supported).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rank() != 1 || tx.cols() != tb.numel() {
            return Err(dim_err("add_bias", tx.shape(), tb.shape()));
        }
        let c = tb.numel();
        let out = Tensor::from_fn(tx.shape(), |i| tx.data()[i] + tb.data()[i % c]);
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::from_fn(t.shape(), |i| t.data()[i].max(F::zero()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Row lookup: `out[r] = table[ids[r]]`. Used for embeddings and for
    /// selecting or replicating rows.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(dim_err("gather_rows", t.shape(), &[ids.len()]));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    len: rows,
                });
            }
            out.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), cols], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(dim_err("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(dim_err("transpose", t.shape(), &[]));
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let out = Tensor::from_fn(&[n, m], |i| t.data()[(i % m) * n + i / m]);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| out[idx(j)]).fold(F::neg_infinity(), F::max);
                let mut sum = F::zero();
                for j in 0..n {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] / sum;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Normalizes each row over the last dimension, then applies `gain` and
    /// `bias`. `eps` sits inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if tg.numel() != d || tb.numel() != d {
            return Err(dim_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let df = F::of(d as f64);
        let mut xhat = vec![F::zero(); rows * d];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * d];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<F>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean token cross-entropy over unmasked rows (`mask[t] == true` means
    /// the position counts). With `smoothing = ε` the target distribution is
    /// `(1-ε)·onehot + ε/V`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
        smoothing: F,
    ) -> Result<Var, TensorError> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != targets.len() || mask.len() != targets.len() {
            return Err(dim_err("cross_entropy", t.shape(), &[targets.len()]));
        }
        let (rows, v) = (t.shape()[0], t.shape()[1]);
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::DegenerateBatch);
        }
        let vf = F::of(v as f64);
        let mut probs = vec![F::zero(); rows * v];
        let mut total = F::zero();
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            if targets[r] >= v {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: targets[r],
                    len: v,
                });
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let sum: F = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
            let nll = lse - row[targets[r]];
            let uniform = lse - row.iter().copied().sum::<F>() / vf;
            total += (F::one() - smoothing) * nll + smoothing * uniform;
        }
        let loss = total / F::of(count as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                smoothing,
                probs,
                count,
            },
            rg,
        ))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("mse", ta.shape(), tb.shape()));
        }
        if ta.numel() == 0 {
            return Err(TensorError::Empty("mse"));
        }
        let s: F = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let loss = s / F::of(ta.numel() as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Fused scaled dot-product attention over all heads:
    /// `softmax(Q_h K_hᵀ / √d_head + mask) V_h`, heads concatenated along
    /// columns. The output projection is applied by the caller.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
    ) -> Result<Var, TensorError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        let l = &layout;
        if tq.rank() != 2
            || tk.shape() != tv.shape()
            || tk.cols() != d
            || tq.shape()[0] != l.batch * l.q_len
            || tk.shape()[0] != l.batch * l.k_len
            || l.key_lens.len() != l.batch
            || l.heads == 0
            || d % l.heads != 0
        {
            return Err(dim_err("attention", tq.shape(), tk.shape()));
        }
        let dh = d / l.heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let masked = F::of(MASKED_LOGIT);
        let mut probs = vec![F::zero(); l.batch * l.heads * l.q_len * l.k_len];
        let mut out = vec![F::zero(); l.batch * l.q_len * d];
        let mut logits = vec![F::zero(); l.k_len];
        for b in 0..l.batch {
            for h in 0..l.heads {
                let off = h * dh;
                for i in 0..l.q_len {
                    let qrow = &tq.row(b * l.q_len + i)[off..off + dh];
                    let mut max = F::neg_infinity();
                    for (j, lg) in logits.iter_mut().enumerate() {
                        *lg = if l.visible(b, i, j) {
                            let krow = &tk.row(b * l.k_len + j)[off..off + dh];
                            dot(qrow, krow) * scale
                        } else {
                            masked
                        };
                        max = max.max(*lg);
                    }
                    let base = ((b * l.heads + h) * l.q_len + i) * l.k_len;
                    let p = &mut probs[base..base + l.k_len];
                    let mut sum = F::zero();
                    for (pj, &lj) in p.iter_mut().zip(&logits[..l.k_len]) {
                        *pj = (lj - max).exp();
                        sum += *pj;
                    }
                    let orow = &mut out[(b * l.q_len + i) * d + off..][..dh];
                    for (j, pj) in p.iter_mut().enumerate() {
                        *pj = *pj / sum;
                        if *pj == F::zero() {
                            continue;
                        }
                        let vrow = &tv.row(b * l.k_len + j)[off..off + dh];
                        for c in 0..dh {
                            orow[c] += *pj * vrow[c];
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![l.batch * l.q_len, d], out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            rg,
        ))
    }

    /// Attention weights recorded by an [`Graph::attention`] node, laid out as
    /// `[batch][head][query][key]`.
    pub fn attention_weights(&self, node: Var) -> Option<&[F]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar loss. Gradients of every node that
    /// (transitively) depends on a `requires_grad` leaf are populated and
    /// summed across fan-out.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.vjp(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (var, cg) in contributions {
                self.accumulate(var, cg);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<F>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => node.grad = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn vjp(&self, idx: usize, g: &[F]) -> Vec<(Var, Vec<F>)> {
        let mut res = Vec::new();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.needs(*a) {
                    let mut ga = vec![F::zero(); m * k];
                    gemm(m, n, k, g, false, tb.data(), true, &mut ga, false);
                    res.push((*a, ga));
                }
                if self.needs(*b) {
                    let mut gb = vec![F::zero(); k * n];
                    gemm(k, m, n, ta.data(), true, g, false, &mut gb, false);
                    res.push((*b, gb));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.iter().map(|&x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                res.push((*a, g.iter().zip(tb.data()).map(|(&x, &y)| x * y).collect()));
                res.push((*b, g.iter().zip(ta.data()).map(|(&x, &y)| x * y).collect()));
            }
            Op::Scale(a, s) => res.push((*a, g.iter().map(|&x| x * *s).collect())),
            Op::AddBias(x, bias) => {
                res.push((*x, g.to_vec()));
                if self.needs(*bias) {
                    let c = self.value(*bias).numel();
                    let mut gb = vec![F::zero(); c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    res.push((*bias, gb));
                }
            }
            Op::Relu(x) => {
                let t = self.value(*x);
                let gx = g
                    .iter()
                    .zip(t.data())
                    .map(|(&gv, &xv)| if xv > F::zero() { gv } else { F::zero() })
                    .collect();
                res.push((*x, gx));
            }
            Op::Gather { table, ids } => {
                if self.needs(*table) {
                    let t = self.value(*table);
                    let cols = t.cols();
                    let mut gt = vec![F::zero(); t.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * cols..(id + 1) * cols];
                        dst.iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(a, &b)| *a += b);
                    }
                    res.push((*table, gt));
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    res.push((p, g[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::Transpose(x) => {
                let t = self.value(*x);
                let (m, n) = (t.shape()[0], t.shape()[1]);
                // g is n×m; the input gradient is its transpose.
                let gx = (0..m * n).map(|i| g[(i % n) * m + i / n]).collect();
                res.push((*x, gx));
            }
            Op::Softmax { x, axis } => {
                let y = &self.nodes[idx].value;
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut gx = vec![F::zero(); yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: F = (0..n).map(|j| g[at(j)] * yd[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = yd[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let tg = self.value(*gain).data();
                let d = tg.len();
                let rows = rstd.len();
                let df = F::of(d as f64);
                let mut gx = vec![F::zero(); rows * d];
                let mut gg = vec![F::zero(); d];
                let mut gb = vec![F::zero(); d];
                let mut dxhat = vec![F::zero(); d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    for c in 0..d {
                        dxhat[c] = gr[c] * tg[c];
                        gg[c] += gr[c] * hr[c];
                        gb[c] += gr[c];
                    }
                    let mean_d = dxhat.iter().copied().sum::<F>() / df;
                    let mean_dh = dxhat.iter().zip(hr).map(|(&a, &b)| a * b).sum::<F>() / df;
                    for c in 0..d {
                        gx[r * d + c] = rstd[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                    }
                }
                res.push((*x, gx));
                res.push((*gain, gg));
                res.push((*bias, gb));
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                smoothing,
                probs,
                count,
            } => {
                let v = self.value(*logits).cols();
                let scale = g[0] / F::of(*count as f64);
                let uniform = *smoothing / F::of(v as f64);
                let mut gl = vec![F::zero(); probs.len()];
                for (r, &on) in mask.iter().enumerate() {
                    if !on {
                        continue;
                    }
                    for c in 0..v {
                        let mut q = uniform;
                        if c == targets[r] {
                            q += F::one() - *smoothing;
                        }
                        gl[r * v + c] = (probs[r * v + c] - q) * scale;
                    }
                }
                res.push((*logits, gl));
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = g[0] * F::of(2.0) / F::of(ta.numel() as f64);
                let diff: Vec<F> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(&x, &y)| (x - y) * k)
                    .collect();
                if self.needs(*b) {
                    res.push((*b, diff.iter().map(|&x| -x).collect()));
                }
                res.push((*a, diff));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; self.value(*x).numel()])),
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => {
                let (gq, gk, gv) = self.attention_vjp(*q, *k, *v, layout, probs, g);
                res.push((*q, gq));
                res.push((*k, gk));
                res.push((*v, gv));
            }
        }
        res
    }

    fn attention_vjp(
        &self,
        q: Var,
        k: Var,
        v: Var,
        l: &AttentionLayout,
        probs: &[F],
        g: &[F],
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        let dh = d / l.heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let mut gq = vec![F::zero(); tq.numel()];
        let mut gk = vec![F::zero(); tk.numel()];
        let mut gv = vec![F::zero(); tv.numel()];
        let mut ds = vec![F::zero(); l.k_len];
        for b in 0..l.batch {
            for h in 0..l.heads {
                let off = h * dh;
                for i in 0..l.q_len {
                    let qi = b * l.q_len + i;
                    let base = ((b * l.heads + h) * l.q_len + i) * l.k_len;
                    let p = &probs[base..base + l.k_len];
                    let go = &g[qi * d + off..qi * d + off + dh];
                    let mut acc = F::zero();
                    for j in 0..l.k_len {
                        if p[j] == F::zero() {
                            ds[j] = F::zero();
                            continue;
                        }
                        let vrow = &tv.row(b * l.k_len + j)[off..off + dh];
                        let dp = dot(go, vrow);
                        ds[j] = dp;
                        acc += p[j] * dp;
                        let gvrow = &mut gv[(b * l.k_len + j) * d + off..][..dh];
                        for c in 0..dh {
                            gvrow[c] += p[j] * go[c];
                        }
                    }
                    let qrow = &tq.row(qi)[off..off + dh];
                    for j in 0..l.k_len {
                        if p[j] == F::zero() {
                            continue;
                        }
                        let s = p[j] * (ds[j] - acc) * scale;
                        let kj = b * l.k_len + j;
                        let krow = &tk.row(kj)[off..off + dh];
                        let gqrow = &mut gq[qi * d + off..][..dh];
                        for c in 0..dh {
                            gqrow[c] += s * krow[c];
                        }
                        let gkrow = &mut gk[kj * d + off..][..dh];
                        for c in 0..dh {
                            gkrow[c] += s * qrow[c];
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
