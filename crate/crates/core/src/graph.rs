//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order; `backward` walks the tape from the
//! end, so gradient accumulation order is the reverse tape order and fully
//! deterministic.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim, Error, Result};
use crate::kernels;
use crate::ops;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

/// Batched sequence layout of a `[batch * seq, width]` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub batch: usize,
    pub seq: usize,
}

impl SeqLayout {
    pub fn rows(&self) -> usize {
        self.batch * self.seq
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    MaskMul { x: Var, mask: Vec<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu { x: Var, cdf: Vec<f64> },
    Softmax { x: Var },
    Attention { q: Var, k: Var, v: Var, layout: SeqLayout, heads: usize, causal: bool, probs: Vec<f64> },
    AddPositional { x: Var, pos: Var, layout: SeqLayout },
    Conv1d { x: Var, w: Var, cols: Vec<f64>, layout: SeqLayout, kernel: usize, padding: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    ConcatSeq { a: Var, a_len: usize, b: Var, b_len: usize, batch: usize },
    Embedding { table: Var, ids: Vec<usize> },
    SquaredError { pred: Var, target: Vec<f64>, weights: Option<Vec<f64>>, scale: f64 },
    SumSquares { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// A single forward/backward evaluation.
pub struct Graph {
    nodes: Vec<Node>,
    bound: BTreeMap<String, Var>,
    rng: Option<ChaCha8Rng>,
    grad_all_params: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Evaluation mode: dropout disabled.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bound: BTreeMap::new(), rng: None, grad_all_params: false }
    }

    /// Training mode: dropout masks are drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self { rng: Some(rng), ..Self::new() }
    }

    /// Track gradients for frozen parameters too (used by gradient checks).
    pub fn with_all_param_grads(mut self) -> Self {
        self.grad_all_params = true;
        self
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Hand the dropout generator back, e.g. to continue the run's stream.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf for a stored parameter; repeated lookups of one name share a node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = store.get(name)?.clone();
        let rg = self.grad_all_params || store.is_trainable(name);
        let v = self.leaf(t, rg);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    /// Gradients of every bound parameter that tracked one.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.bound {
            let node = &self.nodes[v.0];
            if node.requires_grad {
                let g = node.grad.clone().unwrap_or_else(|| vec![0.0; node.value.len()]);
                out.insert(name.clone(), Tensor::new(node.value.shape().to_vec(), g).expect("shape"));
            }
        }
        out
    }

    /// Attention probabilities `[batch, heads, seq, seq]` recorded by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<(&[f64], SeqLayout, usize)> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, layout, heads, .. } => Some((probs, *layout, *heads)),
            _ => None,
        }
    }

    // ---- operations -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims(a);
        let (q2, r) = self.dims(b);
        if q != q2 {
            return Err(dim("matmul", format!("[{p}x{q}] · [{q2}x{r}]")));
        }
        let out = kernels::gemm(self.value(a).data(), self.value(b).data(), p, q, r);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![p, r], out)?, rg, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(dim("add", format!("{:?} + {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Add { a, b }))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(dim("mul", format!("{:?} * {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Mul { a, b }))
    }

    /// `x[rows×c] + bias[c]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, c) = self.dims(x);
        if self.value(bias).len() != c {
            return Err(dim("add_bias", format!("width {c}, bias {}", self.value(bias).len())));
        }
        let mut data = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for r in 0..rows {
            kernels::add_assign(&mut data[r * c..(r + 1) * c], b);
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, rg, Op::AddBias { x, bias }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("shape");
        let rg = self.rg(x);
        self.push(t, rg, Op::Scale { x, factor })
    }

    /// Inverted dropout; identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        let keep = 1.0 - rate;
        let n = self.nodes[x.0].value.len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("shape");
        let rg = self.rg(x);
        self.push(t, rg, Op::MaskMul { x, mask })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, d) = self.dims(x);
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(dim("layer_norm", format!("width {d}")));
        }
        let (out, cache) = ops::layer_norm_forward(
            self.value(x).data(),
            rows,
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(t, rg, Op::LayerNorm { x, gamma, beta, xhat: cache.xhat, inv_std: cache.inv_std }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let cdf: Vec<f64> = self.value(x).data().iter().map(|&v| ops::phi_cdf(v)).collect();
        let data = self.value(x).data().iter().zip(&cdf).map(|(v, c)| v * c).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("shape");
        let rg = self.rg(x);
        self.push(t, rg, Op::Gelu { x, cdf })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = ops::softmax_rows(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Softmax { x }))
    }

    /// Multi-head scaled dot-product attention over `[batch*seq, d]` inputs.
    ///
    /// Heads are contiguous column slices of width `d / heads`; the output is
    /// the concatenation of the heads (before any output projection).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: SeqLayout, heads: usize, causal: bool) -> Result<Var> {
        let (rows, d) = self.dims(q);
        if self.dims(k) != (rows, d) || self.dims(v) != (rows, d) || rows != layout.rows() {
            return Err(dim("attention", format!("q/k/v must be [{}x{d}]", layout.rows())));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
        }
        let (n, dk) = (layout.seq, d / heads);
        let mut out = vec![0.0; rows * d];
        let mut probs = vec![0.0; layout.batch * heads * n * n];
        let mut qh = vec![0.0; n * dk];
        let mut kh = vec![0.0; n * dk];
        let mut vh = vec![0.0; n * dk];
        let mut oh = vec![0.0; n * dk];
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        for b in 0..layout.batch {
            for h in 0..heads {
                gather_head(qd, &mut qh, b * n, n, d, h * dk, dk);
                gather_head(kd, &mut kh, b * n, n, d, h * dk, dk);
                gather_head(vd, &mut vh, b * n, n, d, h * dk, dk);
                let kt = kernels::transpose(&kh, n, dk);
                oh.iter_mut().for_each(|x| *x = 0.0);
                let p = &mut probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
                ops::attend(&qh, &kt, &vh, n, dk, causal, p, &mut oh);
                scatter_head(&oh, &mut out, b * n, n, d, h * dk, dk);
            }
        }
        let t = Tensor::new(vec![rows, d], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(t, rg, Op::Attention { q, k, v, layout, heads, causal, probs }))
    }

    /// Adds rows `0..seq` of `pos` to every sequence in `x`.
    pub fn add_positional(&mut self, x: Var, pos: Var, layout: SeqLayout) -> Result<Var> {
        let (rows, d) = self.dims(x);
        let (n_ctx, pd) = self.dims(pos);
        if rows != layout.rows() || pd != d {
            return Err(dim("add_positional", format!("x [{rows}x{d}], pos [{n_ctx}x{pd}]")));
        }
        if layout.seq > n_ctx {
            return Err(Error::SequenceTooLong { len: layout.seq, n_ctx });
        }
        let mut data = self.value(x).data().to_vec();
        let p = self.value(pos).data();
        for b in 0..layout.batch {
            for j in 0..layout.seq {
                let r = b * layout.seq + j;
                kernels::add_assign(&mut data[r * d..(r + 1) * d], &p[j * d..(j + 1) * d]);
            }
        }
        let t = Tensor::new(vec![rows, d], data)?;
        let rg = self.rg(x) || self.rg(pos);
        Ok(self.push(t, rg, Op::AddPositional { x, pos, layout }))
    }

    /// 1-D convolution along the sequence axis with zero padding and stride 1.
    ///
    /// `x` is `[batch*seq, c_in]`; `w` is `[kernel*c_in, c_out]` where rows
    /// `t*c_in..(t+1)*c_in` hold tap `t`, applied to input offset `t - padding`.
    /// Output length equals `seq + 2*padding - kernel + 1`, which must be `seq`.
    pub fn conv1d(&mut self, x: Var, w: Var, layout: SeqLayout, kernel: usize, padding: usize) -> Result<Var> {
        let (rows, c_in) = self.dims(x);
        let (wr, c_out) = self.dims(w);
        if rows != layout.rows() || wr != kernel * c_in {
            return Err(dim("conv1d", format!("x [{rows}x{c_in}], w [{wr}x{c_out}], kernel {kernel}")));
        }
        if 2 * padding + 1 != kernel {
            return Err(Error::Config(format!(
                "kernel {kernel} with padding {padding} does not preserve sequence length"
            )));
        }
        let cols = im2col(self.value(x).data(), layout, c_in, kernel, padding);
        let out = kernels::gemm(&cols, self.value(w).data(), rows, kernel * c_in, c_out);
        let t = Tensor::new(vec![rows, c_out], out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(t, rg, Op::Conv1d { x, w, cols, layout, kernel, padding }))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (n, c) = self.dims(x);
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(dim("gather_rows", format!("row {bad} of {n}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            data.extend_from_slice(&src[r * c..(r + 1) * c]);
        }
        let t = Tensor::new(vec![rows.len(), c], data)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::GatherRows { x, rows }))
    }

    /// Per sequence: the `a_len` rows of `a` followed by the `b_len` rows of `b`.
    pub fn concat_seq(&mut self, a: Var, a_len: usize, b: Var, b_len: usize, batch: usize) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ca != cb || ra != batch * a_len || rb != batch * b_len {
            return Err(dim("concat_seq", format!("[{ra}x{ca}] ++ [{rb}x{cb}]")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity((ra + rb) * ca);
        for s in 0..batch {
            data.extend_from_slice(&ad[s * a_len * ca..(s + 1) * a_len * ca]);
            data.extend_from_slice(&bd[s * b_len * ca..(s + 1) * b_len * ca]);
        }
        let t = Tensor::new(vec![ra + rb, ca], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::ConcatSeq { a, a_len, b, b_len, batch }))
    }

    pub fn embedding(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let (vocab, d) = self.dims(table);
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(dim("embedding", format!("id {bad} outside vocabulary of {vocab}")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in &ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(t, rg, Op::Embedding { table, ids }))
    }

    /// `scale · Σ w·(pred − target)²` as a scalar node; `weights` defaults to 1.
    pub fn squared_error(&mut self, pred: Var, target: Vec<f64>, weights: Option<Vec<f64>>, scale: f64) -> Result<Var> {
        let p = self.value(pred).data();
        if target.len() != p.len() || weights.as_ref().is_some_and(|w| w.len() != p.len()) {
            return Err(dim("squared_error", format!("pred {}, target {}", p.len(), target.len())));
        }
        let mut s = 0.0;
        for (i, (pv, tv)) in p.iter().zip(&target).enumerate() {
            let e = pv - tv;
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            s += w * e * e;
        }
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(scale * s), rg, Op::SquaredError { pred, target, weights, scale }))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::SumSquares { x })
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulate d(loss)/d(node) into every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(dim("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NumericDomain("backward"));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = node.grad.take() else { continue };
            backprop(before, node, &gout);
        }
        Ok(())
    }
}

fn gather_head(src: &[f64], dst: &mut [f64], row0: usize, n: usize, d: usize, c0: usize, dk: usize) {
    for i in 0..n {
        dst[i * dk..(i + 1) * dk].copy_from_slice(&src[(row0 + i) * d + c0..(row0 + i) * d + c0 + dk]);
    }
}

fn scatter_head(src: &[f64], dst: &mut [f64], row0: usize, n: usize, d: usize, c0: usize, dk: usize) {
    for i in 0..n {
        dst[(row0 + i) * d + c0..(row0 + i) * d + c0 + dk].copy_from_slice(&src[i * dk..(i + 1) * dk]);
    }
}

fn im2col(x: &[f64], layout: SeqLayout, c_in: usize, kernel: usize, padding: usize) -> Vec<f64> {
    let n = layout.seq;
    let width = kernel * c_in;
    let mut cols = vec![0.0; layout.rows() * width];
    for b in 0..layout.batch {
        for i in 0..n {
            let row = &mut cols[(b * n + i) * width..(b * n + i + 1) * width];
            for t in 0..kernel {
                let src = i as isize + t as isize - padding as isize;
                if src >= 0 && (src as usize) < n {
                    let s = b * n + src as usize;
                    row[t * c_in..(t + 1) * c_in].copy_from_slice(&x[s * c_in..(s + 1) * c_in]);
                }
            }
        }
    }
    cols
}

fn accumulate(nodes: &mut [Node], v: Var, delta: Vec<f64>) {
    let node = &mut nodes[v.0];
    match &mut node.grad {
        Some(g) => kernels::add_assign(g, &delta),
        None => node.grad = Some(delta),
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn backprop(nodes: &mut [Node], node: &Node, gout: &[f64]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (p, q) = nodes[a.0].value.dims2();
            let (_, r) = nodes[b.0].value.dims2();
            if wants(nodes, *a) {
                let mut da = vec![0.0; p * q];
                kernels::gemm_a_bt_acc(gout, nodes[b.0].value.data(), &mut da, p, r, q);
                accumulate(nodes, *a, da);
            }
            if wants(nodes, *b) {
                let mut db = vec![0.0; q * r];
                kernels::gemm_at_b_acc(nodes[a.0].value.data(), gout, &mut db, p, q, r);
                accumulate(nodes, *b, db);
            }
        }
        Op::Add { a, b } => {
            if wants(nodes, *a) {
                accumulate(nodes, *a, gout.to_vec());
            }
            if wants(nodes, *b) {
                accumulate(nodes, *b, gout.to_vec());
            }
        }
        Op::Mul { a, b } => {
            if wants(nodes, *a) {
                let d = gout.iter().zip(nodes[b.0].value.data()).map(|(g, y)| g * y).collect();
                accumulate(nodes, *a, d);
            }
            if wants(nodes, *b) {
                let d = gout.iter().zip(nodes[a.0].value.data()).map(|(g, x)| g * x).collect();
                accumulate(nodes, *b, d);
            }
        }
        Op::AddBias { x, bias } => {
            if wants(nodes, *bias) {
                let c = nodes[bias.0].value.len();
                let mut db = vec![0.0; c];
                for row in gout.chunks_exact(c) {
                    kernels::add_assign(&mut db, row);
                }
                accumulate(nodes, *bias, db);
            }
            if wants(nodes, *x) {
                accumulate(nodes, *x, gout.to_vec());
            }
        }
        Op::Scale { x, factor } => {
            if wants(nodes, *x) {
                accumulate(nodes, *x, gout.iter().map(|g| g * factor).collect());
            }
        }
        Op::MaskMul { x, mask } => {
            if wants(nodes, *x) {
                accumulate(nodes, *x, gout.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let d = nodes[gamma.0].value.len();
            let rows = inv_std.len();
            if wants(nodes, *gamma) || wants(nodes, *beta) {
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for r in 0..rows {
                    for c in 0..d {
                        let g = gout[r * d + c];
                        dg[c] += g * xhat[r * d + c];
                        db[c] += g;
                    }
                }
                if wants(nodes, *gamma) {
                    accumulate(nodes, *gamma, dg);
                }
                if wants(nodes, *beta) {
                    accumulate(nodes, *beta, db);
                }
            }
            if wants(nodes, *x) {
                let gm = nodes[gamma.0].value.data();
                let mut dx = vec![0.0; rows * d];
                let inv_d = 1.0 / d as f64;
                for r in 0..rows {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..d {
                        let dh = gout[r * d + c] * gm[c];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * d + c];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for c in 0..d {
                        let dh = gout[r * d + c] * gm[c];
                        dx[r * d + c] = inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
                    }
                }
                accumulate(nodes, *x, dx);
            }
        }
        Op::Gelu { x, cdf } => {
            if wants(nodes, *x) {
                let d = gout
                    .iter()
                    .zip(nodes[x.0].value.data())
                    .zip(cdf)
                    .map(|((g, &v), c)| g * (c + v * ops::normal_pdf(v)))
                    .collect();
                accumulate(nodes, *x, d);
            }
        }
        Op::Softmax { x } => {
            if wants(nodes, *x) {
                let (rows, c) = node.value.dims2();
                let y = node.value.data();
                let mut dx = vec![0.0; rows * c];
                for r in 0..rows {
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &gout[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(nodes, *x, dx);
            }
        }
        Op::Attention { q, k, v, layout, heads, causal, probs } => {
            let (dq, dk_, dv) = attention_backward(nodes, *q, *k, *v, *layout, *heads, *causal, probs, gout);
            if wants(nodes, *q) {
                accumulate(nodes, *q, dq);
            }
            if wants(nodes, *k) {
                accumulate(nodes, *k, dk_);
            }
            if wants(nodes, *v) {
                accumulate(nodes, *v, dv);
            }
        }
        Op::AddPositional { x, pos, layout } => {
            if wants(nodes, *pos) {
                let (n_ctx, d) = nodes[pos.0].value.dims2();
                let mut dp = vec![0.0; n_ctx * d];
                for b in 0..layout.batch {
                    for j in 0..layout.seq {
                        let r = b * layout.seq + j;
                        kernels::add_assign(&mut dp[j * d..(j + 1) * d], &gout[r * d..(r + 1) * d]);
                    }
                }
                accumulate(nodes, *pos, dp);
            }
            if wants(nodes, *x) {
                accumulate(nodes, *x, gout.to_vec());
            }
        }
        Op::Conv1d { x, w, cols, layout, kernel, padding } => {
            let (rows, c_in) = nodes[x.0].value.dims2();
            let (_, c_out) = nodes[w.0].value.dims2();
            let width = kernel * c_in;
            if wants(nodes, *w) {
                let mut dw = vec![0.0; width * c_out];
                kernels::gemm_at_b_acc(cols, gout, &mut dw, rows, width, c_out);
                accumulate(nodes, *w, dw);
            }
            if wants(nodes, *x) {
                let mut dcols = vec![0.0; rows * width];
                kernels::gemm_a_bt_acc(gout, nodes[w.0].value.data(), &mut dcols, rows, c_out, width);
                let n = layout.seq;
                let mut dx = vec![0.0; rows * c_in];
                for b in 0..layout.batch {
                    for i in 0..n {
                        for t in 0..*kernel {
                            let src = i as isize + t as isize - *padding as isize;
                            if src >= 0 && (src as usize) < n {
                                let s = b * n + src as usize;
                                let from = &dcols[(b * n + i) * width + t * c_in..(b * n + i) * width + (t + 1) * c_in];
                                kernels::add_assign(&mut dx[s * c_in..(s + 1) * c_in], from);
                            }
                        }
                    }
                }
                accumulate(nodes, *x, dx);
            }
        }
        Op::GatherRows { x, rows } => {
            if wants(nodes, *x) {
                let (n, c) = nodes[x.0].value.dims2();
                let mut dx = vec![0.0; n * c];
                for (o, &r) in rows.iter().enumerate() {
                    kernels::add_assign(&mut dx[r * c..(r + 1) * c], &gout[o * c..(o + 1) * c]);
                }
                accumulate(nodes, *x, dx);
            }
        }
        Op::ConcatSeq { a, a_len, b, b_len, batch } => {
            let c = node.value.dims2().1;
            let seq = a_len + b_len;
            if wants(nodes, *a) {
                let mut da = Vec::with_capacity(batch * a_len * c);
                for s in 0..*batch {
                    da.extend_from_slice(&gout[s * seq * c..(s * seq + a_len) * c]);
                }
                accumulate(nodes, *a, da);
            }
            if wants(nodes, *b) {
                let mut db = Vec::with_capacity(batch * b_len * c);
                for s in 0..*batch {
                    db.extend_from_slice(&gout[(s * seq + a_len) * c..(s + 1) * seq * c]);
                }
                accumulate(nodes, *b, db);
            }
        }
        Op::Embedding { table, ids } => {
            if wants(nodes, *table) {
                let (vocab, d) = nodes[table.0].value.dims2();
                let mut dt = vec![0.0; vocab * d];
                for (o, &i) in ids.iter().enumerate() {
                    kernels::add_assign(&mut dt[i * d..(i + 1) * d], &gout[o * d..(o + 1) * d]);
                }
                accumulate(nodes, *table, dt);
            }
        }
        Op::SquaredError { pred, target, weights, scale } => {
            if wants(nodes, *pred) {
                let g = gout[0] * 2.0 * scale;
                let p = nodes[pred.0].value.data();
                let d = p
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(i, (pv, tv))| g * weights.as_ref().map_or(1.0, |w| w[i]) * (pv - tv))
                    .collect();
                accumulate(nodes, *pred, d);
            }
        }
        Op::SumSquares { x } => {
            if wants(nodes, *x) {
                let g = gout[0] * 2.0;
                let d = nodes[x.0].value.data().iter().map(|v| g * v).collect();
                accumulate(nodes, *x, d);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    nodes: &[Node],
    q: Var,
    k: Var,
    v: Var,
    layout: SeqLayout,
    heads: usize,
    causal: bool,
    probs: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (rows, d) = nodes[q.0].value.dims2();
    let (n, dk) = (layout.seq, d / heads);
    let scale = 1.0 / libm::sqrt(dk as f64);
    let (qd, kd, vd) = (nodes[q.0].value.data(), nodes[k.0].value.data(), nodes[v.0].value.data());
    let mut dq = vec![0.0; rows * d];
    let mut dkk = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut qh = vec![0.0; n * dk];
    let mut kh = vec![0.0; n * dk];
    let mut vh = vec![0.0; n * dk];
    let mut doh = vec![0.0; n * dk];
    let mut dqh = vec![0.0; n * dk];
    let mut dkh = vec![0.0; n * dk];
    let mut dvh = vec![0.0; n * dk];
    let mut ds = vec![0.0; n];
    for b in 0..layout.batch {
        for h in 0..heads {
            gather_head(qd, &mut qh, b * n, n, d, h * dk, dk);
            gather_head(kd, &mut kh, b * n, n, d, h * dk, dk);
            gather_head(vd, &mut vh, b * n, n, d, h * dk, dk);
            gather_head(gout, &mut doh, b * n, n, d, h * dk, dk);
            let vt = kernels::transpose(&vh, n, dk);
            dqh.iter_mut().for_each(|x| *x = 0.0);
            dkh.iter_mut().for_each(|x| *x = 0.0);
            dvh.iter_mut().for_each(|x| *x = 0.0);
            let p = &probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
            for i in 0..n {
                let span = if causal { i + 1 } else { n };
                let prow = &p[i * n..i * n + span];
                let go = &doh[i * dk..(i + 1) * dk];
                // dV[j] += P[i,j] · dO[i]
                for (j, &pij) in prow.iter().enumerate() {
                    for (dvv, &g) in dvh[j * dk..(j + 1) * dk].iter_mut().zip(go) {
                        *dvv += pij * g;
                    }
                }
                // dP[i,j] = dO[i] · V[j]
                let dsr = &mut ds[..span];
                dsr.iter_mut().for_each(|x| *x = 0.0);
                for c in 0..dk {
                    let gc = go[c];
                    for (s, &vv) in dsr.iter_mut().zip(&vt[c * n..c * n + span]) {
                        *s += gc * vv;
                    }
                }
                let dot: f64 = prow.iter().zip(dsr.iter()).map(|(a, b)| a * b).sum();
                for (s, &pij) in dsr.iter_mut().zip(prow) {
                    *s = pij * (*s - dot) * scale;
                }
                let qi = &qh[i * dk..(i + 1) * dk];
                let dqi = &mut dqh[i * dk..(i + 1) * dk];
                for (j, &s) in dsr.iter().enumerate() {
                    for (dqv, &kv) in dqi.iter_mut().zip(&kh[j * dk..(j + 1) * dk]) {
                        *dqv += s * kv;
                    }
                    for (dkv, &qv) in dkh[j * dk..(j + 1) * dk].iter_mut().zip(qi) {
                        *dkv += s * qv;
                    }
                }
            }
            scatter_head(&dqh, &mut dq, b * n, n, d, h * dk, dk);
            scatter_head(&dkh, &mut dkk, b * n, n, d, h * dk, dk);
            scatter_head(&dvh, &mut dv, b * n, n, d, h * dk, dk);
        }
    }
    (dq, dkk, dv)
}
