//! Forward kernels shared by the autodiff tape and the standalone operations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim, Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * phi_cdf(x)
}

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    phi_cdf(x) + x * normal_pdf(x)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(dim("matmul", format!("expected 2-D operands, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let (p, q) = (a.shape()[0], a.shape()[1]);
    let (q2, r) = (b.shape()[0], b.shape()[1]);
    if q != q2 {
        return Err(dim("matmul", format!("inner extents {q} and {q2} differ")));
    }
    Tensor::new(vec![p, r], kernels::gemm(a.data(), b.data(), p, q, r))
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NumericDomain("softmax_rows"));
    }
    let (rows, cols) = x.dims2();
    let mut out = x.data().to_vec();
    for r in 0..rows {
        softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Per-row normalisation statistics kept for the backward pass.
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &[f64],
    rows: usize,
    d: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, LayerNormCache) {
    let mut out = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    let inv_d = 1.0 / d as f64;
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() * inv_d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
        let denom = libm::sqrt(var + eps);
        // A constant row with eps = 0 normalises to zeros rather than NaN.
        let is = if denom > 0.0 { 1.0 / denom } else { 0.0 };
        inv_std[r] = is;
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * gamma[c] + beta[c];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (rows, d) = x.dims2();
    if gamma.len() != d || beta.len() != d {
        return Err(dim("layer_norm", format!("last extent {d}, gamma {}, beta {}", gamma.len(), beta.len())));
    }
    let (out, _) = layer_norm_forward(x.data(), rows, d, gamma.data(), beta.data(), eps);
    Tensor::new(x.shape().to_vec(), out)
}

pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Scaled dot-product attention for one head.
///
/// `Softmax(QKᵀ/√d_k)·V`; with `causal`, position `i` only attends to `j ≤ i`.
pub fn attention_head(q: &Tensor, k: &Tensor, v: &Tensor, causal: bool) -> Result<Tensor> {
    let (n, dk) = q.dims2();
    if k.dims2() != (n, dk) || v.dims2() != (n, dk) {
        return Err(dim(
            "attention_head",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let mut probs = vec![0.0; n * n];
    let mut out = vec![0.0; n * dk];
    let kt = kernels::transpose(k.data(), n, dk);
    attend(q.data(), &kt, v.data(), n, dk, causal, &mut probs, &mut out);
    Tensor::new(vec![n, dk], out)
}

/// Core of one head: fills `probs[n×n]` and `out[n×dk]` (both zeroed by the caller).
/// `kt` is Kᵀ laid out `[dk×n]`.
pub(crate) fn attend(
    q: &[f64],
    kt: &[f64],
    v: &[f64],
    n: usize,
    dk: usize,
    causal: bool,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let scale = 1.0 / libm::sqrt(dk as f64);
    kernels::gemm_acc(q, kt, probs, n, dk, n);
    for i in 0..n {
        let span = if causal { i + 1 } else { n };
        let row = &mut probs[i * n..(i + 1) * n];
        for s in row[..span].iter_mut() {
            *s *= scale;
        }
        softmax_in_place(&mut row[..span]);
        for s in row[span..].iter_mut() {
            *s = 0.0;
        }
    }
    kernels::gemm_acc(probs, v, out, n, n, dk);
}
