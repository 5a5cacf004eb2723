//! Pre-norm causal transformer stack with learned positional embeddings.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::adapters::{adapter_forward, adapter_prefix, AdapterSite};
use crate::config::{BackboneConfig, ModelConfig};
use crate::error::Result;
use crate::graph::{Graph, SeqLayout, Var};
use crate::params::ParamStore;
use crate::peft::{lora_forward, lora_names};
use crate::tensor::Tensor;

pub(crate) fn init<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &BackboneConfig, rng: &mut R) -> Result<()> {
    let d = cfg.d_model;
    let hidden = cfg.ffn_mult * d;
    let std = cfg.init_std;
    store.insert("pos.embedding", Tensor::randn(&[cfg.n_ctx, d], std, rng))?;
    for i in 0..cfg.n_layers {
        for ln in ["ln1", "ln2"] {
            store.insert(&format!("layer.{i}.{ln}.gamma"), Tensor::ones(&[d]))?;
            store.insert(&format!("layer.{i}.{ln}.beta"), Tensor::zeros(&[d]))?;
        }
        for w in ["w_q", "w_k", "w_v", "w_o"] {
            store.insert(&format!("layer.{i}.attn.{w}"), Tensor::randn(&[d, d], std, rng))?;
        }
        store.insert(&format!("layer.{i}.ffn.w1"), Tensor::randn(&[d, hidden], std, rng))?;
        store.insert(&format!("layer.{i}.ffn.b1"), Tensor::zeros(&[hidden]))?;
        store.insert(&format!("layer.{i}.ffn.w2"), Tensor::randn(&[hidden, d], std, rng))?;
        store.insert(&format!("layer.{i}.ffn.b2"), Tensor::zeros(&[d]))?;
    }
    store.insert("final_ln.gamma", Tensor::ones(&[d]))?;
    store.insert("final_ln.beta", Tensor::zeros(&[d]))?;
    Ok(())
}

/// Hidden states after the final layer norm plus the attention node of every
/// block (for inspecting attention weights).
pub struct BackboneOutput {
    pub hidden: Var,
    pub attention: Vec<Var>,
}

fn projection(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, layer: usize, u: Var, target: char) -> Result<Var> {
    let w = g.param(store, &format!("layer.{layer}.attn.w_{target}"))?;
    let (a_name, b_name) = lora_names(layer, target);
    if store.contains(&a_name) {
        let a = g.param(store, &a_name)?;
        let b = g.param(store, &b_name)?;
        lora_forward(g, u, w, a, b, &cfg.lora)
    } else {
        g.matmul(u, w)
    }
}

fn layer_norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, eps: f64) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let beta = g.param(store, &format!("{prefix}.beta"))?;
    g.layer_norm(x, gamma, beta, eps)
}

/// Multi-head self-attention sublayer: `Concat(head_1..head_h)·W_o`.
pub fn multi_head(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, layer: usize, u: Var, layout: SeqLayout) -> Result<(Var, Var)> {
    let q = projection(g, store, cfg, layer, u, 'q')?;
    let k = projection(g, store, cfg, layer, u, 'k')?;
    let v = projection(g, store, cfg, layer, u, 'v')?;
    let heads = g.attention(q, k, v, layout, cfg.backbone.n_heads, true)?;
    let wo = g.param(store, &format!("layer.{layer}.attn.w_o"))?;
    Ok((g.matmul(heads, wo)?, heads))
}

/// `X' = X + MSA(LN1 X)`, `Y = X' + FFN(LN2 X')`, with adapters applied to
/// each sublayer output when present.
pub fn block_forward(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, layer: usize, x: Var, layout: SeqLayout) -> Result<(Var, Var)> {
    let eps = cfg.backbone.ln_eps;
    let u = layer_norm(g, store, &format!("layer.{layer}.ln1"), x, eps)?;
    let (mut attn, probs) = multi_head(g, store, cfg, layer, u, layout)?;
    let pre = adapter_prefix(layer, AdapterSite::PostAttention);
    if store.contains(&format!("{pre}.w_down")) {
        attn = adapter_forward(g, store, &pre, attn, &cfg.adapter)?;
    }
    let x1 = g.add(x, attn)?;

    let u2 = layer_norm(g, store, &format!("layer.{layer}.ln2"), x1, eps)?;
    let w1 = g.param(store, &format!("layer.{layer}.ffn.w1"))?;
    let b1 = g.param(store, &format!("layer.{layer}.ffn.b1"))?;
    let w2 = g.param(store, &format!("layer.{layer}.ffn.w2"))?;
    let b2 = g.param(store, &format!("layer.{layer}.ffn.b2"))?;
    let h = g.matmul(u2, w1)?;
    let h = g.add_bias(h, b1)?;
    let h = g.gelu(h);
    let f = g.matmul(h, w2)?;
    let mut f = g.add_bias(f, b2)?;
    let pre = adapter_prefix(layer, AdapterSite::PostFfn);
    if store.contains(&format!("{pre}.w_down")) {
        f = adapter_forward(g, store, &pre, f, &cfg.adapter)?;
    }
    Ok((g.add(x1, f)?, probs))
}

/// Add positional rows, run every block, apply the final layer norm.
pub fn forward(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, tokens: Var, layout: SeqLayout) -> Result<BackboneOutput> {
    let pos = g.param(store, "pos.embedding")?;
    let mut x = g.add_positional(tokens, pos, layout)?;
    let mut attention = Vec::with_capacity(cfg.backbone.n_layers);
    for layer in 0..cfg.backbone.n_layers {
        let (y, probs) = block_forward(g, store, cfg, layer, x, layout)?;
        attention.push(probs);
        x = y;
    }
    let hidden = layer_norm(g, store, "final_ln", x, cfg.backbone.ln_eps)?;
    Ok(BackboneOutput { hidden, attention })
}
