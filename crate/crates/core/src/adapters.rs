//! Serial bottleneck adapters for stage 2.

use alloc::format;
use alloc::string::String;

use rand::Rng;

use crate::config::{AdapterConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamCounts, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterSite {
    PostAttention,
    PostFfn,
}

impl AdapterSite {
    pub fn tag(&self) -> &'static str {
        match self {
            AdapterSite::PostAttention => "adapter_attn",
            AdapterSite::PostFfn => "adapter_ffn",
        }
    }
}

pub fn adapter_prefix(layer: usize, site: AdapterSite) -> String {
    format!("layer.{layer}.{}", site.tag())
}

pub fn has_adapters(store: &ParamStore) -> bool {
    store.names().any(|n| n.contains(".adapter_"))
}

/// `W_down [d×r]`, `b_down`, `W_up [r×d]`, `b_up`; the up-projection starts at zero.
pub fn init_adapter<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, cfg: &AdapterConfig, rng: &mut R) -> Result<()> {
    store.insert(&format!("{prefix}.w_down"), Tensor::randn(&[d, cfg.rank], cfg.init_std, rng))?;
    store.insert(&format!("{prefix}.b_down"), Tensor::zeros(&[cfg.rank]))?;
    store.insert(&format!("{prefix}.w_up"), Tensor::zeros(&[cfg.rank, d]))?;
    store.insert(&format!("{prefix}.b_up"), Tensor::zeros(&[d]))?;
    Ok(())
}

/// `H + W_up·dropout(gelu(W_down·H + b_down)) + b_up`
pub fn adapter_forward(g: &mut Graph, store: &ParamStore, prefix: &str, h: Var, cfg: &AdapterConfig) -> Result<Var> {
    let wd = g.param(store, &format!("{prefix}.w_down"))?;
    let bd = g.param(store, &format!("{prefix}.b_down"))?;
    let wu = g.param(store, &format!("{prefix}.w_up"))?;
    let bu = g.param(store, &format!("{prefix}.b_up"))?;
    let z = g.matmul(h, wd)?;
    let z = g.add_bias(z, bd)?;
    let z = g.gelu(z);
    let z = g.dropout(z, cfg.dropout);
    let u = g.matmul(z, wu)?;
    let u = g.add_bias(u, bu)?;
    g.add(h, u)
}

/// Insert two adapters per block and make them the only trainable backbone
/// parameters. Names accepted by `head_trainable` (task heads) stay trainable.
pub fn insert_adapters<R: Rng + ?Sized>(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    rng: &mut R,
    head_trainable: impl Fn(&str) -> bool,
) -> Result<ParamCounts> {
    if has_adapters(store) {
        return Err(Error::AdaptersPresent);
    }
    for layer in 0..cfg.backbone.n_layers {
        for site in [AdapterSite::PostAttention, AdapterSite::PostFfn] {
            init_adapter(store, &adapter_prefix(layer, site), cfg.backbone.d_model, &cfg.adapter, rng)?;
        }
    }
    store.set_mask_by(|n| n.contains(".adapter_") || head_trainable(n));
    Ok(store.counts())
}
