//! Low-rank query/key branches and the stage-1 freeze policy.

use alloc::format;

use rand::Rng;

use crate::config::{FreezePolicy, LoraConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamCounts, ParamStore};
use crate::tensor::Tensor;

/// Parameter names of the LoRA factors on one projection.
pub fn lora_names(layer: usize, target: char) -> (alloc::string::String, alloc::string::String) {
    (format!("layer.{layer}.attn.lora_{target}.a"), format!("layer.{layer}.attn.lora_{target}.b"))
}

pub fn check_rank(cfg: &LoraConfig, d_in: usize, d_out: usize) -> Result<()> {
    if cfg.rank == 0 || cfg.rank >= d_in.min(d_out) {
        return Err(Error::Config(format!("LoRA rank {} must be in 1..{}", cfg.rank, d_in.min(d_out))));
    }
    Ok(())
}

/// Create `A [rank×d_out]` (Gaussian) and `B [d_in×rank]` (zeros).
pub fn init_lora<R: Rng + ?Sized>(
    store: &mut ParamStore,
    a_name: &str,
    b_name: &str,
    d_in: usize,
    d_out: usize,
    cfg: &LoraConfig,
    rng: &mut R,
) -> Result<()> {
    check_rank(cfg, d_in, d_out)?;
    store.insert(a_name, Tensor::randn(&[cfg.rank, d_out], cfg.init_std, rng))?;
    store.insert(b_name, Tensor::zeros(&[d_in, cfg.rank]))?;
    Ok(())
}

/// `H·W + (α/r)·dropout(H)·B·A`
pub fn lora_forward(g: &mut Graph, h: Var, w: Var, a: Var, b: Var, cfg: &LoraConfig) -> Result<Var> {
    let base = g.matmul(h, w)?;
    let hd = g.dropout(h, cfg.dropout);
    let hb = g.matmul(hd, b)?;
    let delta = g.matmul(hb, a)?;
    let delta = g.scale(delta, cfg.scaling());
    g.add(base, delta)
}

/// Attach LoRA to `W_q` and `W_k` of the last `lora_layers` blocks.
pub fn attach_lora<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    check_policy(&cfg.freeze, cfg.backbone.n_layers)?;
    let d = cfg.backbone.d_model;
    for layer in cfg.freeze.frozen_layers..cfg.backbone.n_layers {
        for target in ['q', 'k'] {
            let (a, b) = lora_names(layer, target);
            init_lora(store, &a, &b, d, d, &cfg.lora, rng)?;
        }
    }
    Ok(())
}

pub fn check_policy(policy: &FreezePolicy, n_layers: usize) -> Result<()> {
    if policy.frozen_layers + policy.lora_layers != n_layers {
        return Err(Error::Config(format!(
            "frozen layers {} + LoRA layers {} != {} layers",
            policy.frozen_layers, policy.lora_layers, n_layers
        )));
    }
    Ok(())
}

/// Whether a parameter is trainable during stage 1.
pub fn stage1_trainable(name: &str) -> bool {
    name.contains(".ln1.")
        || name.contains(".ln2.")
        || name.starts_with("final_ln.")
        || name.starts_with("pos.")
        || name.starts_with("encoder.")
        || name.contains(".lora_")
        || name.starts_with("pretrain_head.")
}

/// Set the stage-1 trainable mask and report the resulting counts.
pub fn apply_freeze_policy(store: &mut ParamStore, cfg: &ModelConfig) -> Result<ParamCounts> {
    check_policy(&cfg.freeze, cfg.backbone.n_layers)?;
    store.set_mask_by(stage1_trainable);
    Ok(store.counts())
}
