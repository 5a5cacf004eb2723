use alloc::format;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub n_ctx: usize,
    pub ln_eps: f64,
    /// Std of the Gaussian used for projection and embedding weights.
    pub init_std: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { d_model: 64, n_heads: 4, n_layers: 6, ffn_mult: 4, n_ctx: 160, ln_eps: 1e-5, init_std: 0.02 }
    }
}

impl BackboneConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads)));
        }
        if self.n_layers == 0 || self.ffn_mult == 0 || self.n_ctx == 0 {
            return Err(Error::Config("layers, ffn_mult and n_ctx must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 4, alpha: 32.0, dropout: 0.1, init_std: 0.02 }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Layer split for stage 1: the first `frozen_layers` keep attention fully
/// frozen, the last `lora_layers` carry LoRA on the query and key projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezePolicy {
    pub frozen_layers: usize,
    pub lora_layers: usize,
}

impl Default for FreezePolicy {
    fn default() -> Self {
        Self { frozen_layers: 4, lora_layers: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterConfig {
    pub rank: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { rank: 32, dropout: 0.1, init_std: 0.02 }
    }
}

/// Everything needed to build and run a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_vars: usize,
    pub backbone: BackboneConfig,
    pub encoder: EncoderConfig,
    pub lora: LoraConfig,
    pub freeze: FreezePolicy,
    pub adapter: AdapterConfig,
}

impl ModelConfig {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            backbone: BackboneConfig::default(),
            encoder: EncoderConfig::default(),
            lora: LoraConfig::default(),
            freeze: FreezePolicy::default(),
            adapter: AdapterConfig::default(),
        }
    }

    /// Values carried by one data token.
    pub fn token_width(&self) -> usize {
        match self.encoder.kind {
            crate::encoder::EncoderKind::Avs => self.n_vars,
            crate::encoder::EncoderKind::Flat => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 {
            return Err(Error::Config("at least one input variable is required".into()));
        }
        self.backbone.validate()?;
        self.encoder.validate()?;
        crate::peft::check_policy(&self.freeze, self.backbone.n_layers)?;
        let dropouts = [self.lora.dropout, self.adapter.dropout];
        if dropouts.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        if self.adapter.rank == 0 {
            return Err(Error::Config("adapter bottleneck must be positive".into()));
        }
        Ok(())
    }
}
