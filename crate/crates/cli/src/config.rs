//! Run configuration: architecture, PEFT, training and ablation settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use softsense_core::tasks::TrainConfig;
use softsense_core::{AdapterConfig, BackboneConfig, EncoderConfig, EncoderKind, FreezePolicy, LoraConfig, ModelConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderChoice {
    Avs,
    Flat,
}

/// Which parameters train in stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PeftMode {
    /// Bottleneck adapters plus the task head.
    Adapter,
    /// Layer norms plus the task head; no adapters.
    LnOnly,
}

/// JSON run configuration. Unknown keys are rejected; absent keys take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Convolution kernel, padding and stride of the window encoder.
    pub k: usize,
    pub p: usize,
    pub s: usize,
    /// Model width.
    pub d: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Positional table size.
    pub n_ctx: usize,
    pub r_lora: usize,
    pub alpha: f64,
    pub lora_dropout: f64,
    /// Leading layers without LoRA.
    #[serde(rename = "K")]
    pub frozen_layers: usize,
    /// Trailing layers with LoRA on the query and key projections.
    #[serde(rename = "L")]
    pub lora_layers: usize,
    pub r_adapter: usize,
    pub adapter_dropout: f64,
    pub lr: f64,
    pub batch: usize,
    /// Samples per forward pass (gradient accumulation); 0 uses `batch`.
    pub micro_batch: usize,
    pub epochs: usize,
    /// Epoch budget of the anomaly reconstructor.
    pub anomaly_epochs: usize,
    pub patience: usize,
    pub window: usize,
    /// Window length of the fully textual prompt task.
    pub prompt_window: usize,
    pub train_stride: usize,
    pub val_stride: usize,
    pub test_stride: usize,
    /// Step between reconstruction windows when scoring anomalies.
    pub detect_stride: usize,
    pub seed: u64,
    pub quantile: f64,
    pub mask_ratios: Vec<f64>,
    pub train_fraction: f64,
    pub encoder: EncoderChoice,
    pub peft_mode: PeftMode,
    /// Train a fresh model end to end instead of adapting an SSFM.
    pub no_pretrain: bool,
    /// Insert adapters into a fresh backbone that never went through stage 1.
    pub skip_stage1: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 3,
            p: 1,
            s: 1,
            d: 64,
            heads: 4,
            ffn_mult: 4,
            n_ctx: 160,
            r_lora: 4,
            alpha: 32.0,
            lora_dropout: 0.1,
            frozen_layers: 4,
            lora_layers: 2,
            r_adapter: 32,
            adapter_dropout: 0.1,
            lr: 1e-4,
            batch: 64,
            micro_batch: 0,
            epochs: 10,
            anomaly_epochs: 5,
            patience: 5,
            window: 96,
            prompt_window: 20,
            train_stride: 1,
            val_stride: 1,
            test_stride: 1,
            detect_stride: 8,
            seed: 42,
            quantile: 0.99,
            mask_ratios: vec![0.1, 0.2, 0.3, 0.4],
            train_fraction: 1.0,
            encoder: EncoderChoice::Avs,
            peft_mode: PeftMode::Adapter,
            no_pretrain: false,
            skip_stage1: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Defaults when `path` is absent.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> CliResult<()> {
        let positive = [
            ("batch", self.batch),
            ("window", self.window),
            ("prompt_window", self.prompt_window),
            ("train_stride", self.train_stride),
            ("val_stride", self.val_stride),
            ("test_stride", self.test_stride),
            ("detect_stride", self.detect_stride),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::usage(format!("config: {name} must be positive")));
        }
        if !(self.lr > 0.0) {
            return Err(CliError::usage("config: lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.quantile) {
            return Err(CliError::usage("config: quantile must lie in [0, 1]"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(CliError::usage("config: train_fraction must lie in (0, 1]"));
        }
        if self.mask_ratios.is_empty() || self.mask_ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(CliError::usage("config: mask_ratios must be nonempty and inside (0, 1)"));
        }
        self.model_config(1, self.n_ctx).validate()?;
        Ok(())
    }

    pub fn model_config(&self, n_vars: usize, n_ctx: usize) -> ModelConfig {
        ModelConfig {
            n_vars,
            backbone: BackboneConfig {
                d_model: self.d,
                n_heads: self.heads,
                n_layers: self.frozen_layers + self.lora_layers,
                ffn_mult: self.ffn_mult,
                n_ctx,
                ..BackboneConfig::default()
            },
            encoder: EncoderConfig {
                kind: match self.encoder {
                    EncoderChoice::Avs => EncoderKind::Avs,
                    EncoderChoice::Flat => EncoderKind::Flat,
                },
                kernel: self.k,
                padding: self.p,
                stride: self.s,
            },
            lora: LoraConfig { rank: self.r_lora, alpha: self.alpha, dropout: self.lora_dropout, ..LoraConfig::default() },
            freeze: FreezePolicy { frozen_layers: self.frozen_layers, lora_layers: self.lora_layers },
            adapter: AdapterConfig { rank: self.r_adapter, dropout: self.adapter_dropout, ..AdapterConfig::default() },
        }
    }

    /// Samples per forward pass at inference.
    pub fn eval_batch(&self) -> usize {
        match self.micro_batch {
            0 => self.batch,
            n => n.min(self.batch),
        }
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig { lr: self.lr, batch: self.batch, micro_batch: self.micro_batch, epochs, patience: self.patience, seed: self.seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_keys_fail() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"K\":4") && json.contains("\"L\":2"));
        assert_eq!(RunConfig::from_json(&json).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
        assert!(matches!(RunConfig::from_json(r#"{"dd": 3}"#), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::from_json(r#"{"d": 30}"#), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::from_json(r#"{"heads": 5}"#), Err(CliError::Usage(_))));
    }
}
