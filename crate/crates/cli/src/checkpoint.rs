//! Binary checkpoint container.
//!
//! Layout: `SSFMCKPT` magic, `u32` version, `u32` manifest length (both
//! little-endian), the UTF-8 JSON manifest, then every tensor as
//! little-endian `f32` at the byte offset the manifest declares (relative to
//! the start of the payload).

use std::path::Path;

use serde::{Deserialize, Serialize};
use softsense_core::datagen::NormStats;
use softsense_core::prompts::PromptTemplate;
use softsense_core::{Model, ParamStore, Tensor};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"SSFMCKPT";
pub const VERSION: u32 = 1;
const CALIBRATION: &str = "calibration.errors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Stage-1 aligned foundation model.
    Ssfm,
    /// Stage-2 task model built on an SSFM (or an ablation of that path).
    Adapted,
    /// Task model trained end to end from a fresh initialisation.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Pretrain,
    Regress,
    Impute,
    Anomaly,
    Pss,
    Pdss,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Pretrain => "pretrain",
            Task::Regress => "regress",
            Task::Impute => "impute",
            Task::Anomaly => "anomaly",
            Task::Pss => "pss",
            Task::Pdss => "pdss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub label_mean: Option<f64>,
    pub label_std: Option<f64>,
}

impl From<&NormStats> for NormRecord {
    fn from(s: &NormStats) -> Self {
        Self { means: s.means.clone(), stds: s.stds.clone(), label_mean: s.label_mean, label_std: s.label_std }
    }
}

impl From<NormRecord> for NormStats {
    fn from(r: NormRecord) -> Self {
        NormStats { means: r.means, stds: r.stds, label_mean: r.label_mean, label_std: r.label_std }
    }
}

/// Prompt template and the fixed token length every rendered prompt is padded to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub layout: String,
    pub background: String,
    pub instruction: String,
    pub names: Vec<String>,
    pub len: usize,
}

impl PromptSpec {
    pub fn new(t: &PromptTemplate, len: usize) -> Self {
        Self { layout: t.layout.clone(), background: t.background.clone(), instruction: t.instruction.clone(), names: t.names.clone(), len }
    }

    pub fn template(&self) -> PromptTemplate {
        PromptTemplate {
            layout: self.layout.clone(),
            background: self.background.clone(),
            instruction: self.instruction.clone(),
            names: self.names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCalibration {
    pub quantile: f64,
    pub thresholds: Vec<f64>,
    /// Step between scoring windows used for calibration.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    stage: Stage,
    task: Task,
    seed: u64,
    n_vars: usize,
    n_ctx: usize,
    window: usize,
    config: RunConfig,
    norm: Option<NormRecord>,
    prompt: Option<PromptSpec>,
    anomaly: Option<AnomalyCalibration>,
    tensors: Vec<TensorEntry>,
}

/// A model plus everything needed to run it on raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub task: Task,
    pub seed: u64,
    pub config: RunConfig,
    pub window: usize,
    pub norm: Option<NormStats>,
    pub prompt: Option<PromptSpec>,
    pub anomaly: Option<AnomalyCalibration>,
    /// Clean validation errors (`rows × vars`) used to recalibrate thresholds.
    pub calibration_errors: Option<Tensor>,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        let aux = self.calibration_errors.iter().map(|t| (CALIBRATION.to_string(), t, false));
        let params = self.model.params.iter().map(|(n, t)| (n.clone(), t, self.model.params.is_trainable(n)));
        for (name, t, trainable) in params.chain(aux) {
            tensors.push(TensorEntry { name, shape: t.shape().to_vec(), offset: payload.len() as u64, trainable });
            for &v in t.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            stage: self.stage,
            task: self.task,
            seed: self.seed,
            n_vars: self.model.config.n_vars,
            n_ctx: self.model.config.backbone.n_ctx,
            window: self.window,
            config: self.config.clone(),
            norm: self.norm.as_ref().map(NormRecord::from),
            prompt: self.prompt.clone(),
            anomaly: self.anomaly.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| CliError::data(format!("manifest: {e}")))?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| CliError::data("manifest too large"))?.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |msg: String| CliError::data(format!("checkpoint: {msg}"));
        if bytes.len() < 16 {
            return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("bad magic, not an SSFMCKPT file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version} (expected {VERSION})")));
        }
        let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad(format!("truncated manifest (declares {len} bytes)")))?;
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
        let payload = &bytes[16 + len..];

        let mut expected = 0u64;
        let mut params = ParamStore::new();
        let mut calibration_errors = None;
        for entry in &manifest.tensors {
            if entry.offset != expected {
                return Err(bad(format!("tensor `{}` at offset {} but previous data ends at {expected}", entry.name, entry.offset)));
            }
            let count: usize = entry.shape.iter().product();
            let end = expected + 4 * count as u64;
            let raw = payload
                .get(expected as usize..end as usize)
                .ok_or_else(|| bad(format!("payload truncated inside tensor `{}` (shape {:?})", entry.name, entry.shape)))?;
            let data: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
            let tensor = Tensor::new(entry.shape.clone(), data)?;
            if entry.name == CALIBRATION {
                calibration_errors = Some(tensor);
            } else {
                params.insert(&entry.name, tensor)?;
                params.set_trainable(&entry.name, entry.trainable)?;
            }
            expected = end;
        }
        if expected != payload.len() as u64 {
            return Err(bad(format!("payload holds {} bytes but the manifest declares {expected}", payload.len())));
        }
        let config = manifest.config.model_config(manifest.n_vars, manifest.n_ctx);
        config.validate()?;
        Ok(Self {
            stage: manifest.stage,
            task: manifest.task,
            seed: manifest.seed,
            config: manifest.config,
            window: manifest.window,
            norm: manifest.norm.map(NormStats::from),
            prompt: manifest.prompt,
            anomaly: manifest.anomaly,
            calibration_errors,
            model: Model { config, params },
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        crate::atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
