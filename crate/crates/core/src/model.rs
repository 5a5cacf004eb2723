//! A complete soft-sensing model: encoder, backbone, optional PEFT modules
//! and task heads, all held in one [`ParamStore`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapters;
use crate::backbone;
use crate::config::ModelConfig;
use crate::encoder;
use crate::error::{Error, Result};
use crate::graph::{Graph, SeqLayout, Var};
use crate::params::{ParamCounts, ParamStore};
use crate::peft;
use crate::prompts::VOCAB_SIZE;
use crate::tensor::Tensor;

pub const PRETRAIN_HEAD: &str = "pretrain_head";
pub const TASK_HEAD: &str = "task_head";
pub const TEXT_EMBEDDING: &str = "text.embedding";

/// A batch of windows laid out back to back, each `steps × vars` step-major,
/// optionally preceded by `prefix_len` text tokens per window.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub windows: &'a [f64],
    pub batch: usize,
    pub steps: usize,
    pub prefix: Option<(&'a [usize], usize)>,
}

impl<'a> Batch<'a> {
    pub fn new(windows: &'a [f64], batch: usize, steps: usize) -> Self {
        Self { windows, batch, steps, prefix: None }
    }

    pub fn with_prefix(mut self, ids: &'a [usize], len: usize) -> Self {
        self.prefix = Some((ids, len));
        self
    }
}

/// Forward result: final hidden states and where the data tokens start.
pub struct Encoded {
    pub hidden: Var,
    pub layout: SeqLayout,
    pub data_offset: usize,
    pub attention: Vec<Var>,
}

impl Encoded {
    /// Row index of the last token of every sequence.
    pub fn last_rows(&self) -> Vec<usize> {
        (0..self.layout.batch).map(|b| (b + 1) * self.layout.seq - 1).collect()
    }

    /// Row indices of every data token, sequence-major.
    pub fn data_rows(&self) -> Vec<usize> {
        (0..self.layout.batch)
            .flat_map(|b| (self.data_offset..self.layout.seq).map(move |j| b * self.layout.seq + j))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Encoder and backbone with fresh weights; no PEFT modules, no heads.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        encoder::init(&mut params, &config.encoder, config.n_vars, config.backbone.d_model, &mut rng)?;
        backbone::init(&mut params, &config.backbone, &mut rng)?;
        Ok(Self { config, params })
    }

    pub fn d_model(&self) -> usize {
        self.config.backbone.d_model
    }

    /// Add a zero-initialised linear head `d → outputs` named `name`.
    pub fn add_head(&mut self, name: &str, outputs: usize) -> Result<()> {
        let d = self.d_model();
        self.params.insert(&format!("{name}.w"), Tensor::zeros(&[d, outputs]))?;
        self.params.insert(&format!("{name}.b"), Tensor::zeros(&[outputs]))
    }

    pub fn has_head(&self, name: &str) -> bool {
        self.params.contains(&format!("{name}.w"))
    }

    pub fn head_outputs(&self, name: &str) -> Result<usize> {
        Ok(self.params.get(&format!("{name}.w"))?.dims2().1)
    }

    pub fn remove_head(&mut self, name: &str) {
        self.params.remove(&format!("{name}.w"));
        self.params.remove(&format!("{name}.b"));
    }

    pub fn add_text_embedding(&mut self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.d_model();
        let std = self.config.backbone.init_std;
        self.params.insert(TEXT_EMBEDDING, Tensor::randn(&[VOCAB_SIZE, d], std, &mut rng))
    }

    /// Stage 1 setup: attach LoRA, add the autoregressive head, freeze.
    pub fn prepare_stage1(&mut self, seed: u64) -> Result<ParamCounts> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        peft::attach_lora(&mut self.params, &self.config, &mut rng)?;
        self.add_head(PRETRAIN_HEAD, self.config.token_width())?;
        peft::apply_freeze_policy(&mut self.params, &self.config)
    }

    /// Stage 2 setup: drop the stage-1 head, insert adapters, add a task head.
    /// Only adapters, the task head and (if present) the text table train.
    pub fn prepare_stage2(&mut self, head_outputs: usize, seed: u64) -> Result<ParamCounts> {
        if adapters::has_adapters(&self.params) {
            return Err(Error::AdaptersPresent);
        }
        self.remove_head(PRETRAIN_HEAD);
        self.add_head(TASK_HEAD, head_outputs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        adapters::insert_adapters(&mut self.params, &self.config, &mut rng, is_stage2_extra)
    }

    pub fn counts(&self) -> ParamCounts {
        self.params.counts()
    }

    /// Run encoder (and text table) plus backbone over a batch.
    pub fn encode(&self, g: &mut Graph, batch: &Batch<'_>) -> Result<Encoded> {
        let m = self.config.n_vars;
        let rows = batch.batch * batch.steps;
        if batch.windows.len() != rows * m {
            return Err(Error::Dimension {
                op: "encode",
                detail: format!("{} values for {} windows of {}×{m}", batch.windows.len(), batch.batch, batch.steps),
            });
        }
        let seq_data = self.config.encoder.seq_len(batch.steps, m);
        let prefix_len = batch.prefix.map_or(0, |(_, k)| k);
        let total = seq_data + prefix_len;
        if total > self.config.backbone.n_ctx {
            return Err(Error::SequenceTooLong { len: total, n_ctx: self.config.backbone.n_ctx });
        }
        let text = match batch.prefix {
            Some((ids, k)) if k > 0 => {
                if ids.len() != k * batch.batch {
                    return Err(Error::Dimension { op: "encode", detail: format!("{} prefix ids for {} × {k}", ids.len(), batch.batch) });
                }
                let table = g.param(&self.params, TEXT_EMBEDDING)?;
                Some(g.embedding(table, ids.to_vec())?)
            }
            _ => None,
        };
        let (tokens, layout) = if batch.steps == 0 {
            let text = text.ok_or(Error::EmptySample)?;
            (text, SeqLayout { batch: batch.batch, seq: prefix_len })
        } else {
            let x = g.constant(Tensor::new(vec![rows, m], batch.windows.to_vec())?);
            let (data, layout) = encoder::embed(g, &self.params, &self.config.encoder, x, batch.batch, batch.steps)?;
            match text {
                Some(text) => {
                    let joined = g.concat_seq(text, prefix_len, data, layout.seq, batch.batch)?;
                    (joined, SeqLayout { batch: batch.batch, seq: layout.seq + prefix_len })
                }
                None => (data, layout),
            }
        };
        let out = backbone::forward(g, &self.params, &self.config, tokens, layout)?;
        Ok(Encoded { hidden: out.hidden, layout, data_offset: prefix_len, attention: out.attention })
    }

    /// `H·W + b` for the named head.
    pub fn head(&self, g: &mut Graph, name: &str, h: Var) -> Result<Var> {
        let w = g.param(&self.params, &format!("{name}.w"))?;
        let b = g.param(&self.params, &format!("{name}.b"))?;
        let y = g.matmul(h, w)?;
        g.add_bias(y, b)
    }

    /// Names that differ bitwise from `other` (same-named parameters only).
    pub fn changed_from(&self, other: &ParamStore) -> Vec<String> {
        self.params.changed_names(other).into_iter().filter(|n| other.contains(n)).collect()
    }
}

/// Stage-2 parameters that train alongside adapters.
pub fn is_stage2_extra(name: &str) -> bool {
    name.starts_with("task_head.") || name.starts_with("text.")
}
