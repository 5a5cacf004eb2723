//! Training protocols and inference for every task.

pub mod anomaly;
pub mod impute;
pub mod pretrain;
pub mod regress;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, AdamConfig};
use crate::encoder::{window_count, Series};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{Batch, Encoded, Model};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Windows over one series, optionally preceded by fixed-length text prefixes.
///
/// `steps == 0` describes a text-only corpus: each sample is just its prefix
/// and `ends` point at the label rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    series: Series,
    ends: Vec<usize>,
    steps: usize,
    prefix_len: usize,
    prefixes: Vec<usize>,
}

impl WindowSet {
    /// Every `stride`-th window of `steps` steps.
    pub fn new(series: Series, steps: usize, stride: usize) -> Result<Self> {
        if steps == 0 || stride == 0 {
            return Err(Error::Config(format!("window {steps} and stride {stride} must be positive")));
        }
        if series.len() < steps {
            return Err(Error::SeriesTooShort { len: series.len(), window: steps });
        }
        let ends = (0..window_count(series.len(), steps, stride)).map(|i| i * stride + steps - 1).collect();
        Ok(Self { series, ends, steps, prefix_len: 0, prefixes: Vec::new() })
    }

    /// Samples made only of text tokens, labelled at `ends`.
    pub fn text_only(series: Series, ends: Vec<usize>, prefixes: Vec<usize>, prefix_len: usize) -> Result<Self> {
        let set = Self { series, ends, steps: 0, prefix_len: 0, prefixes: Vec::new() };
        set.with_prefixes(prefixes, prefix_len)
    }

    /// Attach one `prefix_len`-token prefix per sample (flattened).
    pub fn with_prefixes(mut self, prefixes: Vec<usize>, prefix_len: usize) -> Result<Self> {
        if prefixes.len() != prefix_len * self.ends.len() {
            return Err(Error::Dimension { op: "prefixes", detail: format!("{} ids for {} samples × {prefix_len}", prefixes.len(), self.ends.len()) });
        }
        self.prefix_len = prefix_len;
        self.prefixes = prefixes;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn vars(&self) -> usize {
        self.series.vars
    }

    pub fn series(&self) -> &Series {
        &self.series
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn has_labels(&self) -> bool {
        self.series.labels.is_some()
    }

    /// Keep only the listed samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let k = self.prefix_len;
        Self {
            series: self.series.clone(),
            ends: indices.iter().map(|&i| self.ends[i]).collect(),
            steps: self.steps,
            prefix_len: k,
            prefixes: indices.iter().flat_map(|&i| self.prefixes[i * k..(i + 1) * k].iter().copied()).collect(),
        }
    }

    /// A seeded random subset holding `fraction` of the samples (at least one).
    pub fn sample_fraction(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
        }
        let keep = (libm::round(self.len() as f64 * fraction) as usize).clamp(1, self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(keep);
        idx.sort_unstable();
        Ok(self.subset(&idx))
    }

    /// Step-major window values for the listed samples, back to back.
    pub fn gather(&self, idx: &[usize]) -> Vec<f64> {
        let m = self.series.vars;
        let mut out = Vec::with_capacity(idx.len() * self.steps * m);
        for &i in idx {
            let start = self.ends[i] + 1 - self.steps;
            out.extend_from_slice(&self.series.values[start * m..(self.ends[i] + 1) * m]);
        }
        out
    }

    pub fn labels(&self, idx: &[usize]) -> Result<Vec<f64>> {
        let l = self.series.labels.as_ref().ok_or(Error::MissingLabels)?;
        Ok(idx.iter().map(|&i| l[self.ends[i]]).collect())
    }

    pub fn prefix_ids(&self, idx: &[usize]) -> Vec<usize> {
        let k = self.prefix_len;
        idx.iter().flat_map(|&i| self.prefixes[i * k..(i + 1) * k].iter().copied()).collect()
    }
}

/// Encode samples `idx` with `values` (possibly masked) as the window data.
pub(crate) fn encode_values(model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize], values: &[f64]) -> Result<Encoded> {
    let ids = set.prefix_ids(idx);
    let mut batch = Batch::new(values, idx.len(), set.steps);
    if set.prefix_len > 0 {
        batch = batch.with_prefix(&ids, set.prefix_len);
    }
    model.encode(g, &batch)
}

pub(crate) fn encode_samples(model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize]) -> Result<Encoded> {
    let values = set.gather(idx);
    encode_values(model, g, set, idx, &values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// Samples per forward/backward pass; the micro-batch gradients are
    /// averaged into one update per `batch`. 0 runs the whole batch at once.
    pub micro_batch: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch: 64, micro_batch: 0, epochs: 10, patience: 5, seed: 42 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Validation loss before the first update.
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub steps: u64,
}

/// A differentiable training objective over a [`WindowSet`].
pub trait Objective {
    /// Mean loss over the samples `idx`. `rng` supplies any per-step
    /// randomness the objective needs beyond dropout.
    fn batch_loss(&self, model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<Var>;

    /// Seed for the objective's randomness during validation, so every
    /// validation pass sees the same draws.
    fn validation_seed(&self) -> u64 {
        0x5eed
    }
}

/// Mean objective over a whole set in evaluation mode.
pub fn evaluate_loss(model: &Model, objective: &dyn Objective, set: &WindowSet, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(objective.validation_seed());
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let mut g = Graph::new();
        let loss = objective.batch_loss(model, &mut g, set, chunk, &mut rng)?;
        total += g.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Adam over the model's trainable parameters with shuffled mini-batches,
/// keeping the weights of the best validation epoch (early stopping).
pub fn train(model: &mut Model, objective: &dyn Objective, train_set: &WindowSet, val_set: Option<&WindowSet>, cfg: &TrainConfig) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::EmptySample);
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut task_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });

    let micro = match cfg.micro_batch {
        0 => cfg.batch,
        n => n.min(cfg.batch),
    };
    let val_loss = |m: &Model| val_set.map(|v| evaluate_loss(m, objective, v, micro)).transpose();
    let initial_val_loss = val_loss(model)?;
    let mut best: Option<(f64, ParamStore, usize)> = None;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut grads: Option<BTreeMap<String, Tensor>> = None;
            for part in chunk.chunks(micro) {
                let mut g = Graph::training(ChaCha8Rng::seed_from_u64(dropout_rng.next_u64()));
                let loss = objective.batch_loss(model, &mut g, train_set, part, &mut task_rng)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step, loss: value });
                }
                g.backward(loss)?;
                total += value * part.len() as f64;
                let part_grads = g.param_grads();
                if part.len() == chunk.len() {
                    grads = Some(part_grads);
                    continue;
                }
                let weight = part.len() as f64 / chunk.len() as f64;
                let acc = grads.get_or_insert_with(BTreeMap::new);
                for (name, t) in part_grads {
                    let sum = acc.entry(name).or_insert_with(|| Tensor::zeros(t.shape()));
                    for (a, v) in sum.data_mut().iter_mut().zip(t.data()) {
                        *a += weight * v;
                    }
                }
            }
            adam.step(&mut model.params, &grads.unwrap_or_default())?;
        }
        let train_loss = total / train_set.len() as f64;
        let val = val_loss(model)?;
        epochs.push(EpochStats { epoch, train_loss, val_loss: val });
        if let Some(v) = val {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: usize::MAX, loss: v });
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, model.params.clone(), epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let best_epoch = match best {
        Some((_, params, e)) => {
            model.params = params;
            e
        }
        None => epochs.len(),
    };
    Ok(TrainReport { initial_val_loss, epochs, best_epoch, steps: adam.steps_taken() })
}

/// Run `f` over `set` in evaluation mode in chunks of `batch` samples.
pub(crate) fn for_each_batch<F>(set: &WindowSet, batch: usize, mut f: F) -> Result<()>
where
    F: FnMut(&[usize]) -> Result<()>,
{
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        f(chunk)?;
    }
    Ok(())
}
