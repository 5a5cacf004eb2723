//! Masked-value reconstruction: masked entries are zeroed (the normalised
//! mean) and the loss only looks at them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_values, for_each_batch, Objective, WindowSet};
use crate::datagen::NormStats;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{Model, TASK_HEAD};

pub const DEFAULT_RATIOS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// Number of entries masked at `ratio` in a window of `len` values.
pub fn mask_count(len: usize, ratio: f64) -> usize {
    libm::round(ratio * len as f64) as usize
}

/// Zero exactly `round(ratio · len)` seeded-random entries of one window.
pub fn mask_random(values: &[f64], ratio: f64, seed: u64) -> Result<(Vec<f64>, Vec<bool>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let count = mask_count(values.len(), ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; values.len()];
    for i in rand::seq::index::sample(&mut rng, values.len(), count) {
        mask[i] = true;
    }
    let masked = values.iter().zip(&mask).map(|(&v, &m)| if m { 0.0 } else { v }).collect();
    Ok((masked, mask))
}

/// Mask every window of `set` at `ratio`; window `i` uses seed `seed + i`.
pub fn mask_set(set: &WindowSet, ratio: f64, seed: u64) -> Result<(Vec<f64>, Vec<bool>)> {
    let per = set.steps() * set.vars();
    let all = set.gather(&(0..set.len()).collect::<Vec<_>>());
    let mut masked = Vec::with_capacity(all.len());
    let mut mask = Vec::with_capacity(all.len());
    for (i, w) in all.chunks_exact(per).enumerate() {
        let (x, m) = mask_random(w, ratio, seed.wrapping_add(i as u64))?;
        masked.extend(x);
        mask.extend(m);
    }
    Ok((masked, mask))
}

/// Squared error on masked coordinates only; each sample draws its ratio
/// uniformly from `ratios`.
#[derive(Debug, Clone)]
pub struct MaskedReconstruction {
    pub ratios: Vec<f64>,
}

impl Default for MaskedReconstruction {
    fn default() -> Self {
        Self { ratios: DEFAULT_RATIOS.to_vec() }
    }
}

/// Loss of `pred` against `target` restricted to `mask`: the squared error
/// over each sample's masked entries, averaged over the `samples` equal-length
/// samples that have any. Every sample counts the same whatever its ratio.
pub fn masked_loss(g: &mut Graph, pred: Var, target: Vec<f64>, mask: &[bool], samples: usize) -> Result<Var> {
    if samples == 0 || mask.len() % samples != 0 {
        return Err(Error::Dimension { op: "masked_loss", detail: format!("{} mask entries for {samples} samples", mask.len()) });
    }
    let per = mask.len() / samples;
    let counts: Vec<usize> = mask.chunks(per).map(|c| c.iter().filter(|&&m| m).count()).collect();
    let used = counts.iter().filter(|&&c| c > 0).count();
    if used == 0 {
        return Err(Error::EmptyMask);
    }
    let weights = mask
        .iter()
        .enumerate()
        .map(|(i, &m)| if m { 1.0 / counts[i / per] as f64 } else { 0.0 })
        .collect();
    g.squared_error(pred, target, Some(weights), 1.0 / used as f64)
}

impl Objective for MaskedReconstruction {
    fn batch_loss(&self, model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<Var> {
        if self.ratios.is_empty() {
            return Err(Error::Config("no mask ratios configured".into()));
        }
        let clean = set.gather(idx);
        let per = set.steps() * set.vars();
        let mut masked = Vec::with_capacity(clean.len());
        let mut mask = Vec::with_capacity(clean.len());
        for w in clean.chunks_exact(per) {
            let ratio = self.ratios[rng.random_range(0..self.ratios.len())];
            let (x, m) = mask_random(w, ratio, rng.next_u64())?;
            masked.extend(x);
            mask.extend(m);
        }
        let pred = reconstruct_var(model, g, set, idx, &masked)?;
        masked_loss(g, pred, clean, &mask, idx.len())
    }
}

/// Per-token reconstruction of the given window values (data tokens only).
pub(crate) fn reconstruct_var(model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize], values: &[f64]) -> Result<Var> {
    let enc = encode_values(model, g, set, idx, values)?;
    let h = g.gather_rows(enc.hidden, enc.data_rows())?;
    model.head(g, TASK_HEAD, h)
}

/// Reconstructions of `values` (all samples of `set`, back to back).
pub fn reconstruct(model: &Model, set: &WindowSet, values: &[f64], batch: usize) -> Result<Vec<f64>> {
    let per = set.steps() * set.vars();
    if values.len() != per * set.len() {
        return Err(Error::Dimension { op: "reconstruct", detail: format!("{} values for {} windows of {per}", values.len(), set.len()) });
    }
    let mut out = Vec::with_capacity(values.len());
    for_each_batch(set, batch, |chunk| {
        let mut g = Graph::new();
        let v = &values[chunk[0] * per..(chunk[chunk.len() - 1] + 1) * per];
        let y = reconstruct_var(model, &mut g, set, chunk, v)?;
        out.extend_from_slice(g.value(y).data());
        Ok(())
    })?;
    Ok(out)
}

/// Fill masked coordinates with reconstructions; everything else is copied verbatim.
pub fn impute(model: &Model, set: &WindowSet, masked: &[f64], mask: &[bool], batch: usize) -> Result<Vec<f64>> {
    if masked.len() != mask.len() {
        return Err(Error::Dimension { op: "impute", detail: format!("{} values, {} mask entries", masked.len(), mask.len()) });
    }
    if !mask.iter().any(|&m| m) {
        return Ok(masked.to_vec());
    }
    let recon = reconstruct(model, set, masked, batch)?;
    Ok(masked.iter().zip(&recon).zip(mask).map(|((&x, &r), &m)| if m { r } else { x }).collect())
}

/// Metrics over masked coordinates in engineering units.
pub fn evaluate_imputation(model: &Model, set: &WindowSet, stats: &NormStats, ratio: f64, seed: u64, batch: usize) -> Result<MetricsReport> {
    let (masked, mask) = mask_set(set, ratio, seed)?;
    let clean = set.gather(&(0..set.len()).collect::<Vec<_>>());
    let filled = impute(model, set, &masked, &mask, batch)?;
    let m = set.vars();
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (i, &is_masked) in mask.iter().enumerate() {
        if is_masked {
            truth.push(stats.denormalize_value(i % m, clean[i]));
            pred.push(stats.denormalize_value(i % m, filled[i]));
        }
    }
    compute_metrics(&truth, &pred)
}
