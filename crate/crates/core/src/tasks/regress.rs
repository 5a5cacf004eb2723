//! Scalar soft-sensor regression from the last token's hidden state.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::{encode_samples, for_each_batch, Objective, WindowSet};
use crate::datagen::NormStats;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{Model, TASK_HEAD};

#[derive(Debug, Clone, Copy, Default)]
pub struct Regression;

fn last_token_output(model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize]) -> Result<Var> {
    let enc = encode_samples(model, g, set, idx)?;
    let h = g.gather_rows(enc.hidden, enc.last_rows())?;
    model.head(g, TASK_HEAD, h)
}

impl Objective for Regression {
    fn batch_loss(&self, model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize], _rng: &mut ChaCha8Rng) -> Result<Var> {
        let labels = set.labels(idx)?;
        let pred = last_token_output(model, g, set, idx)?;
        g.squared_error(pred, labels, None, 1.0 / idx.len() as f64)
    }
}

/// Head outputs in the units the model was trained on.
pub fn predict_raw(model: &Model, set: &WindowSet, batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for_each_batch(set, batch, |chunk| {
        let mut g = Graph::new();
        let y = last_token_output(model, &mut g, set, chunk)?;
        out.extend_from_slice(g.value(y).data());
        Ok(())
    })?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("prediction"));
    }
    Ok(out)
}

/// Predictions in engineering units; `stats` maps normalised outputs back.
pub fn predict(model: &Model, set: &WindowSet, stats: Option<&NormStats>, batch: usize) -> Result<Vec<f64>> {
    let raw = predict_raw(model, set, batch)?;
    match stats {
        Some(s) => raw.into_iter().map(|v| s.denormalize_label(v)).collect(),
        None => Ok(raw),
    }
}
