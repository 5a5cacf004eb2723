//! Next-token regression over window tokens: hidden state `i` predicts token `i + 1`.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::{encode_samples, Objective, WindowSet};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{Model, PRETRAIN_HEAD};

#[derive(Debug, Clone, Copy, Default)]
pub struct Autoregressive;

impl Objective for Autoregressive {
    fn batch_loss(&self, model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize], _rng: &mut ChaCha8Rng) -> Result<Var> {
        let enc = encode_samples(model, g, set, idx)?;
        let width = model.config.token_width();
        let seq = enc.layout.seq - enc.data_offset;
        if seq < 2 {
            return Err(Error::EmptySample);
        }
        let values = set.gather(idx);
        let per_sample = seq * width;
        let mut rows = Vec::with_capacity(idx.len() * (seq - 1));
        let mut target = Vec::with_capacity(idx.len() * (seq - 1) * width);
        for b in 0..idx.len() {
            let base = b * enc.layout.seq + enc.data_offset;
            rows.extend(base..base + seq - 1);
            target.extend_from_slice(&values[b * per_sample + width..(b + 1) * per_sample]);
        }
        let h = g.gather_rows(enc.hidden, rows)?;
        let pred = model.head(g, PRETRAIN_HEAD, h)?;
        let scale = 1.0 / (idx.len() * (seq - 1)) as f64;
        g.squared_error(pred, target, None, scale)
    }
}
