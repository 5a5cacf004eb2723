//! Reconstruction-based anomaly detection with synthetic anomaly injection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::impute::{reconstruct, reconstruct_var};
use super::{Objective, WindowSet};
use crate::encoder::Series;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    Spike,
    Noise,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    /// Bernoulli rate of spikes.
    pub p: f64,
    /// Std of spike impulses or of segment noise.
    pub sigma: f64,
    pub segment_len: usize,
    pub scale_factor: f64,
    /// When set, spikes have this fixed size with a random sign instead of a
    /// Gaussian draw.
    pub magnitude: Option<f64>,
    pub seed: u64,
}

impl AnomalySpec {
    pub fn spike(seed: u64) -> Self {
        Self { kind: AnomalyKind::Spike, p: 0.01, sigma: 3.0, segment_len: 0, scale_factor: 1.0, magnitude: None, seed }
    }

    /// Spikes of exactly `magnitude` (random sign) at Bernoulli(0.01) positions.
    pub fn fixed_spike(magnitude: f64, seed: u64) -> Self {
        Self { magnitude: Some(magnitude), ..Self::spike(seed) }
    }

    pub fn noise(seed: u64) -> Self {
        Self { kind: AnomalyKind::Noise, p: 0.0, sigma: 0.5, segment_len: 20, scale_factor: 1.0, magnitude: None, seed }
    }

    pub fn scale(seed: u64) -> Self {
        Self { kind: AnomalyKind::Scale, p: 0.0, sigma: 0.0, segment_len: 20, scale_factor: 1.5, magnitude: None, seed }
    }

    fn validate(&self, len: usize) -> Result<()> {
        match self.kind {
            AnomalyKind::Spike => {
                if !(0.0..=1.0).contains(&self.p) || !(self.sigma > 0.0) {
                    return Err(Error::InvalidSpec(format!("spike needs p in [0,1] and sigma > 0 (p={}, sigma={})", self.p, self.sigma)));
                }
            }
            AnomalyKind::Noise | AnomalyKind::Scale => {
                if self.segment_len == 0 || len <= self.segment_len {
                    return Err(Error::InvalidSpec(format!("segment of {} steps does not fit a series of {len}", self.segment_len)));
                }
                if self.kind == AnomalyKind::Noise && !(self.sigma > 0.0) {
                    return Err(Error::InvalidSpec(format!("noise sigma {} must be positive", self.sigma)));
                }
                if self.kind == AnomalyKind::Scale && !(self.scale_factor > 0.0) {
                    return Err(Error::InvalidSpec(format!("scale factor {} must be positive", self.scale_factor)));
                }
            }
        }
        Ok(())
    }
}

/// Corrupt a univariate series; returns the corrupted copy and point labels.
pub fn inject_anomaly(series: &[f64], spec: &AnomalySpec) -> Result<(Vec<f64>, Vec<bool>)> {
    spec.validate(series.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = series.to_vec();
    let mut labels = vec![false; series.len()];
    match spec.kind {
        AnomalyKind::Spike => {
            for (x, l) in out.iter_mut().zip(labels.iter_mut()) {
                let hit = rng.random::<f64>() < spec.p;
                let z: f64 = rng.sample(StandardNormal);
                if hit {
                    *x += match spec.magnitude {
                        Some(a) => a.copysign(z),
                        None => z * spec.sigma,
                    };
                    *l = true;
                }
            }
        }
        AnomalyKind::Noise | AnomalyKind::Scale => {
            let start = rng.random_range(0..=series.len() - spec.segment_len);
            for t in start..start + spec.segment_len {
                if spec.kind == AnomalyKind::Noise {
                    let z: f64 = rng.sample(StandardNormal);
                    out[t] += z * spec.sigma;
                } else {
                    out[t] *= spec.scale_factor;
                }
                labels[t] = true;
            }
        }
    }
    Ok((out, labels))
}

/// Apply [`inject_anomaly`] independently to consecutive chunks of `chunk`
/// steps (a trailing partial chunk too short for a segment is left clean).
pub fn inject_chunked(series: &[f64], spec: &AnomalySpec, chunk: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    if chunk == 0 {
        return Err(Error::InvalidSpec("chunk length must be positive".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut labels = Vec::with_capacity(series.len());
    for (i, part) in series.chunks(chunk).enumerate() {
        let s = AnomalySpec { seed: spec.seed.wrapping_add(i as u64), ..*spec };
        if spec.kind != AnomalyKind::Spike && part.len() <= spec.segment_len {
            out.extend_from_slice(part);
            labels.extend(core::iter::repeat_n(false, part.len()));
            continue;
        }
        let (x, l) = inject_anomaly(part, &s)?;
        out.extend(x);
        labels.extend(l);
    }
    Ok((out, labels))
}

/// Plain reconstruction of clean windows; loss averaged over every entry.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reconstruction;

impl Objective for Reconstruction {
    fn batch_loss(&self, model: &Model, g: &mut Graph, set: &WindowSet, idx: &[usize], _rng: &mut ChaCha8Rng) -> Result<Var> {
        let clean = set.gather(idx);
        let pred = reconstruct_var(model, g, set, idx, &clean)?;
        let scale = 1.0 / clean.len() as f64;
        g.squared_error(pred, clean, None, scale)
    }
}

/// Window start offsets with the given stride, always including a window
/// that ends on the final step.
pub fn covering_starts(len: usize, steps: usize, stride: usize) -> Result<Vec<usize>> {
    if len < steps {
        return Err(Error::SeriesTooShort { len, window: steps });
    }
    let stride = stride.max(1);
    let mut starts: Vec<usize> = (0..=len - steps).step_by(stride).collect();
    if *starts.last().unwrap() != len - steps {
        starts.push(len - steps);
    }
    Ok(starts)
}

/// Squared reconstruction error per (step, variable), step-major; elements
/// covered by several windows keep the largest error.
pub fn element_errors(model: &Model, series: &Series, steps: usize, stride: usize, batch: usize) -> Result<Vec<f64>> {
    let starts = covering_starts(series.len(), steps, stride)?;
    let unlabelled = Series { labels: None, ..series.clone() };
    // With stride 1, sample `i` is the window starting at step `i`.
    let set = WindowSet::new(unlabelled, steps, 1)?.subset(&starts);
    let values = set.gather(&(0..set.len()).collect::<Vec<_>>());
    let recon = reconstruct(model, &set, &values, batch)?;
    let m = series.vars;
    let per = steps * m;
    let mut errors = vec![f64::NEG_INFINITY; series.len() * m];
    for (w, &start) in starts.iter().enumerate() {
        for k in 0..per {
            let e = values[w * per + k] - recon[w * per + k];
            let slot = &mut errors[start * m + k];
            *slot = slot.max(e * e);
        }
    }
    Ok(errors)
}

/// `q`-quantile with linear interpolation between order statistics.
pub fn quantile(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Per-variable thresholds from step-major clean errors.
pub fn calibrate_threshold(errors: &[f64], vars: usize, q: f64) -> Result<Vec<f64>> {
    if vars == 0 || errors.len() % vars != 0 {
        return Err(Error::Dimension { op: "calibrate_threshold", detail: format!("{} errors for {vars} variables", errors.len()) });
    }
    (0..vars)
        .map(|s| {
            let col: Vec<f64> = errors.iter().skip(s).step_by(vars).copied().collect();
            quantile(&col, q)
        })
        .collect()
}

/// `error(t, s) > τ_s`, step-major.
pub fn flag(errors: &[f64], thresholds: &[f64]) -> Result<Vec<bool>> {
    let m = thresholds.len();
    if m == 0 || errors.len() % m != 0 {
        return Err(Error::Dimension { op: "detect", detail: format!("{} errors for {m} thresholds", errors.len()) });
    }
    Ok(errors.iter().enumerate().map(|(i, &e)| e > thresholds[i % m]).collect())
}

/// Reconstruct, score and threshold a (possibly corrupted) normalised series.
pub fn detect_anomalies(model: &Model, thresholds: &[f64], series: &Series, steps: usize, stride: usize, batch: usize) -> Result<Vec<bool>> {
    if thresholds.len() != series.vars {
        return Err(Error::Dimension { op: "detect", detail: format!("{} thresholds for {} variables", thresholds.len(), series.vars) });
    }
    let errors = element_errors(model, series, steps, stride, batch)?;
    flag(&errors, thresholds)
}
