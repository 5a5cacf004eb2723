//! Time-lag windowing, per-step tokenization and the dual-branch window encoder.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, SeqLayout, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// How raw windows become token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// One token per time step: convolution branch plus linear branch.
    Avs,
    /// One token per scalar value (step-major), embedded by a 1→d linear map.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { kind: EncoderKind::Avs, kernel: 3, padding: 1, stride: 1 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 {
            return Err(Error::Config(format!("convolution stride {} unsupported; only 1 preserves token count", self.stride)));
        }
        if self.kernel == 0 || 2 * self.padding + 1 != self.kernel {
            return Err(Error::Config(format!(
                "kernel {} with padding {} does not preserve token count",
                self.kernel, self.padding
            )));
        }
        Ok(())
    }

    /// Tokens produced for a window of `steps` steps over `vars` variables.
    pub fn seq_len(&self, steps: usize, vars: usize) -> usize {
        match self.kind {
            EncoderKind::Avs => steps,
            EncoderKind::Flat => steps * vars,
        }
    }
}

/// One time-lagged input: `vars` variables over `steps` consecutive steps.
///
/// Stored step-major: `values[p * vars + s]` is variable `s` at step `p`, so a
/// token is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub values: Vec<f64>,
    pub steps: usize,
    pub vars: usize,
    /// Index in the source series of the last step.
    pub end: usize,
    pub label: Option<f64>,
}

impl WindowSample {
    /// Variable-major view `X[s][p]`.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.vars).map(|s| (0..self.steps).map(|p| self.values[p * self.vars + s]).collect()).collect()
    }

    pub fn get(&self, var: usize, step: usize) -> f64 {
        self.values[step * self.vars + var]
    }
}

/// A multivariate series stored step-major (`rows[t * vars + s]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    pub vars: usize,
    pub labels: Option<Vec<f64>>,
}

impl Series {
    pub fn new(values: Vec<f64>, vars: usize, labels: Option<Vec<f64>>) -> Result<Self> {
        if vars == 0 || values.len() % vars != 0 {
            return Err(Error::Dimension { op: "series", detail: format!("{} values for {vars} variables", values.len()) });
        }
        if let Some(l) = &labels {
            if l.len() != values.len() / vars {
                return Err(Error::Dimension { op: "series", detail: format!("{} labels for {} steps", l.len(), values.len() / vars) });
            }
        }
        Ok(Self { values, vars, labels })
    }

    /// Build from variable-major columns.
    pub fn from_columns(columns: &[Vec<f64>], labels: Option<Vec<f64>>) -> Result<Self> {
        let vars = columns.len();
        let len = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != len) {
            return Err(Error::Dimension { op: "series", detail: "ragged columns".into() });
        }
        let mut values = Vec::with_capacity(vars * len);
        for t in 0..len {
            values.extend(columns.iter().map(|c| c[t]));
        }
        Self::new(values, vars, labels)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.vars
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.values[t * self.vars..(t + 1) * self.vars]
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.values[t * self.vars + s]).collect()
    }
}

/// Number of windows [`build_windows`] yields.
pub fn window_count(len: usize, steps: usize, stride: usize) -> usize {
    if len < steps || stride == 0 {
        0
    } else {
        (len - steps) / stride + 1
    }
}

/// Slide a window of `steps` steps over the series; the label of a window is
/// the series label at its last step.
pub fn build_windows(series: &Series, steps: usize, stride: usize) -> Result<Vec<WindowSample>> {
    if steps == 0 || stride == 0 {
        return Err(Error::Config(format!("window {steps} and stride {stride} must be positive")));
    }
    if series.len() < steps {
        return Err(Error::SeriesTooShort { len: series.len(), window: steps });
    }
    let m = series.vars;
    Ok((0..window_count(series.len(), steps, stride))
        .map(|i| {
            let start = i * stride;
            let end = start + steps - 1;
            WindowSample {
                values: series.values[start * m..(end + 1) * m].to_vec(),
                steps,
                vars: m,
                end,
                label: series.labels.as_ref().map(|l| l[end]),
            }
        })
        .collect())
}

/// Token `p` is every variable's value at step `p`.
pub fn tokenize(window: &WindowSample) -> Vec<Vec<f64>> {
    window.values.chunks_exact(window.vars).map(|c| c.to_vec()).collect()
}

pub(crate) fn init<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &EncoderConfig, vars: usize, d: usize, rng: &mut R) -> Result<()> {
    match cfg.kind {
        EncoderKind::Avs => {
            let fan = (cfg.kernel * vars) as f64;
            store.insert("encoder.conv.w", Tensor::randn(&[cfg.kernel * vars, d], 1.0 / libm::sqrt(fan), rng))?;
            store.insert("encoder.conv.b", Tensor::zeros(&[d]))?;
            store.insert("encoder.linear.w", Tensor::randn(&[vars, d], 1.0 / libm::sqrt(vars as f64), rng))?;
            store.insert("encoder.linear.b", Tensor::zeros(&[d]))?;
        }
        EncoderKind::Flat => {
            store.insert("encoder.flat.w", Tensor::randn(&[1, d], 1.0, rng))?;
            store.insert("encoder.flat.b", Tensor::zeros(&[d]))?;
        }
    }
    Ok(())
}

/// Token embeddings for a batch of windows stored back to back (step-major),
/// each `steps × vars`. Returns the embedding and its sequence layout.
pub fn embed(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    windows: Var,
    batch: usize,
    steps: usize,
) -> Result<(Var, SeqLayout)> {
    let layout = SeqLayout { batch, seq: steps };
    match cfg.kind {
        EncoderKind::Avs => {
            let cw = g.param(store, "encoder.conv.w")?;
            let cb = g.param(store, "encoder.conv.b")?;
            let lw = g.param(store, "encoder.linear.w")?;
            let lb = g.param(store, "encoder.linear.b")?;
            let conv = g.conv1d(windows, cw, layout, cfg.kernel, cfg.padding)?;
            let conv = g.add_bias(conv, cb)?;
            let lin = g.matmul(windows, lw)?;
            let lin = g.add_bias(lin, lb)?;
            Ok((g.add(conv, lin)?, layout))
        }
        EncoderKind::Flat => {
            let (rows, vars) = g.value(windows).dims2();
            let flat = g.value(windows).clone().reshape(&[rows * vars, 1])?;
            let x = g.constant(flat);
            let w = g.param(store, "encoder.flat.w")?;
            let b = g.param(store, "encoder.flat.b")?;
            let e = g.matmul(x, w)?;
            Ok((g.add_bias(e, b)?, SeqLayout { batch, seq: steps * vars }))
        }
    }
}
