//! Seeded synthetic air-preheater process, chronological splits and z-score
//! normalisation.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoder::Series;
use crate::error::{Error, Result};

/// Rows dropped at the start so every lagged term refers to a generated step.
pub const WARM_UP: usize = 10;
pub const MIN_SAMPLES: usize = 200;
pub const VARIABLES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub interval_secs: f64,
    pub seed: u64,
    /// Std of the AR(1) innovation driving the latent load.
    pub latent_noise: f64,
    /// Measurement noise std of v1..v5.
    pub var_noise: [f64; VARIABLES],
    pub label_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            samples: 23_000,
            interval_secs: 65.0,
            seed: 42,
            latent_noise: 0.05,
            var_noise: [0.5, 0.5, 0.2, 0.5, 0.02],
            label_noise: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn noiseless(mut self) -> Self {
        self.latent_noise = 0.0;
        self.var_noise = [0.0; VARIABLES];
        self.label_noise = 0.0;
        self
    }
}

/// Timestamped multivariate series with an optional label column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub timestamps: Vec<f64>,
    pub series: Series,
}

impl Dataset {
    pub fn new(timestamps: Vec<f64>, series: Series) -> Result<Self> {
        if timestamps.len() != series.len() {
            return Err(Error::Dimension {
                op: "dataset",
                detail: alloc::format!("{} timestamps for {} rows", timestamps.len(), series.len()),
            });
        }
        Ok(Self { timestamps, series })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.series.labels.as_deref()
    }

    /// Rows `from..to` as a new dataset.
    pub fn slice(&self, from: usize, to: usize) -> Dataset {
        let m = self.series.vars;
        Dataset {
            timestamps: self.timestamps[from..to].to_vec(),
            series: Series {
                values: self.series.values[from * m..to * m].to_vec(),
                vars: m,
                labels: self.series.labels.as_ref().map(|l| l[from..to].to_vec()),
            },
        }
    }

    pub fn without_labels(mut self) -> Self {
        self.series.labels = None;
        self
    }
}

/// Generate `samples − WARM_UP` rows of v1..v5 and y.
pub fn generate_process(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.samples < MIN_SAMPLES {
        return Err(Error::DatasetTooSmall { rows: cfg.samples, min: MIN_SAMPLES });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gauss = |std: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    };
    let n = cfg.samples;
    let two_pi = core::f64::consts::PI * 2.0;
    let mut latent = vec![0.0; n];
    let mut u = 0.0;
    for (t, l) in latent.iter_mut().enumerate() {
        u = 0.9 * u + gauss(cfg.latent_noise);
        let tf = t as f64;
        *l = libm::sin(two_pi * tf / 480.0) + 0.5 * libm::sin(two_pi * tf / 97.0 + 1.3) + u;
    }
    let lag = |t: usize, k: usize| if t >= k { latent[t - k] } else { 0.0 };
    let rows = n - WARM_UP;
    let mut values = Vec::with_capacity(rows * VARIABLES);
    let mut labels = Vec::with_capacity(rows);
    let mut timestamps = Vec::with_capacity(rows);
    let sn = cfg.var_noise;
    for t in 0..n {
        let l = latent[t];
        let v1 = 300.0 + 40.0 * l + gauss(sn[0]);
        let v2 = 180.0 + 25.0 * lag(t, 3) + gauss(sn[1]);
        let v3 = 25.0 + 5.0 * lag(t, 1) + gauss(sn[2]);
        let v4 = 120.0 + 20.0 * libm::tanh(lag(t, 2)) + gauss(sn[3]);
        let v5 = 2.0 + 0.3 * lag(t, 5) + 0.1 * l * l + gauss(sn[4]);
        let y = 10.0 + 4.0 * libm::tanh(0.8 * lag(t, 2)) + 1.5 * lag(t, 6) + 0.2 * v5 + gauss(cfg.label_noise);
        if t >= WARM_UP {
            values.extend_from_slice(&[v1, v2, v3, v4, v5]);
            labels.push(y);
            timestamps.push(t as f64 * cfg.interval_secs);
        }
    }
    Dataset::new(timestamps, Series::new(values, VARIABLES, Some(labels))?)
}

/// Row counts of the chronological 70/15/15 split; validation and test are
/// rounded down and the remainder goes to training.
pub fn split_sizes(rows: usize) -> Result<(usize, usize, usize)> {
    let val = rows * 15 / 100;
    if val == 0 {
        return Err(Error::DatasetTooSmall { rows, min: 7 });
    }
    Ok((rows - 2 * val, val, val))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn split(data: &Dataset) -> Result<Splits> {
    let (tr, va, _) = split_sizes(data.len())?;
    Ok(Splits { train: data.slice(0, tr), val: data.slice(tr, tr + va), test: data.slice(tr + va, data.len()) })
}

/// Per-variable z-score statistics (population std) from the training block.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub label_mean: Option<f64>,
    pub label_std: Option<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

impl NormStats {
    pub fn fit(train: &Series) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptySample);
        }
        let m = train.vars;
        let mut means = Vec::with_capacity(m);
        let mut stds = Vec::with_capacity(m);
        for s in 0..m {
            let (mu, sd) = mean_std(train.values.iter().skip(s).step_by(m).copied());
            if !(sd > 0.0) {
                return Err(Error::ZeroVariance(s));
            }
            means.push(mu);
            stds.push(sd);
        }
        let (label_mean, label_std) = match &train.labels {
            Some(l) => {
                let (mu, sd) = mean_std(l.iter().copied());
                if !(sd > 0.0) {
                    return Err(Error::ZeroVariance(m));
                }
                (Some(mu), Some(sd))
            }
            None => (None, None),
        };
        Ok(Self { means, stds, label_mean, label_std })
    }

    pub fn vars(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, series: &Series) -> Result<Series> {
        if series.vars != self.vars() {
            return Err(Error::Dimension { op: "normalize", detail: alloc::format!("{} vs {} variables", series.vars, self.vars()) });
        }
        let m = series.vars;
        let values = series.values.iter().enumerate().map(|(i, v)| (v - self.means[i % m]) / self.stds[i % m]).collect();
        let labels = match (&series.labels, self.label_mean, self.label_std) {
            (Some(l), Some(mu), Some(sd)) => Some(l.iter().map(|v| (v - mu) / sd).collect()),
            (Some(_), _, _) => return Err(Error::MissingLabels),
            (None, _, _) => None,
        };
        Series::new(values, m, labels)
    }

    pub fn invert(&self, series: &Series) -> Result<Series> {
        let m = series.vars;
        let values = series.values.iter().enumerate().map(|(i, v)| v * self.stds[i % m] + self.means[i % m]).collect();
        let labels = match &series.labels {
            Some(l) => Some(l.iter().map(|&v| self.denormalize_label(v)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Series::new(values, m, labels)
    }

    pub fn normalize_value(&self, var: usize, v: f64) -> f64 {
        (v - self.means[var]) / self.stds[var]
    }

    pub fn denormalize_value(&self, var: usize, v: f64) -> f64 {
        v * self.stds[var] + self.means[var]
    }

    pub fn normalize_label(&self, y: f64) -> Result<f64> {
        match (self.label_mean, self.label_std) {
            (Some(mu), Some(sd)) => Ok((y - mu) / sd),
            _ => Err(Error::MissingLabels),
        }
    }

    pub fn denormalize_label(&self, y: f64) -> Result<f64> {
        match (self.label_mean, self.label_std) {
            (Some(mu), Some(sd)) => Ok(y * sd + mu),
            _ => Err(Error::MissingLabels),
        }
    }
}
