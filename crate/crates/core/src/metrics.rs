//! Regression and detection metrics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// `f64::NEG_INFINITY` when the labels have zero variance.
    pub r2: f64,
    pub r2_defined: bool,
    /// Absent when any label is exactly zero.
    pub mape_pct: Option<f64>,
    pub smape_pct: f64,
    pub count: usize,
    pub label_mean: f64,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { op: "metrics", detail: format!("{a} labels vs {b} predictions") });
    }
    if a == 0 {
        return Err(Error::EmptySample);
    }
    Ok(())
}

pub fn compute_metrics(y: &[f64], pred: &[f64]) -> Result<MetricsReport> {
    check_lengths(y.len(), pred.len())?;
    let c = y.len() as f64;
    let mean = y.iter().sum::<f64>() / c;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut tot = 0.0;
    let mut smape = 0.0;
    let mut mape = 0.0;
    let mut mape_defined = true;
    for (&t, &p) in y.iter().zip(pred) {
        let e = t - p;
        abs += e.abs();
        sq += e * e;
        tot += (t - mean) * (t - mean);
        let denom = (t.abs() + p.abs()) / 2.0;
        if denom > 0.0 {
            smape += e.abs() / denom;
        }
        if t == 0.0 {
            mape_defined = false;
        } else {
            mape += (e / t).abs();
        }
    }
    let (r2, r2_defined) = if tot > 0.0 { (1.0 - sq / tot, true) } else { (f64::NEG_INFINITY, false) };
    Ok(MetricsReport {
        mae: abs / c,
        rmse: libm::sqrt(sq / c),
        r2,
        r2_defined,
        mape_pct: mape_defined.then(|| 100.0 * mape / c),
        smape_pct: 100.0 * smape / c,
        count: y.len(),
        label_mean: mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Dimension { op: "classification", detail: format!("{} vs {}", pred.len(), truth.len()) });
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn report(&self) -> ClassificationReport {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        ClassificationReport {
            accuracy: ratio(self.tp + self.tn, self.tp + self.fp + self.fn_ + self.tn),
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn classification_metrics(pred: &[bool], truth: &[bool]) -> Result<ClassificationReport> {
    Ok(Confusion::from_labels(pred, truth)?.report())
}

/// Unweighted mean of per-variable reports.
pub fn macro_average(reports: &[ClassificationReport]) -> Result<ClassificationReport> {
    if reports.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = reports.len() as f64;
    let sum = |f: fn(&ClassificationReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(ClassificationReport {
        accuracy: sum(|r| r.accuracy),
        precision: sum(|r| r.precision),
        recall: sum(|r| r.recall),
        f1: sum(|r| r.f1),
    })
}

/// Per-variable reports for `vars`-interleaved (step-major) label grids.
pub fn per_variable(pred: &[bool], truth: &[bool], vars: usize) -> Result<Vec<ClassificationReport>> {
    if pred.len() != truth.len() || vars == 0 || pred.len() % vars != 0 {
        return Err(Error::Dimension { op: "classification", detail: format!("{} vs {} for {vars} variables", pred.len(), truth.len()) });
    }
    (0..vars)
        .map(|s| {
            let p: Vec<bool> = pred.iter().skip(s).step_by(vars).copied().collect();
            let t: Vec<bool> = truth.iter().skip(s).step_by(vars).copied().collect();
            classification_metrics(&p, &t)
        })
        .collect()
}
