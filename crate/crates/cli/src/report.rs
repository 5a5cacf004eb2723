//! JSON reports printed by `eval` and written next to artifacts.

use serde::{Deserialize, Serialize};
use softsense_core::metrics::{ClassificationReport, MetricsReport};

/// Regression metrics as a flat JSON object. `r2` is `null` when the labels
/// have zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub r2_defined: bool,
    pub mape_pct: Option<f64>,
    pub smape_pct: f64,
    pub c: usize,
    pub y_mean: f64,
}

impl From<&MetricsReport> for MetricsRecord {
    fn from(r: &MetricsReport) -> Self {
        Self {
            mae: r.mae,
            rmse: r.rmse,
            r2: r.r2_defined.then_some(r.r2),
            r2_defined: r.r2_defined,
            mape_pct: r.mape_pct,
            smape_pct: r.smape_pct,
            c: r.count,
            y_mean: r.label_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&ClassificationReport> for ClassificationRecord {
    fn from(r: &ClassificationReport) -> Self {
        Self { accuracy: r.accuracy, precision: r.precision, recall: r.recall, f1: r.f1 }
    }
}

/// Imputation metrics at one mask ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationRecord {
    pub mask_ratio: f64,
    #[serde(flatten)]
    pub metrics: MetricsRecord,
}

/// Detection quality for one kind of injected anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub kind: String,
    pub labelled: usize,
    pub flagged: usize,
    pub per_variable: Vec<ClassificationRecord>,
    pub average: ClassificationRecord,
}

/// Anomaly evaluation: one record per injected kind plus the clean false-positive rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub quantile: f64,
    pub clean_false_positive_rate: f64,
    pub kinds: Vec<DetectionRecord>,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports contain only finite numbers and strings")
}
