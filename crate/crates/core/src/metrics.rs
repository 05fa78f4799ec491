//! Coverage, width and accuracy metrics, scaled against the naive forecaster.
//!
//! MSIW is a mean of per-unit width ratios while MASE is a ratio of summed
//! errors. The two aggregations are intentionally different.

use serde::{Deserialize, Serialize};

use crate::domain::PredictionInterval;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{actual} actual values for an interval of length {interval}")]
    LengthMismatch { actual: usize, interval: usize },
    #[error("no evaluation units")]
    EmptyTestSet,
    #[error("naive interval width is zero for unit `{0}`")]
    NaiveZeroWidth(String),
    #[error("naive forecaster has zero total absolute error")]
    NaiveZeroError,
    #[error("model and naive records disagree on units (model `{model}`, naive `{naive}`)")]
    UnitMismatch { model: String, naive: String },
}

/// Per-unit coverage rate, mean interval width and mean absolute error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub unit_id: String,
    pub cr: f64,
    pub iw: f64,
    pub mae: f64,
}

impl EvaluationRecord {
    /// Scores one interval against the actual holdout values.
    pub fn evaluate(
        unit_id: impl Into<String>,
        actual: &[f64],
        interval: &PredictionInterval,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            unit_id: unit_id.into(),
            cr: coverage_rate(actual, interval)?,
            iw: interval_width(interval),
            mae: mean_absolute_error(interval.center().point(), actual)?,
        })
    }
}

/// Dataset-level aggregates for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mcr: f64,
    pub msiw: f64,
    pub mase: f64,
    pub n_units: usize,
}

impl AggregateReport {
    pub fn from_records(
        model: &[EvaluationRecord],
        naive: &[EvaluationRecord],
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            mcr: mean_coverage_rate(model)?,
            msiw: msiw(model, naive)?,
            mase: mase(model, naive)?,
            n_units: model.len(),
        })
    }
}

/// Fraction of steps whose actual value lies in the closed interval.
pub fn coverage_rate(actual: &[f64], interval: &PredictionInterval) -> Result<f64, MetricsError> {
    if actual.len() != interval.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            interval: interval.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let inside = actual
        .iter()
        .enumerate()
        .filter(|&(k, &y)| interval.contains(k, y))
        .count();
    Ok(inside as f64 / actual.len() as f64)
}

/// Mean of `upper - lower` over the horizon.
pub fn interval_width(interval: &PredictionInterval) -> f64 {
    if interval.is_empty() {
        return 0.0;
    }
    let total: f64 = interval
        .upper()
        .iter()
        .zip(interval.lower())
        .map(|(u, l)| u - l)
        .sum();
    total / interval.len() as f64
}

pub fn mean_absolute_error(predicted: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    if predicted.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            interval: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let total: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(total / actual.len() as f64)
}

/// Unweighted mean of the per-unit coverage rates.
pub fn mean_coverage_rate(records: &[EvaluationRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    Ok(records.iter().map(|r| r.cr).sum::<f64>() / records.len() as f64)
}

fn check_units(model: &[EvaluationRecord], naive: &[EvaluationRecord]) -> Result<(), MetricsError> {
    if model.is_empty() || naive.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    if model.len() != naive.len() {
        let pick = |r: &[EvaluationRecord], i: usize| {
            r.get(i).map(|x| x.unit_id.clone()).unwrap_or_else(|| "<missing>".into())
        };
        let i = model.len().min(naive.len());
        return Err(MetricsError::UnitMismatch {
            model: pick(model, i),
            naive: pick(naive, i),
        });
    }
    for (m, n) in model.iter().zip(naive) {
        if m.unit_id != n.unit_id {
            return Err(MetricsError::UnitMismatch {
                model: m.unit_id.clone(),
                naive: n.unit_id.clone(),
            });
        }
    }
    Ok(())
}

/// Mean over units of `IW / IW_naive`.
pub fn msiw(model: &[EvaluationRecord], naive: &[EvaluationRecord]) -> Result<f64, MetricsError> {
    check_units(model, naive)?;
    let mut total = 0.0;
    for (m, n) in model.iter().zip(naive) {
        if n.iw <= 0.0 {
            return Err(MetricsError::NaiveZeroWidth(n.unit_id.clone()));
        }
        total += m.iw / n.iw;
    }
    Ok(total / model.len() as f64)
}

/// `Σ MAE / Σ MAE_naive` over units.
pub fn mase(model: &[EvaluationRecord], naive: &[EvaluationRecord]) -> Result<f64, MetricsError> {
    check_units(model, naive)?;
    let num: f64 = model.iter().map(|r| r.mae).sum();
    let den: f64 = naive.iter().map(|r| r.mae).sum();
    if den <= 0.0 {
        return Err(MetricsError::NaiveZeroError);
    }
    Ok(num / den)
}

/// Width ratio when a single (global) interval width exists per dataset.
pub fn normalized_global_width(model_iw: f64, naive_iw: f64) -> Result<f64, MetricsError> {
    if naive_iw <= 0.0 {
        return Err(MetricsError::NaiveZeroWidth("global".into()));
    }
    Ok(model_iw / naive_iw)
}
