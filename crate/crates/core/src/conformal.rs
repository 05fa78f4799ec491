//! Split conformal prediction for point forecasters.
//!
//! The available history is split into a part used as model context (or for
//! fitting) and a calibration part. Absolute residuals on the calibration part
//! are the conformity scores; their finite-sample-corrected empirical quantile
//! `q̂` is the half-width of every prediction interval:
//!
//! ```text
//! k     = ceil((n + 1)(1 - α))          (1-based order statistic)
//! level = min(1, k / n)
//! q̂     = k-th smallest score, or the maximum when k > n
//! I     = [ŷ - q̂, ŷ + q̂]
//! ```
//!
//! Calibration for context-based forecasters uses a rolling window: predict
//! `H` points from the `C` preceding observations, score them, shift by `H`.
//! The last window may have only `r < H` observations left; it is still
//! forecast `H` steps ahead but only the first `r` scores are kept, so a series
//! of length `N` always yields `N - C` scores.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decimal::Decimal;
use crate::domain::{
    ConformityScores, DomainError, Forecast, MiscoverageRate, PredictionInterval, ScoreOrigin,
    TimeSeries, UncertaintyThreshold,
};
use crate::forecasters::{ForecastError, ForecastQuery, Forecaster};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("series of {len} points is too short for split {spec:?}")]
    SeriesTooShort { len: usize, spec: SplitSpec },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("{predicted} predictions but {actual} actual values")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("actual value at index {0} is not finite")]
    NonFiniteActual(usize),
    #[error("no calibration scores{}", .0.as_ref().map(|s| format!(" for series `{s}`")).unwrap_or_default())]
    EmptyCalibration(Option<String>),
    #[error("context of {context} points needs a series longer than {len}")]
    ContextTooLong { context: usize, len: usize },
    #[error("horizon must be at least one step")]
    ZeroHorizon,
    #[error("forecaster failed on series `{series}` window {window}: {source}")]
    ForecasterFailure {
        series: String,
        window: usize,
        source: ForecastError,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// How the available history is divided between context/fit and calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Fit on the first `floor(train_fraction × N)` points, calibrate on the rest.
    Fraction { train_fraction: f64 },
    /// Use `context_length` points as rolling context, calibrate on the remaining `N - C`.
    Context { context_length: usize },
}

impl SplitSpec {
    /// Number of leading points reserved for context or fitting.
    pub fn train_len(&self, n: usize) -> Result<usize, ConformalError> {
        let train = match *self {
            SplitSpec::Fraction { train_fraction } => {
                if !(train_fraction > 0.0 && train_fraction < 1.0) {
                    return Err(ConformalError::InvalidSplit(format!(
                        "train_fraction must lie in (0, 1), got {train_fraction}"
                    )));
                }
                let frac = Decimal::from_f64(train_fraction).expect("checked finite and positive");
                frac.floor_mul(n as u64) as usize
            }
            SplitSpec::Context { context_length } => context_length,
        };
        if train == 0 || train >= n {
            return Err(ConformalError::SeriesTooShort { len: n, spec: *self });
        }
        Ok(train)
    }
}

/// Which calibration scores a threshold is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// One threshold per series.
    #[default]
    Local,
    /// One threshold from the pooled scores of every series.
    Global,
}

/// Splits a series into a leading training/context part and a trailing calibration part.
pub fn split_train_calibration(
    series: &TimeSeries,
    spec: SplitSpec,
) -> Result<(TimeSeries, TimeSeries), ConformalError> {
    let n = series.len();
    let train = spec.train_len(n)?;
    Ok((
        series.slice(0, train, series.id()),
        series.slice(train, n, series.id()),
    ))
}

/// `|predicted[k] - actual[k]|` for every step, in order.
pub fn conformity_scores(
    predicted: &Forecast,
    actual: &[f64],
) -> Result<ConformityScores, ConformalError> {
    Ok(ConformityScores::from_values(abs_residuals(predicted.point(), actual)?)?)
}

fn abs_residuals(predicted: &[f64], actual: &[f64]) -> Result<Vec<f64>, ConformalError> {
    if predicted.len() != actual.len() {
        return Err(ConformalError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if let Some(i) = actual.iter().position(|v| !v.is_finite()) {
        return Err(ConformalError::NonFiniteActual(i));
    }
    Ok(predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .collect())
}

/// 1-based rank of the order statistic used as q̂: `ceil((n + 1)(1 - α))`.
pub fn quantile_rank(calibration_size: usize, alpha: MiscoverageRate) -> usize {
    alpha.ceil_coverage_count(calibration_size as u64 + 1) as usize
}

/// Finite-sample corrected quantile level, clamped to 1.
pub fn corrected_level(calibration_size: usize, alpha: MiscoverageRate) -> f64 {
    assert!(calibration_size > 0, "calibration set must be nonempty");
    let rank = quantile_rank(calibration_size, alpha);
    if rank >= calibration_size {
        1.0
    } else {
        rank as f64 / calibration_size as f64
    }
}

/// The corrected empirical quantile of the scores (an exact order statistic).
pub fn uncertainty_threshold(
    scores: &ConformityScores,
    alpha: MiscoverageRate,
) -> Result<UncertaintyThreshold, ConformalError> {
    threshold_from_values(scores.scores(), alpha).ok_or(ConformalError::EmptyCalibration(None))
}

fn threshold_from_values(scores: &[f64], alpha: MiscoverageRate) -> Option<UncertaintyThreshold> {
    let n = scores.len();
    if n == 0 {
        return None;
    }
    let rank = quantile_rank(n, alpha).min(n);
    let mut buf = scores.to_vec();
    let (_, q_hat, _) = buf.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Some(UncertaintyThreshold {
        q_hat: *q_hat,
        level: corrected_level(n, alpha),
        calibration_size: n,
    })
}

/// `[center - q̂, center + q̂]` at every step. Bounds are never clipped.
pub fn build_interval(center: &Forecast, threshold: &UncertaintyThreshold) -> PredictionInterval {
    let q = threshold.q_hat;
    let lower = center.point().iter().map(|c| c - q).collect();
    let upper = center.point().iter().map(|c| c + q).collect();
    PredictionInterval::from_bounds(lower, upper, center.clone()).expect("bands match center")
}

/// Window start offsets and retained lengths for rolling calibration.
fn rolling_windows(n: usize, context: usize, horizon: usize) -> Vec<(usize, usize)> {
    (context..n)
        .step_by(horizon)
        .map(|t| (t, horizon.min(n - t)))
        .collect()
}

/// Rolling-window calibration of a context-based forecaster over a whole series.
///
/// Windows are independent (each is fed ground-truth context) and are
/// evaluated in parallel; scores are returned in time order.
pub fn rolling_calibrate(
    series: &TimeSeries,
    forecaster: &dyn Forecaster,
    context_length: usize,
    horizon: usize,
) -> Result<ConformityScores, ConformalError> {
    let n = series.len();
    if horizon == 0 {
        return Err(ConformalError::ZeroHorizon);
    }
    if context_length == 0 || context_length + 1 > n {
        return Err(ConformalError::ContextTooLong {
            context: context_length,
            len: n,
        });
    }
    let values = series.values();
    let per_window: Vec<Vec<f64>> = rolling_windows(n, context_length, horizon)
        .into_par_iter()
        .enumerate()
        .map(|(window, (t, keep))| {
            let query = ForecastQuery {
                series_id: series.id(),
                context: &values[t - context_length..t],
                horizon,
                frequency: series.frequency(),
            };
            let fail = |source| ConformalError::ForecasterFailure {
                series: series.id().to_string(),
                window,
                source,
            };
            let forecast = forecaster.forecast(&query).map_err(fail)?;
            if forecast.len() != horizon {
                return Err(fail(ForecastError::WrongLength {
                    expected: horizon,
                    got: forecast.len(),
                }));
            }
            abs_residuals(&forecast.point()[..keep], &values[t..t + keep])
        })
        .collect::<Result<_, _>>()?;

    let mut scores = Vec::with_capacity(n - context_length);
    let mut provenance = Vec::with_capacity(n - context_length);
    for (window, chunk) in per_window.into_iter().enumerate() {
        for (offset, s) in chunk.into_iter().enumerate() {
            scores.push(s);
            provenance.push(ScoreOrigin {
                series_id: series.id().to_string(),
                window_index: window,
                offset,
            });
        }
    }
    Ok(ConformityScores::new(scores, provenance)?)
}

/// Calibration for fit-based forecasters: fit on the first `train_len` points
/// and forecast the whole calibration part in one shot.
pub fn fit_calibrate(
    series: &TimeSeries,
    forecaster: &dyn Forecaster,
    train_len: usize,
) -> Result<ConformityScores, ConformalError> {
    let n = series.len();
    if train_len == 0 || train_len >= n {
        return Err(ConformalError::ContextTooLong {
            context: train_len,
            len: n,
        });
    }
    let values = series.values();
    let horizon = n - train_len;
    let fail = |source| ConformalError::ForecasterFailure {
        series: series.id().to_string(),
        window: 0,
        source,
    };
    let forecast = forecaster
        .forecast(&ForecastQuery {
            series_id: series.id(),
            context: &values[..train_len],
            horizon,
            frequency: series.frequency(),
        })
        .map_err(fail)?;
    if forecast.len() != horizon {
        return Err(fail(ForecastError::WrongLength {
            expected: horizon,
            got: forecast.len(),
        }));
    }
    let scores = abs_residuals(forecast.point(), &values[train_len..])?;
    let provenance = (0..horizon)
        .map(|offset| ScoreOrigin {
            series_id: series.id().to_string(),
            window_index: 0,
            offset,
        })
        .collect();
    Ok(ConformityScores::new(scores, provenance)?)
}

/// One threshold per series.
pub fn local_thresholds(
    per_series: &BTreeMap<String, ConformityScores>,
    alpha: MiscoverageRate,
) -> Result<BTreeMap<String, UncertaintyThreshold>, ConformalError> {
    per_series
        .iter()
        .map(|(id, scores)| {
            threshold_from_values(scores.scores(), alpha)
                .map(|t| (id.clone(), t))
                .ok_or_else(|| ConformalError::EmptyCalibration(Some(id.clone())))
        })
        .collect()
}

/// A single threshold from the pooled scores of all series.
pub fn global_threshold(
    per_series: &BTreeMap<String, ConformityScores>,
    alpha: MiscoverageRate,
) -> Result<UncertaintyThreshold, ConformalError> {
    let pooled: Vec<f64> = per_series
        .values()
        .flat_map(|s| s.scores().iter().copied())
        .collect();
    threshold_from_values(&pooled, alpha).ok_or(ConformalError::EmptyCalibration(None))
}
