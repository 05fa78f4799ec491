//! Light statistical ensemble: the mean of simple exponential smoothing,
//! additive Holt-Winters and the classic Theta method.
//!
//! Smoothing parameters are picked from the grid {0.01, …, 0.99} by minimising
//! the in-sample one-step-ahead squared error. Holt-Winters has three parameters
//! and is tuned one coordinate at a time over the same grid until a full sweep
//! leaves every parameter unchanged.
//!
//! When a season is available (m ≥ 2 and at least two full seasons of context),
//! SES and Theta run on a classically deseasonalised series and the seasonal
//! indices are added back to their forecasts; Holt-Winters models the season
//! itself. With fewer than two seasons Holt-Winters is dropped and the other
//! two members run on the raw series. The result is flagged as degraded.

use crate::domain::Forecast;

use super::ForecastError;

/// Minimum context length accepted by the ensemble.
pub const MIN_ENSEMBLE_CONTEXT: usize = 10;

const GRID_STEPS: usize = 99;
const MAX_SWEEPS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMember {
    Ses,
    HoltWinters,
    Theta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub forecast: Forecast,
    pub members: Vec<EnsembleMember>,
    /// True when the context held fewer than two seasons and Holt-Winters was dropped.
    pub degraded: bool,
}

fn grid_value(i: usize) -> f64 {
    i as f64 / 100.0
}

fn ses_run(y: &[f64], alpha: f64) -> (f64, f64) {
    let mut level = y[0];
    let mut sse = 0.0;
    for &v in &y[1..] {
        let err = v - level;
        sse += err * err;
        level += alpha * err;
    }
    (sse, level)
}

/// Grid-optimised SES; returns (alpha, final level).
fn ses_fit(y: &[f64]) -> (f64, f64) {
    let mut best = (f64::INFINITY, grid_value(1), y[0]);
    for i in 1..=GRID_STEPS {
        let alpha = grid_value(i);
        let (sse, level) = ses_run(y, alpha);
        if sse < best.0 {
            best = (sse, alpha, level);
        }
    }
    if best.0.is_infinite() {
        // every candidate overflowed; keep the first grid point
        let (_, level) = ses_run(y, best.1);
        best.2 = level;
    }
    (best.1, best.2)
}

/// Simple exponential smoothing: a flat forecast at the final smoothed level.
pub fn ses_forecast(context: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
    if context.is_empty() {
        return Err(ForecastError::EmptyContext);
    }
    let (_, level) = ses_fit(context);
    Ok(vec![level; horizon])
}

struct HwState {
    level: f64,
    trend: f64,
    season: Vec<f64>,
}

fn hw_init(y: &[f64], m: usize) -> HwState {
    if m == 1 {
        return HwState {
            level: y[0],
            trend: y[1] - y[0],
            season: vec![0.0],
        };
    }
    let first = y[..m].iter().sum::<f64>() / m as f64;
    let second = y[m..2 * m].iter().sum::<f64>() / m as f64;
    HwState {
        level: first,
        trend: (second - first) / m as f64,
        season: y[..m].iter().map(|v| v - first).collect(),
    }
}

fn hw_run(y: &[f64], m: usize, params: [f64; 3]) -> (f64, HwState) {
    let [a, b, g] = params;
    let mut st = hw_init(y, m);
    let mut sse = 0.0;
    for (t, &v) in y.iter().enumerate().skip(m) {
        let phase = t % m;
        let s = st.season[phase];
        let base = st.level + st.trend;
        let err = v - (base + s);
        sse += err * err;
        let level = base + a * ((v - s) - base);
        st.trend += b * ((level - st.level) - st.trend);
        if m > 1 {
            st.season[phase] = s + g * ((v - level) - s);
        }
        st.level = level;
    }
    (sse, st)
}

fn hw_fit(y: &[f64], m: usize) -> [f64; 3] {
    let mut idx = [50usize, 10, 10];
    let params = |idx: &[usize; 3]| idx.map(grid_value);
    let mut best = hw_run(y, m, params(&idx)).0;
    let tuned = if m > 1 { 3 } else { 2 };
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for p in 0..tuned {
            for i in 1..=GRID_STEPS {
                if i == idx[p] {
                    continue;
                }
                let mut trial = idx;
                trial[p] = i;
                let sse = hw_run(y, m, params(&trial)).0;
                if sse < best || (best.is_nan() && !sse.is_nan()) {
                    best = sse;
                    idx = trial;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    params(&idx)
}

/// Additive Holt-Winters with season `m`; `m = 1` is Holt's linear trend method.
/// Needs at least two seasons (two points when `m = 1`).
pub fn holt_winters_forecast(
    context: &[f64],
    season_length: usize,
    horizon: usize,
) -> Result<Vec<f64>, ForecastError> {
    let m = season_length;
    if m == 0 {
        return Err(ForecastError::InvalidParameter("season length must be positive".into()));
    }
    if context.len() < 2 * m {
        return Err(ForecastError::ContextTooShort {
            needed: 2 * m,
            got: context.len(),
        });
    }
    let params = hw_fit(context, m);
    let (_, st) = hw_run(context, m, params);
    let n = context.len();
    Ok((1..=horizon)
        .map(|k| st.level + k as f64 * st.trend + st.season[(n - 1 + k) % m])
        .collect())
}

/// Fitted classic Theta model (θ = 0 regression line and SES on the θ = 2 line).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaFit {
    pub intercept: f64,
    pub slope: f64,
    pub ses_alpha: f64,
    pub ses_level: f64,
    pub n: usize,
}

impl ThetaFit {
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        (1..=horizon)
            .map(|k| {
                let trend_line = self.intercept + self.slope * (self.n - 1 + k) as f64;
                0.5 * trend_line + 0.5 * self.ses_level
            })
            .collect()
    }
}

pub fn theta_fit(context: &[f64]) -> Result<ThetaFit, ForecastError> {
    let n = context.len();
    if n == 0 {
        return Err(ForecastError::EmptyContext);
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let y_mean = context.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, &v) in context.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = y_mean - slope * t_mean;
    let theta2: Vec<f64> = context
        .iter()
        .enumerate()
        .map(|(t, &v)| 2.0 * v - (intercept + slope * t as f64))
        .collect();
    let (ses_alpha, ses_level) = ses_fit(&theta2);
    Ok(ThetaFit {
        intercept,
        slope,
        ses_alpha,
        ses_level,
        n,
    })
}

/// Additive seasonal indices from a classical decomposition (centred moving
/// average trend, per-phase mean of the detrended values, normalised to sum
/// to zero). Index `p` belongs to time points `t` with `t % m == p`.
///
/// Returns `None` unless `m ≥ 2` and the context spans two seasons.
pub fn classical_additive_seasonal(y: &[f64], m: usize) -> Option<Vec<f64>> {
    let n = y.len();
    if m < 2 || n < 2 * m {
        return None;
    }
    let k = m / 2;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for t in k..n - k {
        let trend = if m % 2 == 1 {
            y[t - k..=t + k].iter().sum::<f64>() / m as f64
        } else {
            (0.5 * y[t - k] + y[t - k + 1..t + k].iter().sum::<f64>() + 0.5 * y[t + k]) / m as f64
        };
        sums[t % m] += y[t] - trend;
        counts[t % m] += 1;
    }
    let mut idx: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mean = idx.iter().sum::<f64>() / m as f64;
    idx.iter_mut().for_each(|v| *v -= mean);
    Some(idx)
}

/// Mean of the SES, Holt-Winters and Theta forecasts.
pub fn stat_ensemble_light_forecast(
    context: &[f64],
    season_length: usize,
    horizon: usize,
) -> Result<EnsembleForecast, ForecastError> {
    let m = season_length;
    if m == 0 {
        return Err(ForecastError::InvalidParameter("season length must be positive".into()));
    }
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    let n = context.len();
    if n < MIN_ENSEMBLE_CONTEXT {
        return Err(ForecastError::ContextTooShort {
            needed: MIN_ENSEMBLE_CONTEXT.max(2 * m),
            got: n,
        });
    }
    let degraded = m > 1 && n < 2 * m;

    let indices = classical_additive_seasonal(context, m);
    let season_at = |t: usize| indices.as_ref().map_or(0.0, |idx| idx[t % m]);
    let adjusted: Vec<f64> = context
        .iter()
        .enumerate()
        .map(|(t, v)| v - season_at(t))
        .collect();
    let reseason = |f: Vec<f64>| -> Vec<f64> {
        f.into_iter()
            .enumerate()
            .map(|(k, v)| v + season_at(n + k))
            .collect()
    };

    let mut members = vec![EnsembleMember::Ses];
    let mut outputs = vec![reseason(ses_forecast(&adjusted, horizon)?)];
    if !degraded {
        members.push(EnsembleMember::HoltWinters);
        outputs.push(holt_winters_forecast(context, m, horizon)?);
    }
    members.push(EnsembleMember::Theta);
    outputs.push(reseason(theta_fit(&adjusted)?.forecast(horizon)));

    let count = outputs.len() as f64;
    let point = (0..horizon)
        .map(|k| outputs.iter().map(|o| o[k]).sum::<f64>() / count)
        .collect();
    Ok(EnsembleForecast {
        forecast: Forecast::new(point)?,
        members,
        degraded,
    })
}
