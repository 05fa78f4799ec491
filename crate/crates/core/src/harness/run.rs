//! Runs every (scenario, horizon, estimator) cell of an experiment.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{
    auto_context_length, default_split, DataSource, EstimatorConfig, ExperimentConfig, Generator, ScenarioConfig,
    CACHE_DIR_ENV,
};
use super::HarnessError;
use crate::bridge::{AdapterPool, ConnectOptions, Endpoint, LatencyStats, RemoteForecaster};
use crate::conformal::{
    build_interval, fit_calibrate, rolling_calibrate, uncertainty_threshold, SplitSpec, ThresholdMode,
};
use crate::datasets::{
    fetch_dataset, load_long_csv, sample_windows, synth_iid, synth_seasonal, tsf, HttpDownloader, Manifest,
};
use crate::domain::{
    ConformityScores, Forecast, Frequency, HorizonLabel, HorizonSpec, MiscoverageRate, PredictionInterval, TimeSeries,
    UncertaintyThreshold,
};
use crate::forecasters::{ForecastError, ForecastQuery, Forecaster, ForecasterHandle, ForecasterKind, Naive};
use crate::metrics::{mase, mean_coverage_rate, msiw, EvaluationRecord, MetricsError};

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub horizon_label: HorizonLabel,
    pub horizon: usize,
    pub estimator: String,
    pub threshold_mode: ThresholdMode,
    pub mase: Option<f64>,
    pub mcr: Option<f64>,
    pub iw: Option<f64>,
    pub msiw: Option<f64>,
    pub n_units: usize,
    pub failures: usize,
}

impl ResultRow {
    /// The metric columns, for comparisons that ignore the estimator name.
    pub fn metrics(&self) -> [Option<f64>; 4] {
        [self.mase, self.mcr, self.iw, self.msiw]
    }
}

/// An evaluated unit: its calibrated threshold, interval and holdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitOutcome {
    pub dataset: String,
    pub horizon_label: HorizonLabel,
    pub estimator: String,
    pub unit_id: String,
    pub threshold: UncertaintyThreshold,
    pub interval: PredictionInterval,
    pub holdout: Vec<f64>,
    /// The last points of the available history, for plotting.
    pub context_tail: Vec<f64>,
    pub record: EvaluationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub dataset: String,
    pub horizon_label: HorizonLabel,
    pub estimator: String,
    pub unit_id: String,
    pub error: String,
}

/// Wall-clock and adapter latency per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub dataset: String,
    pub horizon_label: HorizonLabel,
    pub estimator: String,
    pub units: usize,
    pub wall_ms: f64,
    pub adapter: Option<LatencyStats>,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub alpha: MiscoverageRate,
    pub rows: Vec<ResultRow>,
    pub units: Vec<UnitOutcome>,
    pub failures: Vec<FailureRecord>,
    pub timings: Vec<CellTiming>,
}

/// Runs the experiment and returns the results table.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>, HarnessError> {
    Ok(run_experiment_detailed(config)?.rows)
}

/// A history/holdout pair that metrics are aggregated over.
struct Unit {
    id: String,
    /// Units sharing a group are pooled in global threshold mode.
    group: usize,
    available: TimeSeries,
    holdout: Vec<f64>,
}

/// Calibration scores and the test forecast of one unit.
struct Prepared {
    scores: ConformityScores,
    center: Forecast,
}

struct Estimator {
    config: EstimatorConfig,
    remote: Option<Result<Arc<AdapterPool>, String>>,
}

const PLOT_TAIL_HORIZONS: usize = 4;

pub fn run_experiment_detailed(config: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    config.validate()?;
    let series = load_dataset(config)?;
    let spec = &config.dataset.spec;
    if let Err(e) = spec.check(&series) {
        if config.dataset.strict {
            return Err(e.into());
        }
        log::warn!("{e}");
    }
    let frequency = spec.frequency;
    // One worker per series by default, capped at the hardware threads.
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threads = config.parallelism.unwrap_or_else(|| series.len().clamp(1, cores));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;

    let estimators: Vec<Estimator> = config
        .estimators
        .iter()
        .map(|e| Estimator {
            config: e.clone(),
            remote: connect_external(&e.handle),
        })
        .collect();

    let mut run = ExperimentRun {
        alpha: config.alpha,
        rows: Vec::new(),
        units: Vec::new(),
        failures: Vec::new(),
        timings: Vec::new(),
    };
    let reference = EstimatorConfig::new(ForecasterHandle::naive("Naive"), None);

    for scenario in &config.scenarios {
        let dataset = scenario.label(&spec.name);
        for horizon in scenario.horizon_specs(frequency)? {
            let units = build_units(&series, scenario, horizon, config.seed)?;
            let naive: Box<dyn Forecaster> = Box::new(Naive::new("Naive"));
            let naive_prepared = pool.install(|| prepare_all(&units, naive.as_ref(), &reference, horizon, None));
            let naive_eval = evaluate(&units, &naive_prepared, config.alpha, config.threshold_mode)?;

            for est in &estimators {
                let started = Instant::now();
                let before = remote_stats(est);
                let evaluated = match cell_forecaster(est, frequency, horizon) {
                    Ok((forecaster, max_context)) => {
                        let prepared = pool.install(|| {
                            prepare_all(&units, forecaster.as_ref(), &est.config, horizon, max_context)
                        });
                        evaluate(&units, &prepared, config.alpha, config.threshold_mode)?
                    }
                    Err(msg) => units.iter().map(|_| Err(msg.clone())).collect(),
                };
                let adapter = match (before, remote_stats(est)) {
                    (Some(b), Some(a)) => Some(stats_delta(&a, &b)),
                    _ => None,
                };
                let cell = CellKey {
                    dataset: &dataset,
                    horizon,
                    estimator: &est.config.handle.name,
                };
                let row = aggregate(&cell, &units, &evaluated, &naive_eval, config, &mut run);
                run.timings.push(CellTiming {
                    dataset: dataset.clone(),
                    horizon_label: horizon.label,
                    estimator: est.config.handle.name.clone(),
                    units: units.len(),
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    adapter,
                });
                run.rows.push(row);
            }
        }
    }
    Ok(run)
}

fn stats_delta(after: &LatencyStats, before: &LatencyStats) -> LatencyStats {
    LatencyStats {
        requests: after.requests - before.requests,
        failures: after.failures - before.failures,
        total_ms: after.total_ms - before.total_ms,
        max_ms: after.max_ms,
        adapter_total_ms: after.adapter_total_ms - before.adapter_total_ms,
    }
}

fn remote_stats(est: &Estimator) -> Option<LatencyStats> {
    match &est.remote {
        Some(Ok(pool)) => Some(pool.stats()),
        _ => None,
    }
}

fn connect_external(handle: &ForecasterHandle) -> Option<Result<Arc<AdapterPool>, String>> {
    let ForecasterKind::External(spec) = &handle.kind else {
        return None;
    };
    let connected = Endpoint::parse(&spec.endpoint)
        .and_then(|endpoint| {
            AdapterPool::connect(
                &endpoint,
                spec.connections,
                Duration::from_millis(spec.timeout_ms),
                ConnectOptions::default(),
            )
        })
        .map(Arc::new)
        .map_err(|e| e.to_string());
    if let Err(e) = &connected {
        log::error!("{}: {e}", handle.name);
    }
    Some(connected)
}

/// The forecaster for one cell, plus the adapter's context limit for externals.
fn cell_forecaster(
    est: &Estimator,
    frequency: Frequency,
    horizon: HorizonSpec,
) -> Result<(Box<dyn Forecaster>, Option<usize>), String> {
    if let Some(f) = est.config.handle.builtin(frequency, horizon.steps) {
        return Ok((f, None));
    }
    let pool = match &est.remote {
        Some(Ok(pool)) => pool.clone(),
        Some(Err(e)) => return Err(e.clone()),
        None => return Err("external estimator without a connection".into()),
    };
    let info = pool.info();
    if !info.supported_frequencies.contains(&frequency) {
        return Err(format!("adapter `{}` does not support {frequency} data", info.name));
    }
    let remote = RemoteForecaster::new(
        est.config.handle.name.clone(),
        pool,
        frequency.default_season_length(),
    );
    Ok((Box::new(remote), Some(info.max_context)))
}

fn load_dataset(config: &ExperimentConfig) -> Result<Vec<TimeSeries>, HarnessError> {
    let spec = &config.dataset.spec;
    let series = match &config.dataset.source {
        DataSource::Csv { path } => load_long_csv(path, spec.frequency)?,
        DataSource::Tsf { path } => {
            let file = std::fs::File::open(path)?;
            tsf::read_tsf(std::io::BufReader::new(file), Some(spec.frequency))?
        }
        DataSource::Fetch { manifest, cache_dir } => {
            let manifest = Manifest::load(manifest)?;
            let cache = cache_dir
                .clone()
                .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(".tscp-cache"));
            let path = fetch_dataset(&spec.name, &manifest, &cache, &HttpDownloader)?;
            if path.extension().is_some_and(|e| e == "tsf") {
                tsf::read_tsf(std::io::BufReader::new(std::fs::File::open(&path)?), Some(spec.frequency))?
            } else {
                load_long_csv(&path, spec.frequency)?
            }
        }
        DataSource::Synthetic {
            generator,
            mean,
            sigma,
            season,
            amplitude,
            seed,
        } => {
            let base = seed.unwrap_or(config.seed);
            let m = season.unwrap_or(spec.frequency.default_season_length());
            (0..spec.expected_series)
                .map(|i| {
                    let s = base.wrapping_add(i as u64);
                    let raw = match generator {
                        Generator::Iid => synth_iid(spec.expected_length, *mean, *sigma, s),
                        Generator::Seasonal => {
                            let wave = synth_seasonal(spec.expected_length, m, *amplitude, *sigma, s);
                            let shifted: Vec<f64> = wave.values().iter().map(|v| v + mean).collect();
                            TimeSeries::new(wave.id(), wave.start(), wave.frequency(), shifted)?
                        }
                    };
                    Ok(TimeSeries::new(
                        format!("{}-{i:04}", spec.name),
                        raw.start(),
                        spec.frequency,
                        raw.values().to_vec(),
                    )?)
                })
                .collect::<Result<_, HarnessError>>()?
        }
    };
    if series.is_empty() {
        return Err(HarnessError::Config(format!("dataset `{}` has no series", spec.name)));
    }
    if let Some(s) = series.iter().find(|s| s.frequency() != spec.frequency) {
        return Err(HarnessError::Config(format!(
            "series `{}` is {} but the dataset is declared {}",
            s.id(),
            s.frequency(),
            spec.frequency
        )));
    }
    Ok(series)
}

fn build_units(
    series: &[TimeSeries],
    scenario: &ScenarioConfig,
    horizon: HorizonSpec,
    seed: u64,
) -> Result<Vec<Unit>, HarnessError> {
    let h = horizon.steps;
    match scenario.window_scenario(horizon, seed) {
        Some(ws) => {
            let mut units = Vec::new();
            for s in series {
                for w in sample_windows(s, &ws)? {
                    units.push(Unit {
                        id: w.window.id().to_string(),
                        group: w.index,
                        available: w.window,
                        holdout: w.holdout,
                    });
                }
            }
            Ok(units)
        }
        None => series
            .iter()
            .map(|s| {
                if s.len() <= h + 1 {
                    return Err(HarnessError::Config(format!(
                        "series `{}` of {} points is too short for horizon {h}",
                        s.id(),
                        s.len()
                    )));
                }
                let cut = s.len() - h;
                Ok(Unit {
                    id: s.id().to_string(),
                    group: 0,
                    available: s.slice(0, cut, s.id()),
                    holdout: s.values()[cut..].to_vec(),
                })
            })
            .collect(),
    }
}

fn resolve_split(
    est: &EstimatorConfig,
    frequency: Frequency,
    horizon: usize,
    available: usize,
    max_context: Option<usize>,
) -> Result<SplitSpec, String> {
    if let Some(split) = est.split {
        return Ok(split);
    }
    if let Some(split) = default_split(&est.handle, frequency, horizon) {
        return Ok(split);
    }
    auto_context_length(available, max_context.unwrap_or(512))
        .map(|context_length| SplitSpec::Context { context_length })
        .ok_or_else(|| format!("{available} points cannot hold the minimum adapter context of 32"))
}

fn prepare_all(
    units: &[Unit],
    forecaster: &dyn Forecaster,
    est: &EstimatorConfig,
    horizon: HorizonSpec,
    max_context: Option<usize>,
) -> Vec<Result<Prepared, String>> {
    units
        .par_iter()
        .map(|u| prepare(u, forecaster, est, horizon, max_context))
        .collect()
}

fn prepare(
    unit: &Unit,
    forecaster: &dyn Forecaster,
    est: &EstimatorConfig,
    horizon: HorizonSpec,
    max_context: Option<usize>,
) -> Result<Prepared, String> {
    let series = &unit.available;
    let n = series.len();
    let split = resolve_split(est, series.frequency(), horizon.steps, n, max_context)?;
    let train = split.train_len(n).map_err(|e| e.to_string())?;
    let values = series.values();
    let (scores, context) = match split {
        SplitSpec::Context { context_length } => (
            rolling_calibrate(series, forecaster, context_length, horizon.steps),
            &values[n - context_length..],
        ),
        // Fit-based models are refit on the whole history for the test forecast.
        SplitSpec::Fraction { .. } => (fit_calibrate(series, forecaster, train), values),
    };
    let scores = scores.map_err(|e| e.to_string())?;
    let query = ForecastQuery {
        series_id: series.id(),
        context,
        horizon: horizon.steps,
        frequency: series.frequency(),
    };
    let center = forecaster
        .forecast(&query)
        .map_err(|e| format!("test forecast: {e}"))?;
    if center.len() != horizon.steps {
        return Err(format!(
            "test forecast: {}",
            ForecastError::WrongLength {
                expected: horizon.steps,
                got: center.len()
            }
        ));
    }
    Ok(Prepared { scores, center })
}

struct Evaluated {
    threshold: UncertaintyThreshold,
    interval: PredictionInterval,
    record: EvaluationRecord,
}

/// Thresholds (local or pooled per group), intervals and per-unit metrics.
fn evaluate(
    units: &[Unit],
    prepared: &[Result<Prepared, String>],
    alpha: MiscoverageRate,
    mode: ThresholdMode,
) -> Result<Vec<Result<Evaluated, String>>, HarnessError> {
    let mut pooled: BTreeMap<usize, ConformityScores> = BTreeMap::new();
    if mode == ThresholdMode::Global {
        for (u, p) in units.iter().zip(prepared) {
            if let Ok(p) = p {
                pooled.entry(u.group).or_default().extend(p.scores.clone());
            }
        }
    }
    let global: BTreeMap<usize, UncertaintyThreshold> = pooled
        .iter()
        .map(|(g, s)| Ok((*g, uncertainty_threshold(s, alpha)?)))
        .collect::<Result<_, crate::conformal::ConformalError>>()
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    Ok(units
        .iter()
        .zip(prepared)
        .map(|(u, p)| {
            let p = p.as_ref().map_err(Clone::clone)?;
            let threshold = match mode {
                ThresholdMode::Local => uncertainty_threshold(&p.scores, alpha).map_err(|e| e.to_string())?,
                ThresholdMode::Global => global[&u.group],
            };
            let interval = build_interval(&p.center, &threshold);
            let record = EvaluationRecord::evaluate(u.id.clone(), &u.holdout, &interval).map_err(|e| e.to_string())?;
            Ok(Evaluated {
                threshold,
                interval,
                record,
            })
        })
        .collect())
}

struct CellKey<'a> {
    dataset: &'a str,
    horizon: HorizonSpec,
    estimator: &'a str,
}

fn aggregate(
    cell: &CellKey<'_>,
    units: &[Unit],
    model: &[Result<Evaluated, String>],
    naive: &[Result<Evaluated, String>],
    config: &ExperimentConfig,
    run: &mut ExperimentRun,
) -> ResultRow {
    let mut fail = |unit_id: &str, error: String| {
        run.failures.push(FailureRecord {
            dataset: cell.dataset.to_string(),
            horizon_label: cell.horizon.label,
            estimator: cell.estimator.to_string(),
            unit_id: unit_id.to_string(),
            error,
        })
    };
    let mut model_records = Vec::new();
    let mut naive_records = Vec::new();
    let mut kept = Vec::new();
    for (i, (m, n)) in model.iter().zip(naive).enumerate() {
        match (m, n) {
            (Err(e), _) => fail(&units[i].id, e.clone()),
            (_, Err(e)) => fail(&units[i].id, format!("naive reference: {e}")),
            (Ok(_), Ok(n)) if n.record.iw <= 0.0 => {
                fail(&units[i].id, MetricsError::NaiveZeroWidth(units[i].id.clone()).to_string())
            }
            (Ok(m), Ok(n)) => {
                model_records.push(m.record.clone());
                naive_records.push(n.record.clone());
                kept.push((i, m));
            }
        }
    }
    let failures = units.len() - kept.len();

    let metric = |r: Result<f64, MetricsError>, fail: &mut dyn FnMut(&str, String)| match r {
        Ok(v) => Some(v),
        Err(MetricsError::EmptyTestSet) => None,
        Err(e) => {
            fail("*", e.to_string());
            None
        }
    };
    let mcr = metric(mean_coverage_rate(&model_records), &mut fail);
    let msiw_v = metric(msiw(&model_records, &naive_records), &mut fail);
    let mase_v = metric(mase(&model_records, &naive_records), &mut fail);
    let iw = (!model_records.is_empty())
        .then(|| model_records.iter().map(|r| r.iw).sum::<f64>() / model_records.len() as f64);

    for (i, m) in kept {
        let u = &units[i];
        let tail = (PLOT_TAIL_HORIZONS * cell.horizon.steps).min(u.available.len());
        run.units.push(UnitOutcome {
            dataset: cell.dataset.to_string(),
            horizon_label: cell.horizon.label,
            estimator: cell.estimator.to_string(),
            unit_id: u.id.clone(),
            threshold: m.threshold,
            interval: m.interval.clone(),
            holdout: u.holdout.clone(),
            context_tail: u.available.values()[u.available.len() - tail..].to_vec(),
            record: m.record.clone(),
        });
    }

    ResultRow {
        dataset: cell.dataset.to_string(),
        horizon_label: cell.horizon.label,
        horizon: cell.horizon.steps,
        estimator: cell.estimator.to_string(),
        threshold_mode: config.threshold_mode,
        mase: mase_v,
        mcr,
        iw,
        msiw: msiw_v,
        n_units: model_records.len(),
        failures,
    }
}
