//! Experiment configuration, read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::conformal::{SplitSpec, ThresholdMode};
use crate::datasets::{Placement, WindowScenario};
use crate::domain::{Frequency, HorizonLabel, HorizonSpec, MiscoverageRate};
use crate::datasets::DatasetSpec;
use crate::forecasters::{ForecasterHandle, ForecasterKind};

/// Environment variable naming the dataset cache directory.
pub const CACHE_DIR_ENV: &str = "TSCP_CACHE_DIR";

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One experiment: a dataset, the ways it is cut into evaluation units, and
/// the estimators to compare against the naive reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub scenarios: Vec<ScenarioConfig>,
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub alpha: MiscoverageRate,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads. Defaults to the number of series for multi-series
    /// datasets and to the available cores otherwise.
    #[serde(default)]
    pub parallelism: Option<usize>,
    /// Seed for synthetic data and random window placement.
    #[serde(default)]
    pub seed: u64,
    /// Per-unit SVG plots written for the first `plot_units` units of every cell.
    #[serde(default)]
    pub plot_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub spec: DatasetSpec,
    pub source: DataSource,
    /// Reject data whose shape differs from `expected_series` × `expected_length`
    /// instead of only warning.
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    #[default]
    Iid,
    Seasonal,
}

fn one() -> f64 {
    1.0
}

/// Where the series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Long CSV (`series_id,timestamp,value`).
    Csv { path: PathBuf },
    /// Monash `.tsf` file.
    Tsf { path: PathBuf },
    /// Manifest entry named like the dataset, downloaded into the cache.
    Fetch {
        manifest: PathBuf,
        #[serde(default)]
        cache_dir: Option<PathBuf>,
    },
    /// `expected_series` generated series of `expected_length` points.
    Synthetic {
        #[serde(default)]
        generator: Generator,
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default)]
        season: Option<usize>,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn all_labels() -> Vec<HorizonLabel> {
    vec![HorizonLabel::S, HorizonLabel::M, HorizonLabel::L]
}

fn twenty() -> usize {
    20
}

/// How evaluation units are cut from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    /// Windows of `window_points` history plus a holdout, sampled from every
    /// series. Units are windows.
    Windows {
        #[serde(default)]
        name: Option<String>,
        window_points: usize,
        #[serde(default = "all_labels")]
        horizons: Vec<HorizonLabel>,
        /// Non-standard horizon lengths, parallel to `horizons`.
        #[serde(default)]
        steps: Option<Vec<usize>>,
        #[serde(default = "twenty")]
        n_windows: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        placement: Placement,
        #[serde(default)]
        start: usize,
    },
    /// The last `h` points of every series are the holdout. Units are series.
    PerSeries {
        #[serde(default)]
        name: Option<String>,
        #[serde(default = "all_labels")]
        horizons: Vec<HorizonLabel>,
        #[serde(default)]
        steps: Option<Vec<usize>>,
    },
}

impl ScenarioConfig {
    pub fn label(&self, dataset: &str) -> String {
        match self {
            ScenarioConfig::Windows {
                name, window_points, ..
            } => name.clone().unwrap_or_else(|| format!("{dataset}-{window_points}")),
            ScenarioConfig::PerSeries { name, .. } => name.clone().unwrap_or_else(|| dataset.to_string()),
        }
    }

    /// The horizons of this scenario for data of the given frequency.
    pub fn horizon_specs(&self, frequency: Frequency) -> Result<Vec<HorizonSpec>, HarnessError> {
        let (labels, steps) = match self {
            ScenarioConfig::Windows { horizons, steps, .. } | ScenarioConfig::PerSeries { horizons, steps, .. } => {
                (horizons, steps)
            }
        };
        if labels.is_empty() {
            return Err(HarnessError::Config("a scenario needs at least one horizon".into()));
        }
        match steps {
            None => Ok(labels.iter().map(|&l| HorizonSpec::standard(frequency, l)).collect()),
            Some(steps) if steps.len() == labels.len() => labels
                .iter()
                .zip(steps)
                .map(|(&l, &s)| HorizonSpec::new(frequency, l, s, false).map_err(|e| HarnessError::Config(e.to_string())))
                .collect(),
            Some(steps) => Err(HarnessError::Config(format!(
                "{} horizon steps given for {} horizon labels",
                steps.len(),
                labels.len()
            ))),
        }
    }

    /// The window sampling for one horizon, or `None` for per-series scenarios.
    pub fn window_scenario(&self, horizon: HorizonSpec, default_seed: u64) -> Option<WindowScenario> {
        match self {
            ScenarioConfig::Windows {
                window_points,
                n_windows,
                seed,
                placement,
                start,
                ..
            } => Some(WindowScenario {
                window_points: *window_points,
                horizon,
                n_windows: *n_windows,
                seed: seed.unwrap_or(default_seed),
                placement: *placement,
                start: *start,
            }),
            ScenarioConfig::PerSeries { .. } => None,
        }
    }
}

/// A forecaster plus its context/calibration split. Without `split`, the
/// estimator's default applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    #[serde(flatten)]
    pub handle: ForecasterHandle,
    #[serde(default)]
    pub split: Option<SplitSpec>,
}

impl EstimatorConfig {
    pub fn new(handle: ForecasterHandle, split: Option<SplitSpec>) -> Self {
        Self { handle, split }
    }
}

/// Largest context ≤ 512 (and ≤ `max_context`), a multiple of 32, that leaves
/// at least 60 % of `available` points for calibration; 32 when none does.
/// `None` when the series cannot hold 32 context points plus one calibration point.
pub fn auto_context_length(available: usize, max_context: usize) -> Option<usize> {
    if available <= 32 || max_context < 32 {
        return None;
    }
    let cap = max_context.min(512) / 32 * 32;
    let fits = |c: usize| c < available && (available - c) * 10 >= available * 6;
    Some((1..=cap / 32).rev().map(|k| k * 32).find(|&c| fits(c)).unwrap_or(32))
}

/// The split an estimator uses on `available` points when none is configured.
/// External estimators return `None`; they are resolved against the adapter.
pub fn default_split(handle: &ForecasterHandle, frequency: Frequency, horizon: usize) -> Option<SplitSpec> {
    match handle.kind {
        ForecasterKind::Naive => Some(SplitSpec::Context { context_length: 1 }),
        ForecasterKind::SeasonalNaive { season } => Some(SplitSpec::Context {
            context_length: season.resolve(frequency, horizon),
        }),
        ForecasterKind::StatEnsembleLight { .. } => Some(SplitSpec::Fraction { train_fraction: 0.8 }),
        ForecasterKind::External(_) => None,
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative data paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset.source {
            DataSource::Csv { path } | DataSource::Tsf { path } => fix(path),
            DataSource::Fetch { manifest, .. } => fix(manifest),
            DataSource::Synthetic { .. } => {}
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.scenarios.is_empty() {
            return bad("at least one scenario is required".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        let mut names = BTreeSet::new();
        for e in &self.estimators {
            if !names.insert(e.handle.name.as_str()) {
                return bad(format!("estimator name `{}` is used twice", e.handle.name));
            }
            if let Some(split) = e.split {
                match split {
                    SplitSpec::Fraction { train_fraction } if !(train_fraction > 0.0 && train_fraction < 1.0) => {
                        return bad(format!("{}: train_fraction must lie in (0, 1)", e.handle.name));
                    }
                    SplitSpec::Context { context_length: 0 } => {
                        return bad(format!("{}: context_length must be positive", e.handle.name));
                    }
                    _ => {}
                }
            }
        }
        if self.parallelism == Some(0) {
            return bad("parallelism must be positive".into());
        }
        if self.dataset.spec.expected_series == 0 || self.dataset.spec.expected_length == 0 {
            return bad("expected_series and expected_length must be positive".into());
        }
        let mut labels = BTreeSet::new();
        for s in &self.scenarios {
            s.horizon_specs(self.dataset.spec.frequency)?;
            if let ScenarioConfig::Windows {
                window_points, n_windows, ..
            } = s
            {
                if *window_points == 0 || *n_windows == 0 {
                    return bad("window_points and n_windows must be positive".into());
                }
            }
            if !labels.insert(s.label(&self.dataset.spec.name)) {
                return bad(format!("scenario name `{}` is used twice", s.label(&self.dataset.spec.name)));
            }
        }
        Ok(())
    }
}
