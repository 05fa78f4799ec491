//! Value types shared by the conformal engine, the forecasters and the harness.
//!
//! Everything here is immutable once constructed; constructors validate the
//! invariants so downstream code can rely on them without re-checking.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Months, Utc};
use serde::{Deserialize, Serialize};

use crate::decimal::Decimal;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("series `{0}` is empty")]
    EmptySeries(String),
    #[error("series `{series}` has a non-finite value at index {index}")]
    NonFinite { series: String, index: usize },
    #[error("forecast contains a non-finite value at step {0}")]
    NonFiniteForecast(usize),
    #[error("miscoverage rate must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("horizon must be at least one step")]
    ZeroHorizon,
    #[error("horizon {label}={steps} is not a standard {frequency} horizon (expected {expected})")]
    NonStandardHorizon {
        frequency: Frequency,
        label: HorizonLabel,
        steps: usize,
        expected: usize,
    },
    #[error("unknown frequency `{0}`")]
    UnknownFrequency(String),
    #[error("unknown horizon label `{0}`")]
    UnknownHorizonLabel(String),
    #[error("interval bands must have the same length as the center")]
    IntervalShape,
    #[error("{scores} scores but {provenance} provenance entries")]
    ProvenanceMismatch { scores: usize, provenance: usize },
    #[error("conformity score at index {0} is negative or non-finite")]
    InvalidScore(usize),
}

/// Sampling frequency of a uniformly spaced series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Hourly,
    Daily,
    Weekly,
    Monthly,
}

impl Frequency {
    pub const ALL: [Frequency; 4] = [
        Frequency::Hourly,
        Frequency::Daily,
        Frequency::Weekly,
        Frequency::Monthly,
    ];

    /// Season length used when a model is configured "by frequency".
    pub fn default_season_length(self) -> usize {
        match self {
            Frequency::Hourly => 24,
            Frequency::Daily => 7,
            Frequency::Weekly => 4,
            Frequency::Monthly => 12,
        }
    }

    /// Single-letter code used on the adapter wire.
    pub fn code(self) -> &'static str {
        match self {
            Frequency::Hourly => "H",
            Frequency::Daily => "D",
            Frequency::Weekly => "W",
            Frequency::Monthly => "M",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Frequency::ALL.into_iter().find(|f| f.code() == code)
    }

    /// Horizon lengths for the short, medium and long settings.
    pub fn standard_horizons(self) -> [usize; 3] {
        match self {
            Frequency::Hourly => [24, 72, 168],
            Frequency::Daily => [7, 21, 35],
            Frequency::Weekly => [4, 8, 12],
            Frequency::Monthly => [3, 6, 9],
        }
    }

    /// Timestamp of the `index`-th observation of a series starting at `start`.
    pub fn timestamp_at(self, start: DateTime<Utc>, index: usize) -> Option<DateTime<Utc>> {
        let index = i64::try_from(index).ok()?;
        match self {
            Frequency::Hourly => start.checked_add_signed(Duration::try_hours(index)?),
            Frequency::Daily => start.checked_add_signed(Duration::try_days(index)?),
            Frequency::Weekly => start.checked_add_signed(Duration::try_weeks(index)?),
            Frequency::Monthly => start.checked_add_months(Months::new(u32::try_from(index).ok()?)),
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Frequency::Hourly => "hourly",
            Frequency::Daily => "daily",
            Frequency::Weekly => "weekly",
            Frequency::Monthly => "monthly",
        };
        f.write_str(name)
    }
}

impl FromStr for Frequency {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hourly" | "h" => Ok(Frequency::Hourly),
            "daily" | "d" => Ok(Frequency::Daily),
            "weekly" | "w" => Ok(Frequency::Weekly),
            "monthly" | "m" => Ok(Frequency::Monthly),
            _ => Err(DomainError::UnknownFrequency(s.to_string())),
        }
    }
}

/// One uniformly sampled series. Timestamps are implied by `start` and the frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSeries")]
pub struct TimeSeries {
    id: String,
    start: DateTime<Utc>,
    frequency: Frequency,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSeries {
    id: String,
    start: DateTime<Utc>,
    frequency: Frequency,
    values: Vec<f64>,
}

impl TryFrom<RawSeries> for TimeSeries {
    type Error = DomainError;

    fn try_from(raw: RawSeries) -> Result<Self, Self::Error> {
        TimeSeries::new(raw.id, raw.start, raw.frequency, raw.values)
    }
}

impl TimeSeries {
    pub fn new(
        id: impl Into<String>,
        start: DateTime<Utc>,
        frequency: Frequency,
        values: Vec<f64>,
    ) -> Result<Self, DomainError> {
        let id = id.into();
        if values.is_empty() {
            return Err(DomainError::EmptySeries(id));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite { series: id, index });
        }
        Ok(Self {
            id,
            start,
            frequency,
            values,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> Option<DateTime<Utc>> {
        self.frequency.timestamp_at(self.start, index)
    }

    /// Contiguous sub-series `[from, to)` with its start timestamp shifted accordingly.
    ///
    /// Panics if the range is empty or out of bounds.
    pub fn slice(&self, from: usize, to: usize, id: impl Into<String>) -> TimeSeries {
        assert!(from < to && to <= self.values.len(), "invalid slice {from}..{to}");
        let start = self.timestamp(from).unwrap_or(self.start);
        TimeSeries {
            id: id.into(),
            start,
            frequency: self.frequency,
            values: self.values[from..to].to_vec(),
        }
    }

    /// Same timestamps, every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<TimeSeries, DomainError> {
        TimeSeries::new(
            self.id.clone(),
            self.start,
            self.frequency,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HorizonLabel {
    S,
    M,
    L,
}

impl HorizonLabel {
    fn index(self) -> usize {
        match self {
            HorizonLabel::S => 0,
            HorizonLabel::M => 1,
            HorizonLabel::L => 2,
        }
    }
}

impl fmt::Display for HorizonLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HorizonLabel::S => "S",
            HorizonLabel::M => "M",
            HorizonLabel::L => "L",
        })
    }
}

impl FromStr for HorizonLabel {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S" | "s" => Ok(HorizonLabel::S),
            "M" | "m" => Ok(HorizonLabel::M),
            "L" | "l" => Ok(HorizonLabel::L),
            _ => Err(DomainError::UnknownHorizonLabel(s.to_string())),
        }
    }
}

/// A labelled forecasting horizon of `steps` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub label: HorizonLabel,
    pub steps: usize,
}

impl HorizonSpec {
    /// The standard horizon for a frequency and label.
    pub fn standard(frequency: Frequency, label: HorizonLabel) -> Self {
        Self {
            label,
            steps: frequency.standard_horizons()[label.index()],
        }
    }

    /// With `strict`, only the standard (frequency, label) → steps pairs are accepted.
    pub fn new(
        frequency: Frequency,
        label: HorizonLabel,
        steps: usize,
        strict: bool,
    ) -> Result<Self, DomainError> {
        if steps == 0 {
            return Err(DomainError::ZeroHorizon);
        }
        let expected = Self::standard(frequency, label).steps;
        if strict && steps != expected {
            return Err(DomainError::NonStandardHorizon {
                frequency,
                label,
                steps,
                expected,
            });
        }
        Ok(Self { label, steps })
    }
}

/// A point forecast of `len()` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    point: Vec<f64>,
}

impl Forecast {
    pub fn new(point: Vec<f64>) -> Result<Self, DomainError> {
        if let Some(k) = point.iter().position(|v| !v.is_finite()) {
            return Err(DomainError::NonFiniteForecast(k));
        }
        Ok(Self { point })
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn len(&self) -> usize {
        self.point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.point
    }
}

/// Where a conformity score came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOrigin {
    pub series_id: String,
    pub window_index: usize,
    pub offset: usize,
}

/// Absolute calibration residuals together with their origin.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConformityScores {
    scores: Vec<f64>,
    provenance: Vec<ScoreOrigin>,
}

impl ConformityScores {
    pub fn new(scores: Vec<f64>, provenance: Vec<ScoreOrigin>) -> Result<Self, DomainError> {
        if scores.len() != provenance.len() {
            return Err(DomainError::ProvenanceMismatch {
                scores: scores.len(),
                provenance: provenance.len(),
            });
        }
        if let Some(i) = scores.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(DomainError::InvalidScore(i));
        }
        Ok(Self { scores, provenance })
    }

    /// Scores without provenance (attributed to an anonymous single window).
    pub fn from_values(scores: Vec<f64>) -> Result<Self, DomainError> {
        let provenance = (0..scores.len())
            .map(|offset| ScoreOrigin {
                series_id: String::new(),
                window_index: 0,
                offset,
            })
            .collect();
        Self::new(scores, provenance)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn provenance(&self) -> &[ScoreOrigin] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn extend(&mut self, other: ConformityScores) {
        self.scores.extend(other.scores);
        self.provenance.extend(other.provenance);
    }
}

/// Calibrated half-width of the interval and the quantile level it was read at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyThreshold {
    pub q_hat: f64,
    pub level: f64,
    pub calibration_size: usize,
}

/// Symmetric band `[center - q_hat, center + q_hat]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    lower: Vec<f64>,
    upper: Vec<f64>,
    center: Forecast,
}

impl PredictionInterval {
    /// Arbitrary bands, e.g. from a non-conformal source. Requires matching lengths.
    pub fn from_bounds(
        lower: Vec<f64>,
        upper: Vec<f64>,
        center: Forecast,
    ) -> Result<Self, DomainError> {
        if lower.len() != center.len() || upper.len() != center.len() {
            return Err(DomainError::IntervalShape);
        }
        Ok(Self {
            lower,
            upper,
            center,
        })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> &Forecast {
        &self.center
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    pub fn contains(&self, k: usize, value: f64) -> bool {
        self.lower[k] <= value && value <= self.upper[k]
    }
}

/// Miscoverage rate α; target coverage is `1 - α`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MiscoverageRate(f64);

impl MiscoverageRate {
    pub fn new(alpha: f64) -> Result<Self, DomainError> {
        if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(DomainError::InvalidAlpha(alpha))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }

    pub fn target_coverage(self) -> f64 {
        1.0 - self.0
    }

    /// `ceil(n * (1 - α))` evaluated exactly on the decimal value of α.
    pub(crate) fn ceil_coverage_count(self, n: u64) -> u64 {
        Decimal::from_f64(self.0)
            .and_then(|d| d.complement())
            .map(|c| c.ceil_mul(n))
            .expect("alpha validated in (0, 1)")
    }
}

impl Default for MiscoverageRate {
    fn default() -> Self {
        Self(0.1)
    }
}

impl TryFrom<f64> for MiscoverageRate {
    type Error = DomainError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<MiscoverageRate> for f64 {
    fn from(rate: MiscoverageRate) -> Self {
        rate.0
    }
}
