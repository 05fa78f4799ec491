//! Built-in baseline forecasters and the interface they share with external adapters.

mod ensemble;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, Forecast, Frequency};

pub use ensemble::{
    classical_additive_seasonal, holt_winters_forecast, ses_forecast, stat_ensemble_light_forecast,
    theta_fit, EnsembleForecast, EnsembleMember, ThetaFit,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("context is empty")]
    EmptyContext,
    #[error("context of {context} points is shorter than the season length {season}")]
    ContextShorterThanSeason { context: usize, season: usize },
    #[error("context of {got} points is too short, need at least {needed}")]
    ContextTooShort { needed: usize, got: usize },
    #[error("horizon must be at least one step")]
    ZeroHorizon,
    #[error("invalid forecaster parameter: {0}")]
    InvalidParameter(String),
    #[error("forecaster returned {got} points for a horizon of {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    /// Failure reported by or while talking to an external adapter.
    #[error("remote forecaster: {0}")]
    Remote(String),
}

/// Everything a forecaster sees for one prediction.
#[derive(Debug, Clone, Copy)]
pub struct ForecastQuery<'a> {
    pub series_id: &'a str,
    pub context: &'a [f64],
    pub horizon: usize,
    pub frequency: Frequency,
}

/// A point forecaster. Implementations must be deterministic for the harness
/// to reproduce results, and safe to call from several threads.
pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;

    fn forecast(&self, query: &ForecastQuery<'_>) -> Result<Forecast, ForecastError>;
}

/// Repeats the last observed value.
pub fn naive_forecast(context: &[f64], horizon: usize) -> Result<Forecast, ForecastError> {
    let last = *context.last().ok_or(ForecastError::EmptyContext)?;
    Ok(Forecast::new(vec![last; horizon])?)
}

/// Repeats the last `season_length` observations cyclically.
pub fn seasonal_naive_forecast(
    context: &[f64],
    season_length: usize,
    horizon: usize,
) -> Result<Forecast, ForecastError> {
    if season_length == 0 {
        return Err(ForecastError::InvalidParameter("season length must be positive".into()));
    }
    if context.len() < season_length {
        return Err(ForecastError::ContextShorterThanSeason {
            context: context.len(),
            season: season_length,
        });
    }
    let last_season = &context[context.len() - season_length..];
    let point = (0..horizon).map(|k| last_season[k % season_length]).collect();
    Ok(Forecast::new(point)?)
}

/// How a model's season length is chosen for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeasonSpec {
    Fixed(usize),
    Rule(SeasonRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonRule {
    /// Season equals the forecasting horizon.
    Horizon,
    /// The frequency's default season (24/7/4/12).
    Frequency,
}

impl SeasonSpec {
    pub fn resolve(self, frequency: Frequency, horizon: usize) -> usize {
        match self {
            SeasonSpec::Fixed(m) => m,
            SeasonSpec::Rule(SeasonRule::Horizon) => horizon,
            SeasonSpec::Rule(SeasonRule::Frequency) => frequency.default_season_length(),
        }
    }
}

fn horizon_season() -> SeasonSpec {
    SeasonSpec::Rule(SeasonRule::Horizon)
}

fn frequency_season() -> SeasonSpec {
    SeasonSpec::Rule(SeasonRule::Frequency)
}

fn default_timeout_ms() -> u64 {
    120_000
}

fn default_connections() -> usize {
    1
}

/// Connection settings for an out-of-process forecaster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalSpec {
    /// `tcp://host:port`, or a command line to spawn.
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_connections")]
    pub connections: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecasterKind {
    Naive,
    SeasonalNaive {
        #[serde(default = "horizon_season")]
        season: SeasonSpec,
    },
    StatEnsembleLight {
        #[serde(default = "frequency_season")]
        season: SeasonSpec,
    },
    External(ExternalSpec),
}

/// A named, validated estimator description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHandle")]
pub struct ForecasterHandle {
    pub name: String,
    #[serde(flatten)]
    pub kind: ForecasterKind,
}

#[derive(Deserialize)]
struct RawHandle {
    name: String,
    #[serde(flatten)]
    kind: ForecasterKind,
}

impl TryFrom<RawHandle> for ForecasterHandle {
    type Error = ForecastError;

    fn try_from(raw: RawHandle) -> Result<Self, Self::Error> {
        ForecasterHandle::new(raw.name, raw.kind)
    }
}

impl ForecasterHandle {
    pub fn new(name: impl Into<String>, kind: ForecasterKind) -> Result<Self, ForecastError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(ForecastError::InvalidParameter("estimator name is empty".into()));
        }
        match &kind {
            ForecasterKind::SeasonalNaive { season: SeasonSpec::Fixed(0) }
            | ForecasterKind::StatEnsembleLight { season: SeasonSpec::Fixed(0) } => {
                return Err(ForecastError::InvalidParameter(format!(
                    "{name}: season length must be positive"
                )));
            }
            ForecasterKind::External(spec) => {
                if spec.endpoint.trim().is_empty() {
                    return Err(ForecastError::InvalidParameter(format!("{name}: empty endpoint")));
                }
                if spec.timeout_ms == 0 || spec.connections == 0 {
                    return Err(ForecastError::InvalidParameter(format!(
                        "{name}: timeout_ms and connections must be positive"
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { name, kind })
    }

    pub fn naive(name: impl Into<String>) -> Self {
        Self::new(name, ForecasterKind::Naive).expect("valid naive handle")
    }

    pub fn is_external(&self) -> bool {
        matches!(self.kind, ForecasterKind::External(_))
    }

    /// Builds a built-in forecaster for one (frequency, horizon) cell.
    /// Returns `None` for external kinds, which need a live adapter connection.
    pub fn builtin(&self, frequency: Frequency, horizon: usize) -> Option<Box<dyn Forecaster>> {
        let name = self.name.clone();
        match self.kind {
            ForecasterKind::Naive => Some(Box::new(Naive { name })),
            ForecasterKind::SeasonalNaive { season } => Some(Box::new(SeasonalNaive {
                name,
                season_length: season.resolve(frequency, horizon),
            })),
            ForecasterKind::StatEnsembleLight { season } => Some(Box::new(StatEnsembleLight {
                name,
                season_length: season.resolve(frequency, horizon),
            })),
            ForecasterKind::External(_) => None,
        }
    }
}

pub struct Naive {
    name: String,
}

impl Naive {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl Forecaster for Naive {
    fn name(&self) -> &str {
        &self.name
    }

    fn forecast(&self, query: &ForecastQuery<'_>) -> Result<Forecast, ForecastError> {
        naive_forecast(query.context, query.horizon)
    }
}

pub struct SeasonalNaive {
    name: String,
    season_length: usize,
}

impl SeasonalNaive {
    pub fn new(name: impl Into<String>, season_length: usize) -> Self {
        Self {
            name: name.into(),
            season_length,
        }
    }
}

impl Forecaster for SeasonalNaive {
    fn name(&self) -> &str {
        &self.name
    }

    fn forecast(&self, query: &ForecastQuery<'_>) -> Result<Forecast, ForecastError> {
        seasonal_naive_forecast(query.context, self.season_length, query.horizon)
    }
}

pub struct StatEnsembleLight {
    name: String,
    season_length: usize,
}

impl StatEnsembleLight {
    pub fn new(name: impl Into<String>, season_length: usize) -> Self {
        Self {
            name: name.into(),
            season_length,
        }
    }
}

impl Forecaster for StatEnsembleLight {
    fn name(&self) -> &str {
        &self.name
    }

    fn forecast(&self, query: &ForecastQuery<'_>) -> Result<Forecast, ForecastError> {
        let out = stat_ensemble_light_forecast(query.context, self.season_length, query.horizon)?;
        if out.degraded {
            log::warn!(
                "{}: series `{}` has {} points, fewer than two seasons of {}; \
                 Holt-Winters member dropped and no seasonal adjustment applied",
                self.name,
                query.series_id,
                query.context.len(),
                self.season_length
            );
        }
        Ok(out.forecast)
    }
}

impl fmt::Debug for dyn Forecaster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Forecaster({})", self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn naive_repeats_last_value() {
        let ctx = [5.0, 1.0, 7.0];
        assert_eq!(naive_forecast(&ctx, 3).unwrap().point(), &[7.0, 7.0, 7.0]);
        assert_eq!(naive_forecast(&[42.0], 1).unwrap().point(), &[42.0]);
        assert_eq!(naive_forecast(&[1.0, 2.0, 3.0], 5).unwrap().point(), &[3.0; 5]);
        assert_eq!(naive_forecast(&[], 2), Err(ForecastError::EmptyContext));
    }

    #[test]
    fn seasonal_naive_cycles_last_season() {
        let ctx = [9.0, 9.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            seasonal_naive_forecast(&ctx, 4, 6).unwrap().point(),
            &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0]
        );
        let ctx = [9.0, 8.0, 7.0, 6.0, 5.0, 4.0];
        assert_eq!(seasonal_naive_forecast(&ctx, 3, 3).unwrap().point(), &[6.0, 5.0, 4.0]);
        assert_eq!(
            seasonal_naive_forecast(&[1.0, 2.0], 3, 3),
            Err(ForecastError::ContextShorterThanSeason { context: 2, season: 3 })
        );
    }

    #[test]
    fn seasonal_naive_with_unit_season_is_naive() {
        let ctx = [3.0, -1.0, 8.5];
        assert_eq!(
            seasonal_naive_forecast(&ctx, 1, 4).unwrap(),
            naive_forecast(&ctx, 4).unwrap()
        );
    }

    #[test]
    fn season_spec_resolution() {
        assert_eq!(SeasonSpec::Fixed(5).resolve(Frequency::Daily, 21), 5);
        assert_eq!(horizon_season().resolve(Frequency::Daily, 21), 21);
        assert_eq!(frequency_season().resolve(Frequency::Hourly, 168), 24);
    }

    #[test]
    fn handles_deserialize_from_toml() {
        #[derive(Deserialize)]
        struct Doc {
            estimators: Vec<ForecasterHandle>,
        }
        let doc: Doc = toml::from_str(
            r#"
            [[estimators]]
            name = "Naive"
            kind = "naive"

            [[estimators]]
            name = "SeasonalNaive"
            kind = "seasonal_naive"

            [[estimators]]
            name = "Ens"
            kind = "stat_ensemble_light"
            season = 12

            [[estimators]]
            name = "Echo"
            kind = "external"
            endpoint = "tcp://127.0.0.1:9000"
            "#,
        )
        .unwrap();
        assert_eq!(doc.estimators[1].kind, ForecasterKind::SeasonalNaive { season: horizon_season() });
        assert_eq!(
            doc.estimators[2].kind,
            ForecasterKind::StatEnsembleLight { season: SeasonSpec::Fixed(12) }
        );
        match &doc.estimators[3].kind {
            ForecasterKind::External(spec) => {
                assert_eq!(spec.timeout_ms, 120_000);
                assert_eq!(spec.connections, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_handles_are_rejected() {
        assert!(ForecasterHandle::new("", ForecasterKind::Naive).is_err());
        assert!(ForecasterHandle::new(
            "x",
            ForecasterKind::SeasonalNaive { season: SeasonSpec::Fixed(0) }
        )
        .is_err());
        assert!(ForecasterHandle::new(
            "x",
            ForecasterKind::External(ExternalSpec {
                endpoint: "tcp://h:1".into(),
                timeout_ms: 0,
                connections: 1
            })
        )
        .is_err());
    }

    fn context_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e6f64..1e6, 1..60)
    }

    proptest! {
        #[test]
        fn builtins_are_deterministic(ctx in prop::collection::vec(-1e3f64..1e3, 30..80), h in 1usize..20) {
            let a = stat_ensemble_light_forecast(&ctx, 4, h).unwrap().forecast;
            let b = stat_ensemble_light_forecast(&ctx, 4, h).unwrap().forecast;
            let bits = |f: &Forecast| f.point().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&b));
        }

        #[test]
        fn naive_outputs_come_from_context(ctx in context_strategy(), h in 1usize..30, m in 1usize..8) {
            for v in naive_forecast(&ctx, h).unwrap().point() {
                prop_assert!(ctx.contains(v));
            }
            if ctx.len() >= m {
                for v in seasonal_naive_forecast(&ctx, m, h).unwrap().point() {
                    prop_assert!(ctx.contains(v));
                }
            }
        }

        #[test]
        fn naive_shift_equivariance(ctx in context_strategy(), h in 1usize..30, c in -1e3f64..1e3) {
            let shifted: Vec<f64> = ctx.iter().map(|v| v + c).collect();
            let base = naive_forecast(&ctx, h).unwrap();
            let moved = naive_forecast(&shifted, h).unwrap();
            // the output is a copied context value, so shifting the input shifts the output exactly
            for (b, m) in base.point().iter().zip(moved.point()) {
                prop_assert_eq!((b + c).to_bits(), m.to_bits());
            }
            let m = 1 + ctx.len() / 3;
            let base = seasonal_naive_forecast(&ctx, m, h).unwrap();
            let moved = seasonal_naive_forecast(&shifted, m, h).unwrap();
            for (b, s) in base.point().iter().zip(moved.point()) {
                prop_assert_eq!((b + c).to_bits(), s.to_bits());
            }
        }
    }
}
