//! Dataset ingestion, window sampling and synthetic series.
//!
//! The canonical on-disk format is a long CSV with header
//! `series_id,timestamp,value` (RFC 3339 timestamps). Source-specific formats
//! are converted to it by separate converters (see [`tsf`]).

mod fetch;
pub mod tsf;

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, Frequency, HorizonSpec, TimeSeries};

pub use fetch::{fetch_dataset, Downloader, HttpDownloader, Manifest, ManifestEntry};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("parse error on line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("series `{series_id}` is not uniformly spaced at index {index}")]
    NonUniformSpacing { series_id: String, index: usize },
    #[error("series `{series_id}` has a missing value at index {index}")]
    MissingValue { series_id: String, index: usize },
    #[error("window scenario does not fit: {0}")]
    ScenarioDoesNotFit(String),
    #[error("download failed: {0}")]
    DownloadFailed(String),
    #[error("hash mismatch for {path}: expected {expected}, got {actual}")]
    HashMismatch {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("dataset `{name}` has {got} but {expected} was expected")]
    ShapeMismatch {
        name: String,
        expected: String,
        got: String,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Expected shape of a benchmark dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub frequency: Frequency,
    pub expected_series: usize,
    pub expected_length: usize,
}

impl DatasetSpec {
    /// The four benchmark datasets: ERCOT, NN5 Daily, NN5 Weekly and M3 Monthly.
    pub fn known(name: &str) -> Option<Self> {
        let (frequency, expected_series, expected_length) = match name {
            "ercot" => (Frequency::Hourly, 1, 17520),
            "nn5_daily" => (Frequency::Daily, 100, 791),
            "nn5_weekly" => (Frequency::Weekly, 100, 105),
            "m3_monthly" => (Frequency::Monthly, 1428, 66),
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            frequency,
            expected_series,
            expected_length,
        })
    }

    /// Checks series count and that every series has the expected length.
    pub fn check(&self, series: &[TimeSeries]) -> Result<(), DatasetError> {
        let mismatch = |expected: String, got: String| DatasetError::ShapeMismatch {
            name: self.name.clone(),
            expected,
            got,
        };
        if series.len() != self.expected_series {
            return Err(mismatch(
                format!("{} series", self.expected_series),
                format!("{} series", series.len()),
            ));
        }
        if let Some(s) = series.iter().find(|s| s.len() != self.expected_length) {
            return Err(mismatch(
                format!("length {}", self.expected_length),
                format!("length {} for `{}`", s.len(), s.id()),
            ));
        }
        Ok(())
    }
}

/// Reads a long CSV, one [`TimeSeries`] per id in order of first appearance.
pub fn load_long_csv(path: &Path, frequency: Frequency) -> Result<Vec<TimeSeries>, DatasetError> {
    read_long_csv(File::open(path)?, frequency)
}

type Row = (DateTime<Utc>, Option<f64>);

pub fn read_long_csv<R: Read>(reader: R, frequency: Frequency) -> Result<Vec<TimeSeries>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DatasetError::ParseError {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["series_id", "timestamp", "value"] {
        return Err(DatasetError::ParseError {
            line: 1,
            message: format!("expected header series_id,timestamp,value, got {headers:?}"),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DatasetError::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| DatasetError::ParseError { line, message };
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(bad("empty series_id".into()));
        }
        let ts = DateTime::parse_from_rfc3339(record[1].trim())
            .map_err(|e| bad(format!("timestamp `{}`: {e}", &record[1])))?
            .with_timezone(&Utc);
        let raw = record[2].trim();
        let value = if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw == "?" {
            None
        } else {
            let v: f64 = raw.parse().map_err(|e| bad(format!("value `{raw}`: {e}")))?;
            if v.is_finite() {
                Some(v)
            } else {
                None
            }
        };
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((ts, value));
    }

    order
        .into_iter()
        .map(|id| {
            let mut points = rows.remove(&id).unwrap_or_default();
            points.sort_by_key(|(ts, _)| *ts);
            let start = points[0].0;
            let mut values = Vec::with_capacity(points.len());
            for (index, (ts, value)) in points.into_iter().enumerate() {
                if frequency.timestamp_at(start, index) != Some(ts) {
                    return Err(DatasetError::NonUniformSpacing {
                        series_id: id.clone(),
                        index,
                    });
                }
                values.push(value.ok_or_else(|| DatasetError::MissingValue {
                    series_id: id.clone(),
                    index,
                })?);
            }
            Ok(TimeSeries::new(id, start, frequency, values)?)
        })
        .collect()
}

pub fn write_long_csv(series: &[TimeSeries], path: &Path) -> Result<(), DatasetError> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    write_long_csv_to(series, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_long_csv_to<W: Write>(series: &[TimeSeries], out: W) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| DatasetError::Io(std::io::Error::other(e));
    wtr.write_record(["series_id", "timestamp", "value"]).map_err(csv_err)?;
    for s in series {
        for (i, v) in s.values().iter().enumerate() {
            let ts = s
                .timestamp(i)
                .ok_or_else(|| DatasetError::ConfigError(format!("timestamp overflow in `{}`", s.id())))?;
            wtr.write_record([
                s.id(),
                &ts.to_rfc3339_opts(SecondsFormat::Secs, true),
                &format!("{v}"),
            ])
            .map_err(csv_err)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Start offsets evenly spaced over the admissible range.
    #[default]
    Even,
    /// Uniformly random start offsets drawn from the scenario seed.
    Random,
}

fn default_windows() -> usize {
    20
}

/// How evaluation windows are cut from a long series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScenario {
    pub window_points: usize,
    pub horizon: HorizonSpec,
    #[serde(default = "default_windows")]
    pub n_windows: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub placement: Placement,
    /// Start offset used when `n_windows == 1`.
    #[serde(default)]
    pub start: usize,
}

/// One sampled window: the available history and the holdout right after it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWindow {
    pub index: usize,
    pub start: usize,
    pub window: TimeSeries,
    pub holdout: Vec<f64>,
}

/// Cuts `n_windows` (history, holdout) pairs from a series.
pub fn sample_windows(
    series: &TimeSeries,
    scenario: &WindowScenario,
) -> Result<Vec<SampledWindow>, DatasetError> {
    let span = scenario.window_points + scenario.horizon.steps;
    let n = series.len();
    if scenario.window_points == 0 || scenario.n_windows == 0 {
        return Err(DatasetError::ScenarioDoesNotFit(
            "window_points and n_windows must be positive".into(),
        ));
    }
    if span > n {
        return Err(DatasetError::ScenarioDoesNotFit(format!(
            "window of {span} points does not fit a series of {n}"
        )));
    }
    let max_start = n - span;
    let starts: Vec<usize> = if scenario.n_windows == 1 {
        if scenario.start > max_start {
            return Err(DatasetError::ScenarioDoesNotFit(format!(
                "start {} exceeds the last admissible start {max_start}",
                scenario.start
            )));
        }
        vec![scenario.start]
    } else {
        match scenario.placement {
            Placement::Even => {
                let steps = scenario.n_windows - 1;
                (0..scenario.n_windows).map(|i| i * max_start / steps).collect()
            }
            Placement::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
                let mut s: Vec<usize> = (0..scenario.n_windows)
                    .map(|_| rng.random_range(0..=max_start))
                    .collect();
                s.sort_unstable();
                s
            }
        }
    };
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(index, start)| {
            let end = start + scenario.window_points;
            SampledWindow {
                index,
                start,
                window: series.slice(start, end, format!("{}#w{index:02}", series.id())),
                holdout: series.values()[end..end + scenario.horizon.steps].to_vec(),
            }
        })
        .collect())
}

fn synth_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap()
}

/// I.i.d. Gaussian noise around a constant mean (hourly, starting 2018-01-01).
pub fn synth_iid(n: usize, mean: f64, sigma: f64, seed: u64) -> TimeSeries {
    assert!(n >= 1 && sigma >= 0.0, "need n >= 1 and sigma >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let values = (0..n).map(|_| mean + sigma * noise.sample(&mut rng)).collect();
    TimeSeries::new(format!("iid-{seed}"), synth_start(), Frequency::Hourly, values)
        .expect("finite synthetic values")
}

/// A sine season of period `m` plus Gaussian noise (hourly, starting 2018-01-01).
pub fn synth_seasonal(n: usize, m: usize, amplitude: f64, noise: f64, seed: u64) -> TimeSeries {
    assert!(n >= 1 && m >= 1 && noise >= 0.0, "need n, m >= 1 and noise >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let values = (0..n)
        .map(|t| {
            let phase = (t % m) as f64 / m as f64;
            amplitude * (std::f64::consts::TAU * phase).sin() + noise * unit.sample(&mut rng)
        })
        .collect();
    TimeSeries::new(format!("seasonal-{seed}"), synth_start(), Frequency::Hourly, values)
        .expect("finite synthetic values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::HorizonLabel;
    use proptest::prelude::*;

    fn parse(text: &str, f: Frequency) -> Result<Vec<TimeSeries>, DatasetError> {
        read_long_csv(text.as_bytes(), f)
    }

    #[test]
    fn minimal_file() {
        let s = parse(
            "series_id,timestamp,value\na,2018-01-01T00:00:00Z,1.5\na,2018-01-01T01:00:00Z,2\n",
            Frequency::Hourly,
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].values(), &[1.5, 2.0]);
    }

    #[test]
    fn rows_are_sorted_within_a_series() {
        let s = parse(
            "series_id,timestamp,value\nb,2018-01-03T00:00:00Z,3\na,2018-01-01T00:00:00Z,9\nb,2018-01-01T00:00:00Z,1\nb,2018-01-02T00:00:00Z,2\n",
            Frequency::Daily,
        )
        .unwrap();
        assert_eq!(s[0].id(), "b");
        assert_eq!(s[0].values(), &[1.0, 2.0, 3.0]);
        assert_eq!(s[1].values(), &[9.0]);
    }

    #[test]
    fn gaps_are_rejected() {
        let err = parse(
            "series_id,timestamp,value\na,2018-01-01T00:00:00Z,1\na,2018-01-01T02:00:00Z,2\n",
            Frequency::Hourly,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::NonUniformSpacing { index: 1, .. }));
    }

    #[test]
    fn missing_values_are_rejected() {
        let err = parse(
            "series_id,timestamp,value\na,2018-01-01T00:00:00Z,1\na,2018-01-02T00:00:00Z,NaN\n",
            Frequency::Daily,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::MissingValue { index: 1, .. }));
        let err = parse(
            "series_id,timestamp,value\na,2018-01-01T00:00:00Z,\n",
            Frequency::Daily,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::MissingValue { index: 0, .. }));
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let err = parse(
            "series_id,timestamp,value\na,2018-01-01T00:00:00Z,1\na,yesterday,2\n",
            Frequency::Daily,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::ParseError { line: 3, .. }), "{err}");
        assert!(matches!(
            parse("id,ts,v\n", Frequency::Daily),
            Err(DatasetError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn monthly_spacing_follows_the_calendar() {
        let s = parse(
            "series_id,timestamp,value\nm,2019-01-31T00:00:00Z,1\nm,2019-02-28T00:00:00Z,2\n",
            Frequency::Monthly,
        )
        .unwrap();
        assert_eq!(s[0].len(), 2);
    }

    #[test]
    fn known_specs() {
        let nn5 = DatasetSpec::known("nn5_daily").unwrap();
        assert_eq!((nn5.expected_series, nn5.expected_length), (100, 791));
        assert_eq!(DatasetSpec::known("ercot").unwrap().expected_length, 17520);
        assert!(DatasetSpec::known("m4").is_none());
        let short = vec![synth_iid(790, 0.0, 1.0, 1); 100];
        assert!(matches!(nn5.check(&short), Err(DatasetError::ShapeMismatch { .. })));
    }

    fn scenario(window_points: usize, steps: usize, n_windows: usize) -> WindowScenario {
        WindowScenario {
            window_points,
            horizon: HorizonSpec::new(Frequency::Hourly, HorizonLabel::S, steps, false).unwrap(),
            n_windows,
            seed: 7,
            placement: Placement::Even,
            start: 0,
        }
    }

    #[test]
    fn twenty_windows_from_two_years() {
        let s = synth_iid(17520, 0.0, 1.0, 3);
        let w = sample_windows(&s, &scenario(8760, 24, 20)).unwrap();
        assert_eq!(w.len(), 20);
        for win in &w {
            assert_eq!(win.window.len() + win.holdout.len(), 8784);
            assert_eq!(win.holdout, s.values()[win.start + 8760..win.start + 8784]);
        }
        assert_eq!(w.last().unwrap().start, 17520 - 8784);
        assert_eq!(w[0].start, 0);
    }

    #[test]
    fn long_horizon_holdout() {
        let s = synth_iid(17520, 0.0, 1.0, 3);
        let w = sample_windows(&s, &scenario(2232, 168, 20)).unwrap();
        assert!(w.iter().all(|x| x.holdout.len() == 168 && x.window.len() == 2232));
    }

    #[test]
    fn single_window_uses_configured_start() {
        let s = synth_iid(100, 0.0, 1.0, 3);
        let mut sc = scenario(50, 10, 1);
        sc.start = 17;
        let w = sample_windows(&s, &sc).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].start, 17);
        sc.start = 41;
        assert!(matches!(sample_windows(&s, &sc), Err(DatasetError::ScenarioDoesNotFit(_))));
        assert!(matches!(
            sample_windows(&s, &scenario(95, 10, 3)),
            Err(DatasetError::ScenarioDoesNotFit(_))
        ));
    }

    #[test]
    fn random_placement_is_seeded() {
        let s = synth_iid(5000, 0.0, 1.0, 3);
        let mut sc = scenario(1000, 24, 20);
        sc.placement = Placement::Random;
        let a: Vec<usize> = sample_windows(&s, &sc).unwrap().iter().map(|w| w.start).collect();
        let b: Vec<usize> = sample_windows(&s, &sc).unwrap().iter().map(|w| w.start).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&x| x + 1024 <= 5000));
    }

    #[test]
    fn synthetic_generators() {
        let flat = synth_iid(50, 3.25, 0.0, 1);
        assert!(flat.values().iter().all(|&v| v == 3.25));
        assert_eq!(synth_iid(50, 0.0, 1.0, 9), synth_iid(50, 0.0, 1.0, 9));
        assert_ne!(synth_iid(50, 0.0, 1.0, 9), synth_iid(50, 0.0, 1.0, 10));
        let wave = synth_seasonal(40, 4, 2.0, 0.0, 5);
        for t in 4..40 {
            assert_eq!(wave.values()[t], wave.values()[t - 4]);
        }
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_identity(
            raw in prop::collection::vec(prop::collection::vec(-1e12f64..1e12, 1..30), 1..5),
            freq in prop::sample::select(Frequency::ALL.to_vec()),
        ) {
            let series: Vec<TimeSeries> = raw
                .into_iter()
                .enumerate()
                .map(|(i, v)| TimeSeries::new(format!("s{i}"), synth_start(), freq, v).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_long_csv_to(&series, &mut buf).unwrap();
            let back = read_long_csv(buf.as_slice(), freq).unwrap();
            prop_assert_eq!(back, series);
        }

        #[test]
        fn windows_stay_inside_the_series(len in 50usize..2000, wp in 1usize..500, h in 1usize..50, n in 1usize..25, seed in any::<u64>(), random in any::<bool>()) {
            prop_assume!(wp + h <= len);
            let s = synth_iid(len, 0.0, 1.0, 1);
            let mut sc = scenario(wp, h, n);
            sc.seed = seed;
            sc.placement = if random { Placement::Random } else { Placement::Even };
            let w = sample_windows(&s, &sc).unwrap();
            prop_assert_eq!(w.len(), n);
            for x in &w {
                prop_assert!(x.start + wp + h <= len);
            }
            prop_assert_eq!(w.clone(), sample_windows(&s, &sc).unwrap());
        }
    }
}
