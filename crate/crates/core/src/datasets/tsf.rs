//! Converter for the `.tsf` text format used by the Monash forecasting archive.
//!
//! Header lines start with `@`; after `@data` every line holds the declared
//! attributes followed by comma-separated values, all separated by `:`.

use std::io::BufRead;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};

use super::DatasetError;
use crate::domain::{Frequency, TimeSeries};

fn parse_frequency(word: &str) -> Option<Frequency> {
    match word.trim().to_ascii_lowercase().as_str() {
        "hourly" => Some(Frequency::Hourly),
        "daily" => Some(Frequency::Daily),
        "weekly" => Some(Frequency::Weekly),
        "monthly" => Some(Frequency::Monthly),
        _ => None,
    }
}

fn parse_start(raw: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(raw.trim(), "%Y-%m-%d %H-%M-%S")
        .ok()
        .map(|n| Utc.from_utc_datetime(&n))
}

/// Reads a `.tsf` file. `frequency` overrides the file's `@frequency` header.
/// Series without a `start_timestamp` attribute start at 2000-01-01.
pub fn read_tsf<R: BufRead>(input: R, frequency: Option<Frequency>) -> Result<Vec<TimeSeries>, DatasetError> {
    let mut attributes: Vec<String> = Vec::new();
    let mut file_frequency = None;
    let mut in_data = false;
    let mut out = Vec::new();
    let fallback_start = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();

    for (i, line) in input.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        let line = line.trim();
        let bad = |message: String| DatasetError::ParseError { line: line_no, message };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("@attribute") {
                let name = line
                    .split_whitespace()
                    .nth(1)
                    .ok_or_else(|| bad("attribute without a name".into()))?;
                attributes.push(name.to_string());
            } else if lower.starts_with("@frequency") {
                let word = line.split_whitespace().nth(1).unwrap_or_default();
                file_frequency = parse_frequency(word);
            } else if lower.starts_with("@data") {
                in_data = true;
            }
            continue;
        }

        let fields: Vec<&str> = line.splitn(attributes.len() + 1, ':').collect();
        if fields.len() != attributes.len() + 1 {
            return Err(bad(format!("expected {} attributes before the values", attributes.len())));
        }
        let freq = frequency
            .or(file_frequency)
            .ok_or_else(|| bad("no usable @frequency header; pass a frequency".into()))?;
        let mut id = format!("T{}", out.len() + 1);
        let mut start = fallback_start;
        for (name, value) in attributes.iter().zip(&fields) {
            match name.as_str() {
                "series_name" => id = value.trim().to_string(),
                "start_timestamp" => {
                    start = parse_start(value).ok_or_else(|| bad(format!("bad start_timestamp `{value}`")))?
                }
                _ => {}
            }
        }
        let values = fields[attributes.len()]
            .split(',')
            .enumerate()
            .map(|(index, raw)| match raw.trim() {
                "?" | "" => Err(DatasetError::MissingValue {
                    series_id: id.clone(),
                    index,
                }),
                v => v.parse::<f64>().map_err(|e| bad(format!("value `{v}`: {e}"))),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        out.push(TimeSeries::new(id, start, freq, values)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# comment\n@relation demo\n@attribute series_name string\n@attribute start_timestamp date\n@frequency monthly\n@missing false\n@equallength false\n@data\nT1:1990-01-01 00-00-00:1,2,3.5\nT2:1991-06-01 00-00-00:4,5\n";

    #[test]
    fn reads_monthly_sample() {
        let s = read_tsf(SAMPLE.as_bytes(), None).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].id(), "T1");
        assert_eq!(s[0].values(), &[1.0, 2.0, 3.5]);
        assert_eq!(s[1].frequency(), Frequency::Monthly);
        assert_eq!(s[1].start(), Utc.with_ymd_and_hms(1991, 6, 1, 0, 0, 0).unwrap());
    }

    #[test]
    fn missing_values_are_rejected() {
        let text = SAMPLE.replace("4,5", "4,?");
        assert!(matches!(
            read_tsf(text.as_bytes(), None),
            Err(DatasetError::MissingValue { index: 1, .. })
        ));
    }

    #[test]
    fn frequency_can_be_supplied() {
        let text = "@attribute series_name string\n@frequency 4_seconds\n@data\na:1,2\n";
        assert!(read_tsf(text.as_bytes(), None).is_err());
        let s = read_tsf(text.as_bytes(), Some(Frequency::Daily)).unwrap();
        assert_eq!(s[0].frequency(), Frequency::Daily);
    }
}
