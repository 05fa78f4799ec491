//! Results tables and bubble charts.
//!
//! Rendering is deterministic: re-emitting the same rows produces
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{ExperimentRun, ResultRow};
use super::HarnessError;
use crate::domain::{HorizonLabel, MiscoverageRate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [
        ReportFormat::Csv,
        ReportFormat::Json,
        ReportFormat::Markdown,
        ReportFormat::Svg,
    ];
}

/// The structured results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub alpha: MiscoverageRate,
    pub rows: Vec<ResultRow>,
}

impl ResultsFile {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

fn write(path: PathBuf, contents: &[u8], written: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    fs::write(&path, contents)?;
    written.push(path);
    Ok(())
}

/// Writes the requested formats into `output_dir` and returns the file paths.
pub fn emit_report(
    rows: &[ResultRow],
    alpha: MiscoverageRate,
    output_dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no result rows to report".into()));
    }
    fs::create_dir_all(output_dir)?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Csv => write(output_dir.join("results.csv"), results_csv(rows)?.as_bytes(), &mut written)?,
            ReportFormat::Json => {
                let file = ResultsFile {
                    alpha,
                    rows: rows.to_vec(),
                };
                let mut text = serde_json::to_string_pretty(&file).expect("rows serialize");
                text.push('\n');
                write(output_dir.join("results.json"), text.as_bytes(), &mut written)?
            }
            ReportFormat::Markdown => write(output_dir.join("results.md"), markdown_table(rows).as_bytes(), &mut written)?,
            ReportFormat::Svg => {
                for (dataset, label) in cells(rows) {
                    let subset: Vec<&ResultRow> = rows
                        .iter()
                        .filter(|r| r.dataset == dataset && r.horizon_label == label)
                        .collect();
                    let chart = BubbleChart::layout(&format!("{dataset} {label}"), &subset, alpha);
                    let name = format!("bubble_{}_{label}.svg", file_stem(&dataset));
                    write(output_dir.join(name), chart.to_svg().as_bytes(), &mut written)?;
                }
            }
        }
    }
    Ok(written)
}

/// `failures.log` and `inference_time.csv` next to the results.
pub fn emit_run_logs(run: &ExperimentRun, output_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(output_dir)?;
    let mut written = Vec::new();
    let mut log = String::new();
    for f in &run.failures {
        let _ = writeln!(log, "{}\t{}\t{}\t{}\t{}", f.dataset, f.horizon_label, f.estimator, f.unit_id, f.error);
    }
    write(output_dir.join("failures.log"), log.as_bytes(), &mut written)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Io(std::io::Error::other(e));
    wtr.write_record([
        "dataset",
        "horizon_label",
        "estimator",
        "units",
        "wall_ms",
        "adapter_requests",
        "adapter_failures",
        "adapter_mean_ms",
        "adapter_max_ms",
        "adapter_reported_ms",
    ])
    .map_err(csv_err)?;
    for t in &run.timings {
        let mut rec = vec![
            t.dataset.clone(),
            t.horizon_label.to_string(),
            t.estimator.clone(),
            t.units.to_string(),
            format!("{:.3}", t.wall_ms),
        ];
        match &t.adapter {
            Some(a) => rec.extend([
                a.requests.to_string(),
                a.failures.to_string(),
                format!("{:.3}", a.mean_ms()),
                format!("{:.3}", a.max_ms),
                a.adapter_total_ms.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| HarnessError::Io(std::io::Error::other(e.to_string())))?;
    write(output_dir.join("inference_time.csv"), &bytes, &mut written)?;
    Ok(written)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Distinct (dataset, horizon label) pairs in first-appearance order.
fn cells(rows: &[ResultRow]) -> Vec<(String, HorizonLabel)> {
    let mut out: Vec<(String, HorizonLabel)> = Vec::new();
    for r in rows {
        if !out.iter().any(|(d, l)| d == &r.dataset && *l == r.horizon_label) {
            out.push((r.dataset.clone(), r.horizon_label));
        }
    }
    out
}

fn distinct<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String, HarnessError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(|e| HarnessError::Io(std::io::Error::other(e)))?;
    }
    let bytes = wtr.into_inner().map_err(|e| HarnessError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn fmt_iw(v: f64) -> String {
    let a = v.abs();
    if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 100.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

/// Horizon × model table with a MASE / MCR / IW / MSIW / failures group per dataset.
/// MCR is a percentage; a missing value is shown as `x`.
pub fn markdown_table(rows: &[ResultRow]) -> String {
    let datasets = distinct(rows.iter().map(|r| r.dataset.clone()));
    let estimators = distinct(rows.iter().map(|r| r.estimator.clone()));
    let mut labels = distinct(rows.iter().map(|r| r.horizon_label));
    labels.sort();
    let modes = distinct(rows.iter().map(|r| r.threshold_mode));

    let mut out = String::new();
    for mode in modes {
        let _ = writeln!(out, "Threshold mode: {}\n", format!("{mode:?}").to_lowercase());
        let mut header = String::from("| Horizon | Model |");
        let mut rule = String::from("|---|---|");
        for d in &datasets {
            for col in ["MASE", "MCR", "IW", "MSIW", "Fail"] {
                let _ = write!(header, " {d} {col} |");
                rule.push_str("---:|");
            }
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for label in &labels {
            for est in &estimators {
                let mut line = format!("| {label} | {est} |");
                let mut any = false;
                for d in &datasets {
                    let r = rows.iter().find(|r| {
                        &r.dataset == d && r.horizon_label == *label && &r.estimator == est && r.threshold_mode == mode
                    });
                    any |= r.is_some();
                    let cells = match r {
                        Some(r) => [
                            r.mase.map_or("x".into(), |v| format!("{v:.3}")),
                            r.mcr.map_or("x".into(), |v| format!("{:.1}", v * 100.0)),
                            r.iw.map_or("x".into(), fmt_iw),
                            r.msiw.map_or("x".into(), |v| format!("{v:.3}")),
                            r.failures.to_string(),
                        ],
                        None => ["x", "x", "x", "x", ""].map(String::from),
                    };
                    for c in cells {
                        let _ = write!(line, " {c} |");
                    }
                }
                if any {
                    let _ = writeln!(out, "{line}");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// One estimator in a bubble chart, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Bubble {
    pub label: String,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

/// Layout of a coverage/width/accuracy bubble chart: x = MCR, y = MSIW,
/// radius proportional to MASE, dashed vertical line at the target coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleChart {
    pub title: String,
    pub width: f64,
    pub height: f64,
    pub target_coverage: f64,
    /// Pixel x of the target coverage line.
    pub target_x: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub bubbles: Vec<Bubble>,
    /// Estimators without metrics, listed under the chart.
    pub missing: Vec<String>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const MAX_RADIUS: f64 = 28.0;

impl BubbleChart {
    pub fn layout(title: &str, rows: &[&ResultRow], alpha: MiscoverageRate) -> Self {
        let target = alpha.target_coverage();
        let plotted: Vec<(&ResultRow, f64, f64, f64)> = rows
            .iter()
            .filter_map(|r| Some((*r, r.mcr?, r.msiw?, r.mase?)))
            .collect();
        let missing = rows
            .iter()
            .filter(|r| r.mcr.is_none() || r.msiw.is_none() || r.mase.is_none())
            .map(|r| r.estimator.clone())
            .collect();

        let xs = plotted.iter().map(|p| p.1).chain([target]);
        let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let pad = ((x1 - x0) * 0.1).max(0.02);
        x0 = (x0 - pad).max(0.0);
        x1 = (x1 + pad).min(1.0);
        let y_max = plotted.iter().map(|p| p.2).fold(1.0_f64, f64::max) * 1.15;
        let max_mase = plotted.iter().map(|p| p.3).fold(0.0_f64, f64::max);

        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
        let py = |y: f64| TOP + plot_h - y / y_max * plot_h;
        let bubbles = plotted
            .iter()
            .map(|(r, mcr, msiw, mase)| Bubble {
                label: r.estimator.clone(),
                cx: px(*mcr),
                cy: py(*msiw),
                r: if max_mase > 0.0 { MAX_RADIUS * mase / max_mase } else { 0.0 },
            })
            .collect();
        Self {
            title: title.to_string(),
            width: WIDTH,
            height: HEIGHT,
            target_coverage: target,
            target_x: px(target),
            x_range: (x0, x1),
            y_range: (0.0, y_max),
            bubbles,
            missing,
        }
    }

    pub fn to_svg(&self) -> String {
        let palette = [
            "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
            "#17becf",
        ];
        let plot_w = self.width - LEFT - RIGHT;
        let plot_h = self.height - TOP - BOTTOM;
        let (x0, x1) = self.x_range;
        let (_, y1) = self.y_range;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" font-family="sans-serif" font-size="12">"#,
            self.width, self.height, self.width, self.height
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + plot_w / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#444"/>"##
        );
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let x = LEFT + f * plot_w;
            let y = TOP + plot_h - f * plot_h;
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{:.1}</text>"#,
                TOP + plot_h + 18.0,
                (x0 + f * (x1 - x0)) * 100.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"#,
                LEFT - 6.0,
                y + 4.0,
                f * y1
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">MCR (%)</text>"#,
            LEFT + plot_w / 2.0,
            self.height - 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">MSIW</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0
        );
        let _ = writeln!(
            s,
            r##"<line class="target" x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333" stroke-dasharray="6 4"/>"##,
            TOP + plot_h,
            x = self.target_x
        );
        for (i, b) in self.bubbles.iter().enumerate() {
            let color = palette[i % palette.len()];
            let _ = writeln!(
                s,
                r#"<circle class="bubble" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{color}" fill-opacity="0.45" stroke="{color}"><title>{}</title></circle>"#,
                b.cx,
                b.cy,
                b.r,
                escape(&b.label)
            );
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let lx = self.width - RIGHT + 16.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
                ly - 9.0,
                lx + 14.0,
                escape(&b.label)
            );
        }
        if !self.missing.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{LEFT:.2}" y="{:.2}" font-size="10">no metrics: {}</text>"#,
                self.height - 4.0,
                escape(&self.missing.join(", "))
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

pub(crate) fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::ThresholdMode;

    fn row(est: &str, label: HorizonLabel, mase: f64, mcr: f64, msiw: f64) -> ResultRow {
        ResultRow {
            dataset: "ercot-2232".into(),
            horizon_label: label,
            horizon: 24,
            estimator: est.into(),
            threshold_mode: ThresholdMode::Local,
            mase: Some(mase),
            mcr: Some(mcr),
            iw: Some(15160.4),
            msiw: Some(msiw),
            n_units: 20,
            failures: 0,
        }
    }

    fn alpha() -> MiscoverageRate {
        MiscoverageRate::new(0.1).unwrap()
    }

    #[test]
    fn one_row_one_bubble() {
        let r = row("Naive", HorizonLabel::S, 1.0, 0.879, 1.0);
        let chart = BubbleChart::layout("t", &[&r], alpha());
        assert_eq!(chart.bubbles.len(), 1);
        assert_eq!(chart.target_coverage, 0.9);
        let svg = chart.to_svg();
        assert_eq!(svg.matches("class=\"bubble\"").count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
    }

    #[test]
    fn covering_model_sits_right_of_the_line() {
        let good = row("ChronosBolt", HorizonLabel::S, 0.362, 0.913, 0.312);
        let naive = row("Naive", HorizonLabel::S, 1.0, 0.879, 1.0);
        let chart = BubbleChart::layout("t", &[&naive, &good], alpha());
        assert!(chart.bubbles[1].cx > chart.target_x);
        assert!(chart.bubbles[0].cx < chart.target_x);
        assert!(chart.bubbles[1].cy > chart.bubbles[0].cy, "lower MSIW is drawn lower");
        let ratio = chart.bubbles[1].r / chart.bubbles[0].r;
        assert!((ratio - 0.362).abs() < 1e-12);
    }

    #[test]
    fn rows_without_metrics_are_listed_not_drawn() {
        let mut r = row("Broken", HorizonLabel::S, 1.0, 0.9, 1.0);
        r.mase = None;
        let chart = BubbleChart::layout("t", &[&r], alpha());
        assert!(chart.bubbles.is_empty());
        assert_eq!(chart.missing, vec!["Broken".to_string()]);
    }

    #[test]
    fn markdown_layout() {
        let rows = vec![
            row("Naive", HorizonLabel::M, 1.0, 0.85, 1.0),
            row("Naive", HorizonLabel::S, 1.0, 0.879, 1.0),
            row("Seasonal", HorizonLabel::S, 1.338, 0.792, 0.882),
        ];
        let md = markdown_table(&rows);
        let lines: Vec<&str> = md.lines().filter(|l| l.starts_with("| ")).collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("| S | Naive | 1.000 | 87.9 | 15160 | 1.000 | 0 |"), "{}", lines[1]);
        assert!(lines[2].contains("| 79.2 |"));
        assert!(lines[3].starts_with("| M | Naive |"));
    }

    #[test]
    fn emission_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            row("Naive", HorizonLabel::S, 1.0, 0.879, 1.0),
            row("B", HorizonLabel::L, 0.5, 0.95, 0.4),
        ];
        let first = emit_report(&rows, alpha(), dir.path(), &ReportFormat::ALL).unwrap();
        let snapshot: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
        let second = emit_report(&rows, alpha(), dir.path(), &ReportFormat::ALL).unwrap();
        assert_eq!(first, second);
        for (p, before) in second.iter().zip(snapshot) {
            assert_eq!(fs::read(p).unwrap(), before);
        }
        assert_eq!(first.len(), 5);
        let back = ResultsFile::load(&dir.path().join("results.json")).unwrap();
        assert_eq!(back.rows, rows);
        assert!(emit_report(&[], alpha(), dir.path(), &ReportFormat::ALL).is_err());
    }

    #[test]
    fn csv_leaves_missing_metrics_empty() {
        let mut r = row("X", HorizonLabel::S, 1.0, 0.9, 1.0);
        r.msiw = None;
        let text = results_csv(&[r]).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "dataset,horizon_label,horizon,estimator,threshold_mode,mase,mcr,iw,msiw,n_units,failures"
        );
        assert!(lines.next().unwrap().ends_with(",,20,0"));
    }
}
