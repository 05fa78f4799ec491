//! Forecast plots: context tail, interval band and holdout points coloured by coverage.

use std::fmt::Write as _;
use std::path::Path;

use super::report::escape;
use super::HarnessError;
use crate::domain::PredictionInterval;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

pub const INSIDE_COLOR: &str = "#2ca02c";
pub const OUTSIDE_COLOR: &str = "#d62728";

/// Pixel geometry of a series plot.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPlot {
    pub title: String,
    pub context: Vec<(f64, f64)>,
    pub forecast: Vec<(f64, f64)>,
    pub upper: Vec<(f64, f64)>,
    pub lower: Vec<(f64, f64)>,
    /// Holdout points and whether each lies inside the interval.
    pub holdout: Vec<(f64, f64, bool)>,
}

impl SeriesPlot {
    /// With an empty holdout the interval is ignored and only the context is drawn.
    pub fn layout(
        title: &str,
        context: &[f64],
        interval: Option<&PredictionInterval>,
        actuals: &[f64],
    ) -> Result<Self, HarnessError> {
        let interval = interval.filter(|_| !actuals.is_empty());
        if let Some(iv) = interval {
            if iv.len() != actuals.len() {
                return Err(HarnessError::Config(format!(
                    "interval of length {} for {} holdout points",
                    iv.len(),
                    actuals.len()
                )));
            }
        }
        let n = context.len() + actuals.len();
        let all = context
            .iter()
            .chain(actuals)
            .chain(interval.iter().flat_map(|iv| iv.lower().iter().chain(iv.upper())))
            .copied();
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        } else if hi - lo <= 0.0 {
            (lo, hi) = (lo - 1.0, hi + 1.0);
        }
        let span = (n.max(2) - 1) as f64;
        let px = |i: usize| MARGIN + i as f64 / span * (WIDTH - 2.0 * MARGIN);
        let py = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);
        let c = context.len();
        let pts = |vals: &[f64]| -> Vec<(f64, f64)> { vals.iter().enumerate().map(|(k, &v)| (px(c + k), py(v))).collect() };
        Ok(Self {
            title: title.to_string(),
            context: context.iter().enumerate().map(|(i, &v)| (px(i), py(v))).collect(),
            forecast: interval.map(|iv| pts(iv.center().point())).unwrap_or_default(),
            upper: interval.map(|iv| pts(iv.upper())).unwrap_or_default(),
            lower: interval.map(|iv| pts(iv.lower())).unwrap_or_default(),
            holdout: actuals
                .iter()
                .enumerate()
                .map(|(k, &v)| (px(c + k), py(v), interval.is_none_or(|iv| iv.contains(k, v))))
                .collect(),
        })
    }

    pub fn outside_count(&self) -> usize {
        self.holdout.iter().filter(|p| !p.2).count()
    }

    pub fn to_svg(&self) -> String {
        fn path(points: &[(f64, f64)]) -> String {
            points
                .iter()
                .map(|(x, y)| format!("{x:.2},{y:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{MARGIN:.0}" y="22">{}</text>"#, escape(&self.title));
        if !self.context.is_empty() {
            let _ = writeln!(
                s,
                r##"<polyline class="context" points="{}" fill="none" stroke="#333"/>"##,
                path(&self.context)
            );
        }
        if !self.upper.is_empty() {
            let band: Vec<(f64, f64)> = self.upper.iter().chain(self.lower.iter().rev()).copied().collect();
            let _ = writeln!(
                s,
                r##"<polygon class="band" points="{}" fill="#9ecae1" fill-opacity="0.35" stroke="none"/>"##,
                path(&band)
            );
            for (class, pts) in [("upper", &self.upper), ("lower", &self.lower)] {
                let _ = writeln!(
                    s,
                    r##"<polyline class="{class}" points="{}" fill="none" stroke="#6baed6"/>"##,
                    path(pts)
                );
            }
            let _ = writeln!(
                s,
                r##"<polyline class="forecast" points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
                path(&self.forecast)
            );
        }
        for &(x, y, inside) in &self.holdout {
            let (class, color) = if inside { ("inside", INSIDE_COLOR) } else { ("outside", OUTSIDE_COLOR) };
            let _ = writeln!(s, r#"<circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Writes an SVG of the context, the interval band and the coloured holdout.
pub fn plot_series(
    title: &str,
    context: &[f64],
    interval: Option<&PredictionInterval>,
    actuals: &[f64],
    output: &Path,
) -> Result<(), HarnessError> {
    let plot = SeriesPlot::layout(title, context, interval, actuals)?;
    std::fs::write(output, plot.to_svg())?;
    Ok(())
}
