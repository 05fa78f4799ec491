//! Experiment orchestration: configuration, cell execution, reports and plots.
//!
//! A cell is one (scenario, horizon, estimator) combination. Every cell is
//! scored against the naive forecaster run on the same units with the same
//! threshold mode, so MASE and MSIW are relative to naive.

mod config;
mod plot;
mod report;
mod run;

use std::path::{Path, PathBuf};

pub use config::{
    auto_context_length, default_split, DataSource, DatasetConfig, EstimatorConfig, ExperimentConfig, Generator,
    ScenarioConfig, CACHE_DIR_ENV,
};
pub use plot::{plot_series, SeriesPlot};
pub use report::{emit_report, emit_run_logs, markdown_table, results_csv, Bubble, BubbleChart, ReportFormat, ResultsFile};
pub use run::{
    run_experiment, run_experiment_detailed, CellTiming, ExperimentRun, FailureRecord, ResultRow, UnitOutcome,
};

use crate::datasets::DatasetError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes the report, run logs and the first `plot_units` unit plots of every cell.
pub fn write_outputs(run: &ExperimentRun, output_dir: &Path, plot_units: usize) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = emit_report(&run.rows, run.alpha, output_dir, &ReportFormat::ALL)?;
    written.extend(emit_run_logs(run, output_dir)?);
    if plot_units > 0 {
        let dir = output_dir.join("plots");
        std::fs::create_dir_all(&dir)?;
        let mut seen: Vec<(&str, crate::domain::HorizonLabel, &str, usize)> = Vec::new();
        for u in &run.units {
            let key = seen
                .iter_mut()
                .find(|k| k.0 == u.dataset && k.1 == u.horizon_label && k.2 == u.estimator);
            let count = match key {
                Some(k) => {
                    k.3 += 1;
                    k.3
                }
                None => {
                    seen.push((&u.dataset, u.horizon_label, &u.estimator, 1));
                    1
                }
            };
            if count > plot_units {
                continue;
            }
            let name = format!("{}_{}_{}_{}.svg", u.dataset, u.horizon_label, u.estimator, u.unit_id)
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
                .collect::<String>();
            let path = dir.join(name);
            let title = format!("{} {} {} ({})", u.dataset, u.horizon_label, u.estimator, u.unit_id);
            plot_series(&title, &u.context_tail, Some(&u.interval), &u.holdout, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
