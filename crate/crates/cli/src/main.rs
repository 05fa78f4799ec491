//! `tscp`: run conformal forecasting experiments, fetch datasets, redraw
//! reports and probe forecasting adapters.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tscp_core::bridge::{AdapterClient, ConnectOptions, Endpoint};
use tscp_core::conformal::ThresholdMode;
use tscp_core::datasets::{fetch_dataset, load_long_csv, tsf::read_tsf, write_long_csv, HttpDownloader, Manifest};
use tscp_core::domain::{Frequency, MiscoverageRate};
use tscp_core::harness::{
    emit_report, run_experiment_detailed, write_outputs, ExperimentConfig, ReportFormat, ResultsFile, CACHE_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "tscp", version, about = "Split conformal prediction benchmarks for time-series forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        threshold: Option<Mode>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Download a dataset listed in the manifest into the cache.
    Fetch {
        #[arg(long)]
        dataset: String,
        #[arg(long, env = "TSCP_MANIFEST", default_value = "datasets/manifest.toml")]
        manifest: PathBuf,
        #[arg(long, env = CACHE_DIR_ENV, default_value = ".tscp-cache")]
        cache_dir: PathBuf,
    },
    /// Redraw tables and bubble charts from a results.json file.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a .tsf file to the long CSV layout.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        frequency: Option<Freq>,
    },
    /// Forecasting adapter utilities.
    Adapters {
        #[command(subcommand)]
        command: AdapterCommand,
    },
}

#[derive(Subcommand)]
enum AdapterCommand {
    /// Connect, complete the handshake and print what the adapter reports.
    Check {
        /// `tcp://host:port`, or a quoted command line to spawn.
        #[arg(long, allow_hyphen_values = true)]
        endpoint: String,
        /// Also send one forecast request with this many context points.
        #[arg(long)]
        probe: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Local,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum Freq {
    Hourly,
    Daily,
    Weekly,
    Monthly,
}

impl From<Freq> for Frequency {
    fn from(f: Freq) -> Self {
        match f {
            Freq::Hourly => Frequency::Hourly,
            Freq::Daily => Frequency::Daily,
            Freq::Weekly => Frequency::Weekly,
            Freq::Monthly => Frequency::Monthly,
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, threshold, alpha, out } => run(&config, seed, threshold, alpha, out),
        Command::Fetch { dataset, manifest, cache_dir } => {
            let manifest = Manifest::load(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
            let path = fetch_dataset(&dataset, &manifest, &cache_dir, &HttpDownloader)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Plot { results, out } => {
            let file = ResultsFile::load(&results)?;
            std::fs::create_dir_all(&out)?;
            for path in emit_report(&file.rows, file.alpha, &out, &[ReportFormat::Markdown, ReportFormat::Svg])? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Convert { input, output, frequency } => convert(&input, &output, frequency.map(Frequency::from)),
        Command::Adapters {
            command: AdapterCommand::Check { endpoint, probe },
        } => check_adapter(&endpoint, probe),
    }
}

fn run(config: &Path, seed: Option<u64>, threshold: Option<Mode>, alpha: Option<f64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(mode) = threshold {
        cfg.threshold_mode = match mode {
            Mode::Local => ThresholdMode::Local,
            Mode::Global => ThresholdMode::Global,
        };
    }
    if let Some(alpha) = alpha {
        cfg.alpha = MiscoverageRate::new(alpha)?;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    let run = run_experiment_detailed(&cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_outputs(&run, &cfg.output_dir, cfg.plot_units)?;
    print!("{}", tscp_core::harness::markdown_table(&run.rows));
    if !run.failures.is_empty() {
        log::warn!("{} unit failures, see failures.log", run.failures.len());
    }
    log::info!("results written to {}", cfg.output_dir.display());
    Ok(())
}

fn convert(input: &Path, output: &Path, frequency: Option<Frequency>) -> Result<()> {
    let series = if input.extension().is_some_and(|e| e == "tsf") {
        let file = std::fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
        read_tsf(std::io::BufReader::new(file), frequency)?
    } else {
        let Some(freq) = frequency else {
            bail!("--frequency is required for CSV input");
        };
        load_long_csv(input, freq)?
    };
    write_long_csv(&series, output)?;
    println!("{} series written to {}", series.len(), output.display());
    Ok(())
}

fn check_adapter(endpoint: &str, probe: Option<usize>) -> Result<()> {
    let endpoint = Endpoint::parse(endpoint)?;
    let options = ConnectOptions {
        attempts: 3,
        retry_delay: Duration::from_millis(500),
        handshake_timeout: Duration::from_secs(60),
    };
    let mut client = AdapterClient::connect(&endpoint, options)?;
    let info = client.info().clone();
    let freqs: Vec<&str> = info.supported_frequencies.iter().map(|f| f.code()).collect();
    println!("endpoint: {endpoint}");
    println!("name: {}", info.name);
    println!("protocol_version: {}", info.protocol_version);
    println!("max_context: {}", info.max_context);
    println!("frequencies: {}", freqs.join(","));
    if let Some(n) = probe {
        let freq = info.supported_frequencies.first().copied().unwrap_or(Frequency::Hourly);
        let context: Vec<f64> = (0..n.clamp(1, info.max_context)).map(|i| (i % 24) as f64).collect();
        let request = tscp_core::bridge::ForecastRequest {
            request_id: "probe".into(),
            series_id: "probe".into(),
            context,
            horizon: freq.standard_horizons()[0],
            frequency: freq,
            season_length: freq.default_season_length(),
        };
        let reply = client.forecast_remote(&request, Duration::from_secs(60))?;
        println!("probe: {} steps in {} ms", reply.point.len(), reply.elapsed_ms);
    }
    Ok(())
}
