//! Reference adapter: answers every forecast with the last context value.
//!
//! Speaks the adapter protocol on stdin/stdout, or on a TCP socket with
//! `--tcp ADDR`. The `--mode` flag injects faults for client testing:
//! `nan`, `short` (one point too few), `error`, `slow` (sleeps `--sleep-ms`).

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use tscp_core::bridge::server::{serve, AdapterBackend, EchoBackend};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Echo,
    Nan,
    Short,
    Error,
    Slow,
}

struct Options {
    tcp: Option<String>,
    name: String,
    max_context: usize,
    version: u32,
    mode: Mode,
    sleep_ms: u64,
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options {
        tcp: None,
        name: "echo".into(),
        max_context: 4096,
        version: 1,
        mode: Mode::Echo,
        sleep_ms: 1000,
    };
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let mut value = || args.next().ok_or(format!("{flag} needs a value"));
        match flag.as_str() {
            "--tcp" => opts.tcp = Some(value()?),
            "--name" => opts.name = value()?,
            "--max-context" => opts.max_context = value()?.parse().map_err(|e| format!("{e}"))?,
            "--version" => opts.version = value()?.parse().map_err(|e| format!("{e}"))?,
            "--sleep-ms" => opts.sleep_ms = value()?.parse().map_err(|e| format!("{e}"))?,
            "--mode" => {
                opts.mode = match value()?.as_str() {
                    "echo" => Mode::Echo,
                    "nan" => Mode::Nan,
                    "short" => Mode::Short,
                    "error" => Mode::Error,
                    "slow" => Mode::Slow,
                    other => return Err(format!("unknown mode `{other}`")),
                }
            }
            other => return Err(format!("unknown argument `{other}`")),
        }
    }
    Ok(opts)
}

struct Faulty {
    inner: EchoBackend,
    mode: Mode,
    sleep: Duration,
}

impl AdapterBackend for Faulty {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn max_context(&self) -> usize {
        self.inner.max_context()
    }

    fn forecast(
        &mut self,
        series: &str,
        context: &[f64],
        horizon: usize,
        freq: &str,
        season_length: usize,
    ) -> Result<Vec<f64>, String> {
        let mut point = self.inner.forecast(series, context, horizon, freq, season_length)?;
        match self.mode {
            Mode::Echo => {}
            Mode::Nan => point[0] = f64::NAN,
            Mode::Short => {
                point.pop();
            }
            Mode::Error => return Err("injected failure".into()),
            Mode::Slow => std::thread::sleep(self.sleep),
        }
        Ok(point)
    }
}

/// Replies to every line with an info message carrying a foreign protocol version.
fn serve_wrong_version<R: BufRead, W: Write>(input: R, mut out: W, opts: &Options) -> io::Result<()> {
    for line in input.lines() {
        line?;
        writeln!(
            out,
            r#"{{"v":{},"type":"info","name":"{}","max_context":{},"freqs":["H","D","W","M"]}}"#,
            opts.version, opts.name, opts.max_context
        )?;
        out.flush()?;
    }
    Ok(())
}

fn run_session<R: BufRead, W: Write>(input: R, out: W, opts: &Options) -> io::Result<()> {
    if opts.version != 1 {
        return serve_wrong_version(input, out, opts);
    }
    let mut backend = Faulty {
        inner: EchoBackend {
            name: opts.name.clone(),
            max_context: opts.max_context,
        },
        mode: opts.mode,
        sleep: Duration::from_millis(opts.sleep_ms),
    };
    serve(input, out, &mut backend)
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("echo-adapter: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = Arc::new(opts);
    let result = match &opts.tcp {
        // One thread per connection, so a client pool can hold several at once.
        Some(addr) => TcpListener::bind(addr).and_then(|listener| {
            eprintln!("echo-adapter listening on {}", listener.local_addr()?);
            for stream in listener.incoming() {
                let stream = stream?;
                let reader = BufReader::new(stream.try_clone()?);
                let opts = Arc::clone(&opts);
                std::thread::spawn(move || {
                    if let Err(e) = run_session(reader, stream, &opts) {
                        eprintln!("echo-adapter: session ended: {e}");
                    }
                });
            }
            Ok(())
        }),
        None => run_session(io::stdin().lock(), io::stdout().lock(), &opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echo-adapter: {e}");
            ExitCode::FAILURE
        }
    }
}
