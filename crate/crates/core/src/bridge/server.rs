//! Adapter-side protocol loop, shared by the reference echo adapter and tests.

use std::io::{self, BufRead, Write};
use std::time::Instant;

use super::wire::{salvage_id, Envelope, Message, PROTOCOL_VERSION};

/// A model served over the wire protocol.
pub trait AdapterBackend {
    fn name(&self) -> &str;

    fn max_context(&self) -> usize;

    /// Frequency codes ("H", "D", "W", "M") the model accepts.
    fn frequencies(&self) -> Vec<String> {
        ["H", "D", "W", "M"].map(String::from).to_vec()
    }

    /// Point forecast of `horizon` steps, or a human-readable error.
    fn forecast(
        &mut self,
        series: &str,
        context: &[f64],
        horizon: usize,
        freq: &str,
        season_length: usize,
    ) -> Result<Vec<f64>, String>;
}

/// Answers messages until the input closes. A bad request produces an
/// `error` line and the loop keeps going.
pub fn serve<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    backend: &mut dyn AdapterBackend,
) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = respond(&line, backend);
        writeln!(output, "{}", reply.to_line())?;
        output.flush()?;
    }
    Ok(())
}

fn error(id: String, msg: impl Into<String>) -> Envelope {
    Envelope::new(Message::Error { id, msg: msg.into() })
}

fn respond(line: &str, backend: &mut dyn AdapterBackend) -> Envelope {
    let env = match Envelope::parse(line) {
        Ok(env) => env,
        Err(e) => return error(salvage_id(line), format!("malformed request: {e}")),
    };
    if env.v != PROTOCOL_VERSION {
        return error(String::new(), format!("unsupported protocol version {}", env.v));
    }
    match env.body {
        Message::Hello => Envelope::new(Message::Info {
            name: backend.name().to_string(),
            max_context: backend.max_context(),
            freqs: backend.frequencies(),
        }),
        Message::Forecast {
            id,
            series,
            context,
            h,
            freq,
            m,
        } => {
            if h == 0 {
                return error(id, "horizon must be positive");
            }
            if context.is_empty() {
                return error(id, "empty context");
            }
            if context.len() > backend.max_context() {
                return error(
                    id,
                    format!("context of {} exceeds max_context {}", context.len(), backend.max_context()),
                );
            }
            let started = Instant::now();
            match backend.forecast(&series, &context, h, &freq, m) {
                Ok(point) => Envelope::new(Message::Result {
                    id,
                    point,
                    ms: started.elapsed().as_millis() as u64,
                }),
                Err(msg) => error(id, msg),
            }
        }
        other => error(String::new(), format!("unexpected message {other:?}")),
    }
}

/// Returns the last context value for every step; the wire twin of the naive forecaster.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    pub name: String,
    pub max_context: usize,
}

impl Default for EchoBackend {
    fn default() -> Self {
        Self {
            name: "echo".into(),
            max_context: 4096,
        }
    }
}

impl AdapterBackend for EchoBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn max_context(&self) -> usize {
        self.max_context
    }

    fn forecast(
        &mut self,
        _series: &str,
        context: &[f64],
        horizon: usize,
        _freq: &str,
        _season_length: usize,
    ) -> Result<Vec<f64>, String> {
        let last = *context.last().ok_or("empty context")?;
        Ok(vec![last; horizon])
    }
}
