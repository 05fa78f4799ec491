use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::wire::{Envelope, Message, PROTOCOL_VERSION};
use super::BridgeError;
use crate::domain::Frequency;

/// Smallest `max_context` an adapter may advertise.
pub const MIN_ADAPTER_CONTEXT: usize = 32;

/// Where an adapter lives: a TCP socket, or a command spawned as a child process
/// talking over its standard input and output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Tcp(String),
    Process(Vec<String>),
}

impl Endpoint {
    /// `tcp://host:port` selects a socket; anything else is a whitespace-separated command line.
    pub fn parse(text: &str) -> Result<Self, BridgeError> {
        let text = text.trim();
        if let Some(addr) = text.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err(BridgeError::InvalidEndpoint(text.to_string()));
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let argv: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(BridgeError::InvalidEndpoint(text.to_string()));
        }
        Ok(Endpoint::Process(argv))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
            Endpoint::Process(argv) => f.write_str(&argv.join(" ")),
        }
    }
}

/// What the adapter announced during the handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterInfo {
    pub name: String,
    pub supported_frequencies: Vec<Frequency>,
    pub max_context: usize,
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRequest {
    pub request_id: String,
    pub series_id: String,
    pub context: Vec<f64>,
    pub horizon: usize,
    pub frequency: Frequency,
    pub season_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub request_id: String,
    pub point: Vec<f64>,
    /// Inference time reported by the adapter.
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ConnectOptions {
    pub attempts: u32,
    pub retry_delay: Duration,
    pub handshake_timeout: Duration,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        Self {
            attempts: 3,
            retry_delay: Duration::from_millis(200),
            handshake_timeout: Duration::from_secs(30),
        }
    }
}

/// Request latencies observed by a client, for the inference-time report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub requests: u64,
    pub failures: u64,
    pub total_ms: f64,
    pub max_ms: f64,
    pub adapter_total_ms: u64,
}

impl LatencyStats {
    pub fn mean_ms(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.total_ms / self.requests as f64
        }
    }

    pub fn merge(&mut self, other: &LatencyStats) {
        self.requests += other.requests;
        self.failures += other.failures;
        self.total_ms += other.total_ms;
        self.max_ms = self.max_ms.max(other.max_ms);
        self.adapter_total_ms += other.adapter_total_ms;
    }
}

/// One connection to an adapter. Requests on a connection are strictly sequential.
pub struct AdapterClient {
    endpoint: Endpoint,
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    info: AdapterInfo,
    /// Ids of requests that timed out; late replies to them are discarded.
    abandoned: HashSet<String>,
    stats: LatencyStats,
}

impl fmt::Debug for AdapterClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdapterClient")
            .field("endpoint", &self.endpoint)
            .field("info", &self.info)
            .finish()
    }
}

fn spawn_reader<R: io::Read + Send + 'static>(source: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(source);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => {
                    let _ = tx.send(Err(io::Error::new(io::ErrorKind::UnexpectedEof, "adapter closed")));
                    break;
                }
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

type Opened = (Box<dyn Write + Send>, Receiver<io::Result<String>>, Option<Child>);

fn open(endpoint: &Endpoint) -> io::Result<Opened> {
    match endpoint {
        Endpoint::Tcp(addr) => {
            let stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            let reader = stream.try_clone()?;
            Ok((Box::new(stream), spawn_reader(reader), None))
        }
        Endpoint::Process(argv) => {
            let mut child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            Ok((Box::new(stdin), spawn_reader(stdout), Some(child)))
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(BridgeError),
}

impl AdapterClient {
    /// Connects (retrying on connection failures) and performs the hello/info handshake.
    pub fn connect(endpoint: &Endpoint, options: ConnectOptions) -> Result<Self, BridgeError> {
        let attempts = options.attempts.max(1);
        let mut reason = String::new();
        for attempt in 1..=attempts {
            match Self::try_connect(endpoint, options.handshake_timeout) {
                Ok(client) => return Ok(client),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(why)) => {
                    log::debug!("adapter {endpoint}: attempt {attempt}/{attempts} failed: {why}");
                    reason = why;
                    if attempt < attempts {
                        thread::sleep(options.retry_delay);
                    }
                }
            }
        }
        Err(BridgeError::Unreachable {
            endpoint: endpoint.to_string(),
            attempts,
            reason,
        })
    }

    fn try_connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, Attempt> {
        let (mut writer, lines, child) = open(endpoint).map_err(|e| Attempt::Retry(e.to_string()))?;
        let hello = Envelope::new(Message::Hello).to_line();
        writeln!(writer, "{hello}")
            .and_then(|_| writer.flush())
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let mut client = AdapterClient {
            endpoint: endpoint.clone(),
            writer,
            lines,
            child,
            info: AdapterInfo {
                name: String::new(),
                supported_frequencies: Vec::new(),
                max_context: 0,
                protocol_version: 0,
            },
            abandoned: HashSet::new(),
            stats: LatencyStats::default(),
        };
        let line = match client.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Attempt::Retry(e.to_string())),
            Err(_) => return Err(Attempt::Retry("no reply to hello".into())),
        };
        client.info = parse_info(&line).map_err(Attempt::Fatal)?;
        Ok(client)
    }

    pub fn info(&self) -> &AdapterInfo {
        &self.info
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn stats(&self) -> LatencyStats {
        self.stats
    }

    /// Sends one forecast request and waits for its validated reply.
    pub fn forecast_remote(
        &mut self,
        request: &ForecastRequest,
        timeout: Duration,
    ) -> Result<ForecastResponse, BridgeError> {
        let started = Instant::now();
        let result = self.exchange(request, timeout);
        let ms = started.elapsed().as_secs_f64() * 1000.0;
        match &result {
            Ok(resp) => {
                self.stats.requests += 1;
                self.stats.total_ms += ms;
                self.stats.max_ms = self.stats.max_ms.max(ms);
                self.stats.adapter_total_ms += resp.elapsed_ms;
            }
            Err(_) => self.stats.failures += 1,
        }
        result
    }

    fn exchange(
        &mut self,
        request: &ForecastRequest,
        timeout: Duration,
    ) -> Result<ForecastResponse, BridgeError> {
        if !self.info.supported_frequencies.contains(&request.frequency) {
            return Err(BridgeError::UnsupportedFrequency(request.frequency));
        }
        if request.context.len() > self.info.max_context {
            return Err(BridgeError::ContextTooLong {
                len: request.context.len(),
                max: self.info.max_context,
            });
        }
        let line = Envelope::new(Message::Forecast {
            id: request.request_id.clone(),
            series: request.series_id.clone(),
            context: request.context.clone(),
            h: request.horizon,
            freq: request.frequency.code().to_string(),
            m: request.season_length,
        })
        .to_line();
        writeln!(self.writer, "{line}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| BridgeError::Io(e.to_string()))?;

        let deadline = Instant::now() + timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(BridgeError::Io(e.to_string())),
                Err(RecvTimeoutError::Timeout) => {
                    self.abandoned.insert(request.request_id.clone());
                    return Err(BridgeError::Timeout {
                        request_id: request.request_id.clone(),
                        timeout_ms: timeout.as_millis() as u64,
                    });
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(BridgeError::Io("adapter reader stopped".into()))
                }
            };
            let env = Envelope::parse(&line)
                .map_err(|e| BridgeError::MalformedResponse(format!("{e}: {}", line.trim_end())))?;
            if env.v != PROTOCOL_VERSION {
                return Err(BridgeError::ProtocolMismatch(format!(
                    "reply has protocol version {}",
                    env.v
                )));
            }
            let (id, outcome) = match env.body {
                Message::Result { id, point, ms } => (id, Ok((point, ms))),
                Message::Error { id, msg } => (id, Err(msg)),
                other => {
                    return Err(BridgeError::MalformedResponse(format!(
                        "unexpected message {other:?}"
                    )))
                }
            };
            if id != request.request_id {
                if self.abandoned.remove(&id) {
                    continue;
                }
                return Err(BridgeError::MalformedResponse(format!(
                    "reply for `{id}` while waiting for `{}`",
                    request.request_id
                )));
            }
            let (point, ms) = outcome.map_err(|message| BridgeError::AdapterError {
                request_id: id.clone(),
                message,
            })?;
            if point.len() != request.horizon {
                return Err(BridgeError::MalformedResponse(format!(
                    "{} points for horizon {}",
                    point.len(),
                    request.horizon
                )));
            }
            if let Some(k) = point.iter().position(|v| !v.is_finite()) {
                return Err(BridgeError::MalformedResponse(format!("non-finite value at step {k}")));
            }
            return Ok(ForecastResponse {
                request_id: id,
                point,
                elapsed_ms: ms,
            });
        }
    }
}

fn parse_info(line: &str) -> Result<AdapterInfo, BridgeError> {
    let value: serde_json::Value = serde_json::from_str(line.trim_end())
        .map_err(|e| BridgeError::MalformedResponse(format!("handshake: {e}")))?;
    let version = value.get("v").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != PROTOCOL_VERSION {
        return Err(BridgeError::ProtocolMismatch(format!(
            "adapter speaks protocol version {version}, expected {PROTOCOL_VERSION}"
        )));
    }
    let env = Envelope::parse(line)
        .map_err(|e| BridgeError::MalformedResponse(format!("handshake: {e}")))?;
    let Message::Info {
        name,
        max_context,
        freqs,
    } = env.body
    else {
        return Err(BridgeError::ProtocolMismatch(format!(
            "expected info, got {:?}",
            env.body
        )));
    };
    if max_context < MIN_ADAPTER_CONTEXT {
        return Err(BridgeError::ProtocolMismatch(format!(
            "max_context {max_context} is below the minimum of {MIN_ADAPTER_CONTEXT}"
        )));
    }
    let supported_frequencies = freqs
        .iter()
        .map(|code| {
            Frequency::from_code(code)
                .ok_or_else(|| BridgeError::MalformedResponse(format!("unknown frequency `{code}`")))
        })
        .collect::<Result<_, _>>()?;
    Ok(AdapterInfo {
        name,
        supported_frequencies,
        max_context,
        protocol_version: version,
    })
}

impl Drop for AdapterClient {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            Endpoint::parse("tcp://127.0.0.1:9000").unwrap(),
            Endpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            Endpoint::parse("python3 adapter.py serve --model x").unwrap(),
            Endpoint::Process(
                ["python3", "adapter.py", "serve", "--model", "x"].map(String::from).to_vec()
            )
        );
        assert!(Endpoint::parse("  ").is_err());
        assert!(Endpoint::parse("tcp://").is_err());
    }

    #[test]
    fn info_validation() {
        let ok = r#"{"v":1,"type":"info","name":"m","max_context":512,"freqs":["H","D"]}"#;
        let info = parse_info(ok).unwrap();
        assert_eq!(info.max_context, 512);
        assert_eq!(info.supported_frequencies, vec![Frequency::Hourly, Frequency::Daily]);

        let v2 = r#"{"v":2,"type":"info","name":"m","max_context":512,"freqs":["H"]}"#;
        assert!(matches!(parse_info(v2), Err(BridgeError::ProtocolMismatch(_))));
        let small = r#"{"v":1,"type":"info","name":"m","max_context":16,"freqs":["H"]}"#;
        assert!(matches!(parse_info(small), Err(BridgeError::ProtocolMismatch(_))));
    }

    #[test]
    fn missing_program_is_unreachable() {
        let ep = Endpoint::parse("/nonexistent/adapter-binary").unwrap();
        let opts = ConnectOptions {
            attempts: 2,
            retry_delay: Duration::from_millis(1),
            handshake_timeout: Duration::from_millis(100),
        };
        match AdapterClient::connect(&ep, opts) {
            Err(BridgeError::Unreachable { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("expected Unreachable, got {other:?}"),
        }
    }
}
