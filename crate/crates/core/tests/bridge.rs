//! End-to-end tests of the adapter client against the echo-adapter binary.

use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use tscp_core::bridge::{
    AdapterClient, AdapterPool, BridgeError, ConnectOptions, Endpoint, ForecastRequest, RemoteForecaster,
};
use tscp_core::domain::Frequency;
use tscp_core::forecasters::{naive_forecast, ForecastQuery, Forecaster};

const ECHO: &str = env!("CARGO_BIN_EXE_echo-adapter");

fn endpoint(args: &str) -> Endpoint {
    Endpoint::parse(&format!("{ECHO} {args}")).unwrap()
}

fn quick() -> ConnectOptions {
    ConnectOptions {
        attempts: 2,
        retry_delay: Duration::from_millis(20),
        handshake_timeout: Duration::from_secs(10),
    }
}

fn request(id: &str, context: Vec<f64>, horizon: usize) -> ForecastRequest {
    ForecastRequest {
        request_id: id.into(),
        series_id: "s".into(),
        context,
        horizon,
        frequency: Frequency::Hourly,
        season_length: 24,
    }
}

const TIMEOUT: Duration = Duration::from_secs(10);

#[test]
fn handshake_reports_adapter_info() {
    let client = AdapterClient::connect(&endpoint("--name probe --max-context 64"), quick()).unwrap();
    let info = client.info();
    assert_eq!(info.name, "probe");
    assert_eq!(info.max_context, 64);
    assert_eq!(info.protocol_version, 1);
    assert_eq!(info.supported_frequencies, Frequency::ALL.to_vec());
}

#[test]
fn echo_matches_builtin_naive_bitwise() {
    let mut client = AdapterClient::connect(&endpoint(""), quick()).unwrap();
    let contexts = [
        vec![1.0, 2.0, 0.1 + 0.2],
        vec![-0.0],
        vec![1e-300, 5e300, -7.125],
        vec![std::f64::consts::PI; 40],
    ];
    for (i, ctx) in contexts.iter().enumerate() {
        let resp = client.forecast_remote(&request(&format!("r{i}"), ctx.clone(), 5), TIMEOUT).unwrap();
        let local = naive_forecast(ctx, 5).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&resp.point), bits(local.point()));
        assert_eq!(resp.request_id, format!("r{i}"));
    }
    assert_eq!(client.stats().requests, 4);
}

#[test]
fn non_finite_reply_is_rejected() {
    let mut client = AdapterClient::connect(&endpoint("--mode nan"), quick()).unwrap();
    let err = client.forecast_remote(&request("a", vec![1.0], 3), TIMEOUT).unwrap_err();
    // NaN has no JSON representation; it goes over the wire as null.
    assert!(matches!(err, BridgeError::MalformedResponse(_)), "{err}");
}

#[test]
fn short_reply_is_rejected() {
    let mut client = AdapterClient::connect(&endpoint("--mode short"), quick()).unwrap();
    let err = client.forecast_remote(&request("a", vec![1.0], 3), TIMEOUT).unwrap_err();
    assert!(matches!(err, BridgeError::MalformedResponse(_)), "{err}");
}

#[test]
fn adapter_errors_surface_and_the_connection_survives() {
    let mut client = AdapterClient::connect(&endpoint("--mode error"), quick()).unwrap();
    for id in ["a", "b"] {
        let err = client.forecast_remote(&request(id, vec![1.0], 2), TIMEOUT).unwrap_err();
        assert!(
            matches!(&err, BridgeError::AdapterError { request_id, message } if request_id == id && message.contains("injected")),
            "{err}"
        );
    }
    assert_eq!(client.stats().failures, 2);
}

#[test]
fn timeouts_discard_late_replies() {
    let mut client = AdapterClient::connect(&endpoint("--mode slow --sleep-ms 300"), quick()).unwrap();
    let err = client
        .forecast_remote(&request("late", vec![1.0], 2), Duration::from_millis(50))
        .unwrap_err();
    assert!(matches!(err, BridgeError::Timeout { ref request_id, .. } if request_id == "late"));
    let ok = client.forecast_remote(&request("next", vec![4.0], 2), TIMEOUT).unwrap();
    assert_eq!(ok.request_id, "next");
    assert_eq!(ok.point, vec![4.0, 4.0]);
}

#[test]
fn foreign_protocol_version_is_refused() {
    let err = AdapterClient::connect(&endpoint("--version 2"), quick()).unwrap_err();
    assert!(matches!(err, BridgeError::ProtocolMismatch(_)), "{err}");
}

#[test]
fn tiny_max_context_is_refused() {
    let err = AdapterClient::connect(&endpoint("--max-context 16"), quick()).unwrap_err();
    assert!(matches!(err, BridgeError::ProtocolMismatch(ref m) if m.contains("max_context")), "{err}");
}

#[test]
fn oversized_context_is_caught_client_side() {
    let mut client = AdapterClient::connect(&endpoint("--max-context 32"), quick()).unwrap();
    let err = client.forecast_remote(&request("a", vec![1.0; 33], 2), TIMEOUT).unwrap_err();
    assert_eq!(err, BridgeError::ContextTooLong { len: 33, max: 32 });
}

#[test]
fn unreachable_tcp_endpoint_reports_attempts() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = AdapterClient::connect(&Endpoint::Tcp(addr.to_string()), quick()).unwrap_err();
    assert!(matches!(err, BridgeError::Unreachable { attempts: 2, .. }), "{err}");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn tcp_server() -> (Server, String) {
    let mut child = Command::new(ECHO)
        .args(["--tcp", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    (Server(child), addr)
}

#[test]
fn tcp_transport_and_pool() {
    let (_server, addr) = tcp_server();
    let ep = Endpoint::parse(&format!("tcp://{addr}")).unwrap();
    let pool = Arc::new(AdapterPool::connect(&ep, 2, TIMEOUT, quick()).unwrap());
    assert_eq!(pool.info().name, "echo");
    let remote = RemoteForecaster::new("echo", pool.clone(), 24);
    let ctx: Vec<f64> = (0..50).map(|i| i as f64 * 0.5).collect();
    for _ in 0..3 {
        let f = remote
            .forecast(&ForecastQuery {
                series_id: "x",
                context: &ctx,
                horizon: 4,
                frequency: Frequency::Hourly,
            })
            .unwrap();
        assert_eq!(f.point(), &[24.5; 4]);
    }
    assert_eq!(pool.stats().requests, 3);
}

#[test]
fn pool_serves_concurrent_callers() {
    let pool = Arc::new(AdapterPool::connect(&endpoint(""), 3, TIMEOUT, quick()).unwrap());
    std::thread::scope(|s| {
        for t in 0..6 {
            let pool = pool.clone();
            s.spawn(move || {
                for k in 0..10 {
                    let v = (t * 100 + k) as f64;
                    let r = pool.forecast(&format!("t{t}"), &[0.0, v], 2, Frequency::Daily, 7).unwrap();
                    assert_eq!(r.point, vec![v, v]);
                }
            });
        }
    });
    assert_eq!(pool.stats().requests, 60);
}
