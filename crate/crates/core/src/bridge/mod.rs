//! Client side of the adapter protocol for out-of-process forecasters
//! (foundation models, gradient boosting), plus the adapter-side loop used by
//! the reference echo adapter.

mod client;
pub mod server;
pub mod wire;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

pub use client::{
    AdapterClient, AdapterInfo, ConnectOptions, Endpoint, ForecastRequest, ForecastResponse,
    LatencyStats, MIN_ADAPTER_CONTEXT,
};

use crate::domain::{Forecast, Frequency};
use crate::forecasters::{ForecastError, ForecastQuery, Forecaster};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("invalid endpoint `{0}`")]
    InvalidEndpoint(String),
    #[error("adapter {endpoint} unreachable after {attempts} attempt(s): {reason}")]
    Unreachable {
        endpoint: String,
        attempts: u32,
        reason: String,
    },
    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),
    #[error("request `{request_id}` timed out after {timeout_ms} ms")]
    Timeout { request_id: String, timeout_ms: u64 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("adapter error for request `{request_id}`: {message}")]
    AdapterError { request_id: String, message: String },
    #[error("adapter does not support {0} data")]
    UnsupportedFrequency(Frequency),
    #[error("context of {len} points exceeds the adapter's max_context {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("i/o error talking to adapter: {0}")]
    Io(String),
}

impl From<BridgeError> for ForecastError {
    fn from(e: BridgeError) -> Self {
        ForecastError::Remote(e.to_string())
    }
}

/// A fixed set of connections to one adapter, shared by all cells of a run.
pub struct AdapterPool {
    clients: Vec<Mutex<AdapterClient>>,
    next: AtomicUsize,
    request_counter: AtomicU64,
    timeout: Duration,
}

impl AdapterPool {
    pub fn connect(
        endpoint: &Endpoint,
        connections: usize,
        timeout: Duration,
        options: ConnectOptions,
    ) -> Result<Self, BridgeError> {
        let clients = (0..connections.max(1))
            .map(|_| AdapterClient::connect(endpoint, options).map(Mutex::new))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            clients,
            next: AtomicUsize::new(0),
            request_counter: AtomicU64::new(0),
            timeout,
        })
    }

    pub fn info(&self) -> AdapterInfo {
        lock(&self.clients[0]).info().clone()
    }

    pub fn stats(&self) -> LatencyStats {
        let mut total = LatencyStats::default();
        for c in &self.clients {
            total.merge(&lock(c).stats());
        }
        total
    }

    fn checkout(&self) -> MutexGuard<'_, AdapterClient> {
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        let n = self.clients.len();
        for i in 0..n {
            if let Ok(guard) = self.clients[(start + i) % n].try_lock() {
                return guard;
            }
        }
        lock(&self.clients[start % n])
    }

    pub fn forecast(
        &self,
        series_id: &str,
        context: &[f64],
        horizon: usize,
        frequency: Frequency,
        season_length: usize,
    ) -> Result<ForecastResponse, BridgeError> {
        let n = self.request_counter.fetch_add(1, Ordering::Relaxed);
        let request = ForecastRequest {
            request_id: format!("{series_id}#{n}"),
            series_id: series_id.to_string(),
            context: context.to_vec(),
            horizon,
            frequency,
            season_length,
        };
        self.checkout().forecast_remote(&request, self.timeout)
    }
}

fn lock(m: &Mutex<AdapterClient>) -> MutexGuard<'_, AdapterClient> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// An external adapter seen through the common forecaster interface.
pub struct RemoteForecaster {
    name: String,
    pool: Arc<AdapterPool>,
    season_length: usize,
}

impl RemoteForecaster {
    pub fn new(name: impl Into<String>, pool: Arc<AdapterPool>, season_length: usize) -> Self {
        Self {
            name: name.into(),
            pool,
            season_length,
        }
    }
}

impl Forecaster for RemoteForecaster {
    fn name(&self) -> &str {
        &self.name
    }

    fn forecast(&self, query: &ForecastQuery<'_>) -> Result<Forecast, ForecastError> {
        let response = self.pool.forecast(
            query.series_id,
            query.context,
            query.horizon,
            query.frequency,
            self.season_length,
        )?;
        Ok(Forecast::new(response.point)?)
    }
}
