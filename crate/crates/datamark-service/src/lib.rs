//! Minimal prediction service and matching client.
//!
//! The server exposes a trained classifier the way an MLaaS deployment
//! would: `POST /predict` with `{"features": [...]}` answers
//! `{"label": n, "scores": [...]?, "model_id": "..."}`, plus `GET /healthz`
//! for liveness and `GET /metrics` for a plain-text request counter and
//! per-label histogram. Hard labels are the default; scores are opt-in.
//!
//! The client wraps an endpoint as a [`BlackBoxTarget`], so an audit run
//! against a live service is the same code path as one against an in-process
//! model. Retries apply to transport failures only — a retried transport
//! failure is still one logical query — and never to 4xx/5xx responses.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use datamark::error::{Error, Result};
use datamark::inference::BlackBoxTarget;
use datamark::model::TrainedModel;

/// Request body of `POST /predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub features: Vec<f64>,
}

/// Response body of `POST /predict`. `scores`, when present, sums to 1
/// within 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub label: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub model_id: String,
}

/// Error body for every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
    pub request_id: u64,
}

/// Server options.
#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Include softmax scores in responses. Off by default: hard labels are
    /// the minimal black-box surface.
    pub expose_scores: bool,
    /// Opaque id reported with every prediction; derived from the parameter
    /// fingerprint when not set.
    pub model_id: Option<String>,
    /// Emit one JSON log line per request to stderr.
    pub log_requests: bool,
    /// Worker threads handling requests concurrently.
    pub workers: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            expose_scores: false,
            model_id: None,
            log_requests: true,
            workers: 4,
        }
    }
}

#[derive(Default)]
struct Metrics {
    requests: AtomicU64,
    predict_success: AtomicU64,
    predict_errors: AtomicU64,
    per_label: Mutex<Vec<u64>>,
}

/// Counter snapshot of a running server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsSnapshot {
    pub requests_total: u64,
    pub predict_success_total: u64,
    pub predict_errors_total: u64,
    /// Responses per predicted label.
    pub per_label: Vec<u64>,
}

/// A running prediction service; shuts down when dropped.
pub struct PredictionServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    metrics: Arc<Metrics>,
    shutdown: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl PredictionServer {
    /// Binds `bind_addr` (e.g. `127.0.0.1:0` for an ephemeral port) and
    /// starts serving the model.
    pub fn start(model: TrainedModel, bind_addr: &str, options: ServeOptions) -> Result<Self> {
        let server = tiny_http::Server::http(bind_addr)
            .map_err(|e| Error::Service(format!("bind {bind_addr}: {e}")))?;
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr,
            #[allow(unreachable_patterns)]
            _ => return Err(Error::Service("expected an ip listener".into())),
        };

        let server = Arc::new(server);
        let metrics = Arc::new(Metrics {
            per_label: Mutex::new(vec![0; model.architecture().num_classes]),
            ..Metrics::default()
        });
        let shutdown = Arc::new(AtomicBool::new(false));
        let model_id = options
            .model_id
            .clone()
            .unwrap_or_else(|| format!("mlp-{}", model.parameter_digest()));
        let shared = Arc::new(ServerState {
            model,
            model_id,
            expose_scores: options.expose_scores,
            log_requests: options.log_requests,
            metrics: Arc::clone(&metrics),
        });

        let workers = options.workers.max(1);
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            let server = Arc::clone(&server);
            let state = Arc::clone(&shared);
            let shutdown = Arc::clone(&shutdown);
            handles.push(std::thread::spawn(move || {
                while !shutdown.load(Ordering::SeqCst) {
                    match server.recv() {
                        Ok(request) => handle_request(request, &state),
                        Err(_) => break, // unblocked for shutdown
                    }
                }
            }));
        }

        Ok(PredictionServer {
            addr,
            server,
            metrics,
            shutdown,
            handles,
        })
    }

    /// Loads a model file and serves it.
    pub fn start_from_file(
        path: impl AsRef<Path>,
        bind_addr: &str,
        options: ServeOptions,
    ) -> Result<Self> {
        let model = TrainedModel::load(path)?;
        PredictionServer::start(model, bind_addr, options)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL of the service (`http://host:port`).
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            requests_total: self.metrics.requests.load(Ordering::SeqCst),
            predict_success_total: self.metrics.predict_success.load(Ordering::SeqCst),
            predict_errors_total: self.metrics.predict_errors.load(Ordering::SeqCst),
            per_label: self.metrics.per_label.lock().expect("metrics lock").clone(),
        }
    }

    /// Blocks the calling thread for the lifetime of the server.
    pub fn join(mut self) {
        for handle in self.handles.drain(..) {
            handle.join().ok();
        }
    }

    /// Stops accepting requests and joins the workers.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for _ in 0..self.handles.len() {
            self.server.unblock();
        }
        for handle in self.handles.drain(..) {
            handle.join().ok();
        }
    }
}

impl Drop for PredictionServer {
    fn drop(&mut self) {
        self.stop();
    }
}

struct ServerState {
    model: TrainedModel,
    model_id: String,
    expose_scores: bool,
    log_requests: bool,
    metrics: Arc<Metrics>,
}

fn handle_request(mut request: tiny_http::Request, state: &ServerState) {
    let request_id = state.metrics.requests.fetch_add(1, Ordering::SeqCst) + 1;
    let method = request.method().to_string();
    let path = request.url().to_string();
    let started = std::time::Instant::now();

    let (status, body) = route(&mut request, state, request_id);

    if state.log_requests {
        eprintln!(
            "{{\"request_id\":{request_id},\"method\":\"{method}\",\"path\":\"{path}\",\
             \"status\":{status},\"duration_us\":{}}}",
            started.elapsed().as_micros()
        );
    }

    let content_type = if path == "/metrics" && status == 200 {
        "text/plain; charset=utf-8"
    } else {
        "application/json"
    };
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], content_type.as_bytes())
        .expect("static header");
    let response = tiny_http::Response::from_string(body)
        .with_status_code(status)
        .with_header(header);
    request.respond(response).ok();
}

fn route(request: &mut tiny_http::Request, state: &ServerState, request_id: u64) -> (u16, String) {
    match (request.method().as_str(), request.url()) {
        ("POST", "/predict") => predict_route(request, state, request_id),
        ("GET", "/healthz") => (200, "{\"status\":\"ok\"}".to_string()),
        ("GET", "/metrics") => (200, render_metrics(&state.metrics)),
        _ => error_body(404, "no such endpoint", request_id),
    }
}

fn predict_route(
    request: &mut tiny_http::Request,
    state: &ServerState,
    request_id: u64,
) -> (u16, String) {
    let mut body = String::new();
    if let Err(e) = request.as_reader().read_to_string(&mut body) {
        state.metrics.predict_errors.fetch_add(1, Ordering::SeqCst);
        return error_body(400, &format!("unreadable body: {e}"), request_id);
    }
    let parsed: PredictRequest = match serde_json::from_str(&body) {
        Ok(parsed) => parsed,
        Err(e) => {
            state.metrics.predict_errors.fetch_add(1, Ordering::SeqCst);
            return error_body(400, &format!("malformed request: {e}"), request_id);
        }
    };

    match state.model.predict(&parsed.features) {
        Ok((label, scores)) => {
            state.metrics.predict_success.fetch_add(1, Ordering::SeqCst);
            if let Ok(mut hist) = state.metrics.per_label.lock() {
                if label < hist.len() {
                    hist[label] += 1;
                }
            }
            let response = PredictResponse {
                label,
                scores: state.expose_scores.then_some(scores),
                model_id: state.model_id.clone(),
            };
            (200, serde_json::to_string(&response).expect("serializable"))
        }
        Err(e @ (Error::DimensionMismatch { .. } | Error::NonFinite(_))) => {
            state.metrics.predict_errors.fetch_add(1, Ordering::SeqCst);
            error_body(422, &e.to_string(), request_id)
        }
        Err(e) => {
            state.metrics.predict_errors.fetch_add(1, Ordering::SeqCst);
            error_body(500, &e.to_string(), request_id)
        }
    }
}

fn error_body(status: u16, message: &str, request_id: u64) -> (u16, String) {
    let body = ErrorResponse {
        error: message.to_string(),
        request_id,
    };
    (status, serde_json::to_string(&body).expect("serializable"))
}

fn render_metrics(metrics: &Metrics) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "requests_total {}\n",
        metrics.requests.load(Ordering::SeqCst)
    ));
    out.push_str(&format!(
        "predict_success_total {}\n",
        metrics.predict_success.load(Ordering::SeqCst)
    ));
    out.push_str(&format!(
        "predict_errors_total {}\n",
        metrics.predict_errors.load(Ordering::SeqCst)
    ));
    if let Ok(hist) = metrics.per_label.lock() {
        for (label, count) in hist.iter().enumerate() {
            out.push_str(&format!("predict_label_total{{label=\"{label}\"}} {count}\n"));
        }
    }
    out
}

/// A remote prediction endpoint seen as a black-box target.
pub struct RemoteTarget {
    agent: ureq::Agent,
    predict_url: String,
    retries: u32,
}

/// Wraps `endpoint_url` (either the service base URL or the full
/// `/predict` URL) as a queryable target with per-request `timeout` and up
/// to `retries` extra attempts on transport errors.
pub fn remote_target(endpoint_url: &str, timeout: Duration, retries: u32) -> Result<RemoteTarget> {
    if !endpoint_url.starts_with("http://") && !endpoint_url.starts_with("https://") {
        return Err(Error::InvalidConfig(format!(
            "endpoint url must be http(s): {endpoint_url:?}"
        )));
    }
    let base = endpoint_url.trim_end_matches('/');
    let predict_url = if base.ends_with("/predict") {
        base.to_string()
    } else {
        format!("{base}/predict")
    };
    let config = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build();
    Ok(RemoteTarget {
        agent: config.into(),
        predict_url,
        retries,
    })
}

impl BlackBoxTarget for RemoteTarget {
    fn query(&self, features: &[f64]) -> Result<usize> {
        let request = PredictRequest {
            features: features.to_vec(),
        };
        let mut last_transport_error = None;
        for _ in 0..=self.retries {
            match self.agent.post(&self.predict_url).send_json(&request) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if (200..300).contains(&status) {
                        let parsed: PredictResponse =
                            response.body_mut().read_json().map_err(|e| {
                                Error::Query(format!("invalid prediction body: {e}"))
                            })?;
                        return Ok(parsed.label);
                    }
                    // a 4xx/5xx is an answered request: no retry
                    let body = response
                        .body_mut()
                        .read_to_string()
                        .unwrap_or_else(|_| String::from("<unreadable>"));
                    return Err(Error::Query(format!(
                        "endpoint answered {status}: {body}"
                    )));
                }
                Err(e) => last_transport_error = Some(e.to_string()),
            }
        }
        Err(Error::Query(format!(
            "transport failed after {} attempts: {}",
            self.retries + 1,
            last_transport_error.unwrap_or_default()
        )))
    }
}
