//! Reward scoring over HTTP.
//!
//! `POST /v1/score` scores a batch of model outputs against ground-truth
//! actions; `GET /healthz` reports liveness and a digest of the effective
//! configuration. Handlers share only immutable state, so identical request
//! bodies always produce identical response bodies. Scoring time is reported
//! in the `x-scoring-time-us` header to keep bodies reproducible.

pub mod api;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use shopsim::RewardConfig;

pub use api::{
    parse_request, score_item, score_request, ItemError, ItemErrorBody, ItemErrorKind, ItemResult, RequestError,
    ScoreItem, ScoreRequest, ScoreResponse, ScoredItem,
};

pub const SERVICE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TIMING_HEADER: &str = "x-scoring-time-us";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub max_batch: usize,
    pub max_body_bytes: usize,
    /// Runtime worker threads; `None` uses one per core.
    pub workers: Option<usize>,
    pub reward: RewardConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            max_batch: 1024,
            max_body_bytes: 8 * 1024 * 1024,
            workers: None,
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.max_batch == 0 {
            return Err(ServiceError::Config("max_batch must be at least 1".into()));
        }
        if self.max_body_bytes == 0 {
            return Err(ServiceError::Config("max_body_bytes must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(ServiceError::Config("workers must be at least 1".into()));
        }
        self.reward
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Hex sha256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

struct AppState {
    config: ServiceConfig,
    digest: String,
}

fn error_response(status: StatusCode, err: &RequestError) -> Response {
    let mut body = json!({ "error": { "message": err.to_string() } });
    if let RequestError::GroundTruth { index, .. } = err {
        body["error"]["index"] = json!(index);
    }
    (status, Json(body)).into_response()
}

fn status_for(err: &RequestError) -> StatusCode {
    match err {
        RequestError::Malformed(_) | RequestError::EmptyBatch | RequestError::Overrides(_) => StatusCode::BAD_REQUEST,
        RequestError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
        RequestError::GroundTruth { .. } => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split(';').next())
        .is_some_and(|m| {
            let m = m.trim();
            m.eq_ignore_ascii_case("application/json") || m.to_ascii_lowercase().ends_with("+json")
        })
}

async fn score(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    if !is_json(&headers) {
        let err = RequestError::Malformed("content-type must be application/json".into());
        return error_response(StatusCode::UNSUPPORTED_MEDIA_TYPE, &err);
    }
    let started = Instant::now();
    let worker_state = Arc::clone(&state);
    let outcome = tokio::task::spawn_blocking(move || {
        let request = parse_request(&body)?;
        score_request(&request, &worker_state.config.reward, worker_state.config.max_batch)
    })
    .await
    .expect("scoring task does not panic");

    match outcome {
        Ok(results) => {
            let elapsed = started.elapsed().as_micros().to_string();
            tracing::debug!(items = results.len(), elapsed_us = %elapsed, "scored batch");
            let body = ScoreResponse {
                service_version: SERVICE_VERSION.to_string(),
                results,
            };
            let mut resp = Json(body).into_response();
            resp.headers_mut()
                .insert(TIMING_HEADER, HeaderValue::from_str(&elapsed).expect("digits are a valid header"));
            resp
        }
        Err(err) => {
            tracing::info!(error = %err, "rejected batch");
            error_response(status_for(&err), &err)
        }
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "version": SERVICE_VERSION,
        "config_digest": state.digest,
    }))
}

/// The service routes, without binding a socket.
pub fn router(config: ServiceConfig) -> Router {
    let limit = config.max_body_bytes;
    let state = Arc::new(AppState {
        digest: config.digest(),
        config,
    });
    Router::new()
        .route("/v1/score", post(score))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves on an already bound listener until `shutdown` resolves. In-flight
/// requests finish before this returns.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    config.validate()?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, digest = %config.digest(), "reward service listening");
    axum::serve(listener, router(config))
        .with_graceful_shutdown(shutdown)
        .await?;
    tracing::info!("reward service stopped");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown signal received");
}

/// Binds `host:port` and serves until SIGINT or SIGTERM, on a runtime with
/// `workers` threads. Blocks the calling thread.
pub fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    config.validate()?;
    let mut builder = tokio::runtime::Builder::new_multi_thread();
    if let Some(w) = config.workers {
        builder.worker_threads(w);
    }
    let runtime = builder.enable_all().build()?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", config.host, config.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| ServiceError::Bind { addr, source })?;
        serve_on(listener, config, shutdown_signal()).await
    })
}
