//! HTTP front end: `GET /{api_key}/{place}` returns the canonical figure JSON,
//! `GET /health` reports liveness and cache occupancy.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{middleware, Json, Router};
use tokio::sync::Semaphore;
use urban3d_core::pipeline::{CachedFigure, Failure, Pipeline, PipelineError};
use urban3d_core::providers::{normalize_place, ProviderError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_MAX_CONCURRENT: usize = 4;
/// Longest accepted place segment, in bytes.
const MAX_PLACE_LEN: usize = 256;

/// `ModelStats` caption of the served figure.
pub const STATS_HEADER: &str = "x-model-stats";
/// `hit` or `miss`.
pub const CACHE_HEADER: &str = "x-cache";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub stage: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, stage: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            stage: stage.to_string(),
            message: message.into(),
        }
    }

    pub fn body(&self) -> serde_json::Value {
        serde_json::json!({
            "status": self.status.as_u16(),
            "stage": self.stage,
            "message": self.message,
        })
    }
}

impl From<&PipelineError> for ApiError {
    fn from(e: &PipelineError) -> Self {
        let status = match &e.failure {
            Failure::Provider(p) => match p {
                ProviderError::NotFound(_) => StatusCode::NOT_FOUND,
                ProviderError::InvalidInput(_) => StatusCode::BAD_REQUEST,
                ProviderError::BboxTooLarge { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                ProviderError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
                _ => StatusCode::BAD_GATEWAY,
            },
            _ => StatusCode::BAD_GATEWAY,
        };
        ApiError::new(status, e.stage.as_str(), e.failure.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServiceOptions {
    /// End-to-end budget per figure request, queueing included.
    pub timeout: Duration,
    pub max_concurrent: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_concurrent: DEFAULT_MAX_CONCURRENT,
        }
    }
}

#[derive(Clone)]
struct AppState {
    pipeline: Arc<Pipeline>,
    permits: Arc<Semaphore>,
    timeout: Duration,
}

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    router_with(pipeline, ServiceOptions::default())
}

pub fn router_with(pipeline: Arc<Pipeline>, opts: ServiceOptions) -> Router {
    let state = AppState {
        pipeline,
        permits: Arc::new(Semaphore::new(opts.max_concurrent.max(1))),
        timeout: opts.timeout,
    };
    Router::new()
        .route("/health", get(health))
        .route("/{api_key}/{place}", get(figure))
        .layer(middleware::map_response(allow_any_origin))
        .with_state(state)
}

async fn allow_any_origin(mut resp: Response) -> Response {
    resp.headers_mut()
        .insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    resp
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "cache_entries": st.pipeline.cache().len()}))
}

fn figure_response(fig: CachedFigure, from_cache: bool) -> Response {
    let mut resp = (
        StatusCode::OK,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        fig.bytes.to_vec(),
    )
        .into_response();
    let h = resp.headers_mut();
    if let Ok(v) = HeaderValue::from_str(&fig.stats.to_string()) {
        h.insert(STATS_HEADER, v);
    }
    h.insert(
        CACHE_HEADER,
        HeaderValue::from_static(if from_cache { "hit" } else { "miss" }),
    );
    resp
}

fn check_place(place: &str) -> Result<(), ApiError> {
    let bad = |m: &str| ApiError::new(StatusCode::BAD_REQUEST, "geocode", m);
    if place.len() > MAX_PLACE_LEN {
        return Err(bad("place name too long"));
    }
    if place.chars().any(char::is_control) {
        return Err(bad("place name contains control characters"));
    }
    if normalize_place(place).is_empty() {
        return Err(bad("empty place name"));
    }
    Ok(())
}

async fn figure(State(st): State<AppState>, Path((api_key, place)): Path<(String, String)>) -> Response {
    if let Err(e) = check_place(&place) {
        return e.into_response();
    }
    let pipeline = st.pipeline.clone();
    if let Some(hit) = pipeline.cache().get(&pipeline.cache_key(&place)) {
        return figure_response(hit, true);
    }
    let work = async move {
        let permit = st.permits.clone().acquire_owned().await.expect("semaphore is never closed");
        tokio::task::spawn_blocking(move || {
            let _permit = permit;
            pipeline.generate_cached(&place, &api_key)
        })
        .await
    };
    match tokio::time::timeout(st.timeout, work).await {
        Err(_) => ApiError::new(StatusCode::GATEWAY_TIMEOUT, "pipeline", "request exceeded the time budget").into_response(),
        Ok(Err(join)) => {
            log::error!("pipeline task failed: {join}");
            ApiError::new(StatusCode::BAD_GATEWAY, "pipeline", "internal pipeline failure").into_response()
        }
        Ok(Ok(Err(e))) => {
            log::warn!("request failed: {e}");
            ApiError::from(&e).into_response()
        }
        Ok(Ok(Ok(gen))) => figure_response(gen.figure, gen.from_cache),
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, pipeline: Arc<Pipeline>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(pipeline)).await
}
