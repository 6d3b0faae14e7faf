//! HTTP/JSON API over the snapshot store.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::header::{ACCEPT, CONTENT_TYPE};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thermotwin_core::meteo::{fmt_ts, load_meteo_csv, parse_ts, MeteoSeries};
use thermotwin_core::routing::{
    build_grid_graph, recommend_routes, shortest_path, Algorithm, RouteResult, RoutingError, DEFAULT_ALPHAS,
};
use thermotwin_core::scene::{load_scene, GridScene};
use thermotwin_core::stvit::{decode_checkpoint, predict_region, Bbox, Checkpoint, StVitError};
use tokio::sync::Mutex;
use tower_http::cors::{Any, CorsLayer};

use crate::store::{NewSnapshot, Snapshot, SnapshotKind, SnapshotMeta, Store, StoreError};
use crate::summary::{bands, summarize, BandInfo, SummaryRow};

pub const SCENE_DIR: &str = "scene";
pub const METEO_FILE: &str = "meteo.csv";
pub const MODEL_FILE: &str = "model.stvt";
pub const GRD_MEDIA_TYPE: &str = "application/x-grd";
pub const DEFAULT_FORECAST_TIMEOUT: Duration = Duration::from_secs(120);

/// Error body `{code, message}` with its status.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            StoreError::NoFrame { .. } => Self::new(StatusCode::NOT_FOUND, "no_frame", e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string()),
        }
    }
}

impl From<RoutingError> for ApiError {
    fn from(e: RoutingError) -> Self {
        match e {
            RoutingError::NoRoute { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "no_route", e.to_string()),
            RoutingError::NotWalkable { .. } => Self::new(StatusCode::BAD_REQUEST, "not_walkable", e.to_string()),
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// A loaded forecaster and the hash of its checkpoint bytes.
pub struct Model {
    pub checkpoint: Checkpoint,
    pub hash: String,
}

impl Model {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StVitError> {
        Ok(Self {
            checkpoint: decode_checkpoint(bytes)?,
            hash: hex::encode(Sha256::digest(bytes)),
        })
    }
}

pub struct AppState {
    pub store: Arc<Store>,
    pub scene: Arc<GridScene>,
    pub meteo: Option<Arc<MeteoSeries>>,
    pub model: Option<Arc<Model>>,
    pub forecast_timeout: Duration,
    /// Forecasts publish one at a time.
    pub forecast_lock: Mutex<()>,
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/api/snapshots", get(list_snapshots))
        .route("/api/heatmap", get(heatmap))
        .route("/api/summary", get(summary))
        .route("/api/timing", get(timing))
        .route("/api/forecast", post(forecast))
        .route("/api/route", post(route))
        .route("/api/routes", post(routes))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(cors)
        .with_state(state)
}

async fn list_snapshots(State(state): State<SharedState>) -> Json<Vec<SnapshotMeta>> {
    Json(state.store.list())
}

fn parse_time(s: &str) -> ApiResult<chrono::DateTime<chrono::Utc>> {
    parse_ts(s).ok_or_else(|| ApiError::bad_request(format!("bad timestamp `{s}`")))
}

#[derive(Debug, Deserialize)]
pub struct FrameQuery {
    pub snapshot: String,
    pub t: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub snapshot: String,
    pub time: String,
    pub nrows: usize,
    pub ncols: usize,
    pub cell_size: f64,
    pub bbox: Bbox,
    /// Extremes over unmasked cells, for colour scaling.
    pub min: f64,
    pub max: f64,
    /// Row-major values; masked cells are `null`.
    pub values: Vec<Option<f32>>,
}

fn frame_range(snap: &Snapshot, k: usize) -> (f64, f64) {
    let mask = snap.stack.mask().as_slice();
    snap.stack.frames()[k]
        .as_slice()
        .iter()
        .zip(mask)
        .filter(|(v, &m)| m && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v as f64), hi.max(v as f64))
        })
}

fn wants_grd(headers: &HeaderMap) -> bool {
    headers
        .get_all(ACCEPT)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .any(|v| v.contains(GRD_MEDIA_TYPE) || v.contains("application/octet-stream"))
}

async fn heatmap(
    State(state): State<SharedState>,
    headers: HeaderMap,
    query: Result<Query<FrameQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let snap = state.store.get(&q.snapshot)?;
    let k = snap.frame_index(parse_time(&q.t)?)?;
    let (min, max) = frame_range(&snap, k);
    if wants_grd(&headers) {
        let mut resp = snap.frame_bytes[k].clone().into_response();
        let h = resp.headers_mut();
        h.insert(CONTENT_TYPE, HeaderValue::from_static(GRD_MEDIA_TYPE));
        h.insert("x-utci-min", HeaderValue::from_str(&min.to_string()).expect("ascii"));
        h.insert("x-utci-max", HeaderValue::from_str(&max.to_string()).expect("ascii"));
        return Ok(resp);
    }
    let frame = &snap.stack.frames()[k];
    let mask = snap.stack.mask().as_slice();
    let values = frame
        .as_slice()
        .iter()
        .zip(mask)
        .map(|(&v, &m)| (m && v.is_finite()).then_some(v))
        .collect();
    Ok(Json(Heatmap {
        snapshot: snap.meta.id.clone(),
        time: fmt_ts(snap.stack.times()[k]),
        nrows: frame.nrows(),
        ncols: frame.ncols(),
        cell_size: snap.meta.cell_size,
        bbox: snap.meta.bbox,
        min,
        max,
        values,
    })
    .into_response())
}

#[derive(Debug, Deserialize)]
pub struct SnapshotQuery {
    pub snapshot: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryResponse {
    pub snapshot: String,
    pub bands: Vec<BandInfo>,
    pub rows: Vec<SummaryRow>,
}

async fn summary(
    State(state): State<SharedState>,
    query: Result<Query<SnapshotQuery>, QueryRejection>,
) -> ApiResult<Json<SummaryResponse>> {
    let Query(q) = query?;
    let snap = state.store.get(&q.snapshot)?;
    Ok(Json(SummaryResponse {
        snapshot: snap.meta.id.clone(),
        bands: bands(),
        rows: summarize(&snap.stack),
    }))
}

/// Cost of producing one hour of frames for the most recent forecast and
/// for the simulation it started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub forecast: Option<String>,
    pub simulated: Option<String>,
    pub simulate_seconds_per_hour: Option<f64>,
    pub predict_seconds_per_hour: Option<f64>,
    /// Simulator cost over model cost for the same number of hours.
    pub speed_ratio: Option<f64>,
}

fn per_hour(meta: &SnapshotMeta) -> Option<f64> {
    meta.seconds.filter(|_| !meta.times.is_empty()).map(|s| s / meta.times.len() as f64)
}

async fn timing(State(state): State<SharedState>) -> Json<TimingReport> {
    let metas = state.store.list();
    let forecast = metas.iter().rev().find(|m| m.kind == SnapshotKind::Predicted);
    let simulated = forecast
        .and_then(|f| f.parent.as_ref())
        .and_then(|p| metas.iter().find(|m| &m.id == p))
        .or_else(|| metas.iter().rev().find(|m| m.kind == SnapshotKind::Simulated));
    let sim = simulated.and_then(per_hour);
    let pred = forecast.and_then(per_hour);
    Json(TimingReport {
        forecast: forecast.map(|m| m.id.clone()),
        simulated: simulated.map(|m| m.id.clone()),
        simulate_seconds_per_hour: sim,
        predict_seconds_per_hour: pred,
        speed_ratio: sim.zip(pred).filter(|(_, p)| *p > 0.0).map(|(s, p)| s / p),
    })
}

/// Accepts `"r0,c0,r1,c1"` or `{r0, c0, r1, c1}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BboxInput {
    Text(String),
    Fields(Bbox),
}

impl BboxInput {
    fn resolve(self) -> ApiResult<Bbox> {
        match self {
            BboxInput::Fields(b) => Ok(b),
            BboxInput::Text(s) => s.parse().map_err(ApiError::bad_request),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ForecastRequest {
    pub snapshot: String,
    pub bbox: BboxInput,
    /// Last observed hour; defaults to the snapshot's final frame.
    #[serde(default)]
    pub t0: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub id: String,
    pub meta: SnapshotMeta,
}

async fn forecast(
    State(state): State<SharedState>,
    body: Result<Json<ForecastRequest>, JsonRejection>,
) -> ApiResult<Json<ForecastResponse>> {
    let Json(req) = body?;
    let bbox = req.bbox.resolve()?;
    let source = state.store.get(&req.snapshot)?;
    let model = state
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "no_model", "no model loaded"))?;
    let meteo = state
        .meteo
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "no_meteo", "no meteorology loaded"))?;
    if source.meta.bbox != Bbox::full(state.scene.nrows(), state.scene.ncols()) {
        return Err(ApiError::bad_request("forecasts start from a snapshot covering the whole scene"));
    }
    let t0 = match &req.t0 {
        Some(s) => parse_time(s)?,
        None => *source
            .stack
            .times()
            .last()
            .ok_or_else(|| ApiError::bad_request("source snapshot is empty"))?,
    };
    let issue = source.frame_index(t0)? + 1;
    let m_issue = meteo
        .position(t0)
        .ok_or_else(|| ApiError::bad_request(format!("no meteorology at {}", fmt_ts(t0))))?
        + 1;

    let _guard = state.forecast_lock.lock().await;
    let cancelled = Arc::new(AtomicBool::new(false));
    let job = {
        let (state, cancelled) = (state.clone(), cancelled.clone());
        tokio::task::spawn_blocking(move || -> ApiResult<Arc<Snapshot>> {
            let ck = &model.checkpoint;
            let stats = ck.header.norm_stats.as_ref().ok_or_else(|| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "forecast", "model has no normalization statistics")
            })?;
            let region = predict_region(
                &ck.params,
                &ck.header.config,
                stats,
                &state.scene,
                &source.stack.slice(0, issue),
                &meteo.slice(0, m_issue),
                bbox,
            )
            .map_err(|e| match e {
                StVitError::Region(m) => ApiError::bad_request(m),
                e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "forecast", e.to_string()),
            })?;
            if cancelled.load(Ordering::SeqCst) {
                return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "forecast_timeout", "cancelled"));
            }
            let draft = NewSnapshot {
                kind: SnapshotKind::Predicted,
                stack: region.stack,
                bbox,
                cell_size: source.meta.cell_size,
                parent: Some(source.meta.id.clone()),
                seconds: Some(region.seconds),
                provenance: json!({
                    "model_sha256": model.hash,
                    "issued_at": fmt_ts(t0),
                    "config": ck.header.config,
                }),
            };
            Ok(state.store.publish(None, draft)?)
        })
    };
    match tokio::time::timeout(state.forecast_timeout, job).await {
        Ok(Ok(Ok(snap))) => Ok(Json(ForecastResponse {
            id: snap.meta.id.clone(),
            meta: snap.meta.clone(),
        })),
        Ok(Ok(Err(e))) => Err(e),
        Ok(Err(join)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "forecast", join.to_string())),
        Err(_) => {
            cancelled.store(true, Ordering::SeqCst);
            Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "forecast_timeout",
                format!("forecast exceeded {:?}", state.forecast_timeout),
            ))
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct RouteRequest {
    pub snapshot: String,
    pub t: String,
    pub origin: (usize, usize),
    pub destination: (usize, usize),
    pub alpha: f64,
    #[serde(default)]
    pub algorithm: Algorithm,
}

#[derive(Debug, Deserialize)]
pub struct RoutesRequest {
    pub snapshot: String,
    pub t: String,
    pub origin: (usize, usize),
    pub destination: (usize, usize),
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
}

fn frame_graph(state: &AppState, snapshot: &str, t: &str) -> ApiResult<thermotwin_core::routing::GridGraph> {
    let snap = state.store.get(snapshot)?;
    let k = snap.frame_index(parse_time(t)?)?;
    let b = snap.meta.bbox;
    let scene = state.scene.crop(b.r0, b.c0, b.nrows(), b.ncols());
    Ok(build_grid_graph(&scene, &snap.stack.frames()[k])?)
}

async fn route(
    State(state): State<SharedState>,
    body: Result<Json<RouteRequest>, JsonRejection>,
) -> ApiResult<Json<RouteResult>> {
    let Json(req) = body?;
    let graph = frame_graph(&state, &req.snapshot, &req.t)?;
    Ok(Json(shortest_path(&graph, req.origin, req.destination, req.alpha, req.algorithm)?))
}

async fn routes(
    State(state): State<SharedState>,
    body: Result<Json<RoutesRequest>, JsonRejection>,
) -> ApiResult<Json<Vec<RouteResult>>> {
    let Json(req) = body?;
    let graph = frame_graph(&state, &req.snapshot, &req.t)?;
    let alphas = req.alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
    Ok(Json(recommend_routes(&graph, req.origin, req.destination, &alphas)?))
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub data_dir: PathBuf,
    pub host: String,
    pub port: u16,
    /// Defaults to `model.stvt` in the data directory when present.
    pub model: Option<PathBuf>,
    pub forecast_timeout: Duration,
}

/// Loads `data_dir`: the scene, optional meteorology and model, and every
/// snapshot. At least one snapshot must exist.
pub fn load_state(config: &ServeConfig) -> anyhow::Result<SharedState> {
    let dir = &config.data_dir;
    let scene = load_scene(dir.join(SCENE_DIR)).with_context(|| format!("loading scene from {}", dir.display()))?;
    let meteo_path = dir.join(METEO_FILE);
    let meteo = if meteo_path.exists() {
        Some(Arc::new(load_meteo_csv(&meteo_path)?))
    } else {
        None
    };
    let model_path = config.model.clone().or_else(|| {
        let p = dir.join(MODEL_FILE);
        p.exists().then_some(p)
    });
    let model = match model_path {
        Some(p) => {
            let bytes = std::fs::read(&p).with_context(|| format!("reading model {}", p.display()))?;
            Some(Arc::new(Model::from_bytes(&bytes)?))
        }
        None => None,
    };
    let store = Store::open(dir)?;
    if store.list().is_empty() {
        bail!("no snapshots under {}", dir.join(crate::store::SNAPSHOT_DIR).display());
    }
    Ok(Arc::new(AppState {
        store: Arc::new(store),
        scene: Arc::new(scene),
        meteo,
        model,
        forecast_timeout: config.forecast_timeout,
        forecast_lock: Mutex::new(()),
    }))
}

/// Binds and serves until the process ends; `on_bound` sees the real address.
pub async fn serve(config: ServeConfig, on_bound: impl FnOnce(SocketAddr)) -> anyhow::Result<()> {
    let state = load_state(&config)?;
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port))
        .await
        .with_context(|| format!("binding {}:{}", config.host, config.port))?;
    let addr = listener.local_addr()?;
    on_bound(addr);
    let started = Instant::now();
    tracing::info!(%addr, snapshots = state.store.list().len(), "serving");
    axum::serve(listener, router(state)).await?;
    tracing::info!(uptime = ?started.elapsed(), "stopped");
    Ok(())
}
