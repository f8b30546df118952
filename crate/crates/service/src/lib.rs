//! Local HTTP facade over the evaluation pipeline.
//!
//! | method | path              | body                         |
//! |--------|-------------------|------------------------------|
//! | GET    | /api/maps         |                              |
//! | GET    | /api/maps/{id}    |                              |
//! | POST   | /api/evaluate     | scenario (TOML, or JSON)     |
//! | POST   | /api/bev          | scenario; `?source=&layer=`  |
//! | GET    | /api/jobs/{id}    |                              |
//!
//! Scenario bodies are TOML unless the content type mentions json. Map
//! paths inside a scenario resolve against the map directory. Requests that
//! take longer than the configured threshold answer 202 with a job id.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use infraplace_core::{Evaluator, PipelineError};
use infraplace_io::heatmap::{HeatmapLayer, HeatmapSlice, HeatmapSource};
use infraplace_io::{load_map, parse_scenario, sniff_kind, DocError, DocKind, Scenario, ScenarioDoc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use uuid::Uuid;

pub const DEFAULT_PORT: u16 = 8321;
const LOG_CAPACITY: usize = 1000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub maps_dir: PathBuf,
    /// Evaluations still running after this long are handed off to a job.
    pub async_threshold: Duration,
}

impl ServiceConfig {
    pub fn new(maps_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            maps_dir: maps_dir.into(),
            async_threshold: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub method: String,
    pub path: String,
    pub status: u16,
    pub millis: f64,
}

#[derive(Debug, Clone)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<DocError> for ApiError {
    // Anything wrong with the payload or what it references is the client's
    // problem.
    fn from(e: DocError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Clone)]
enum Job {
    Pending,
    Done(Result<Value, ApiError>),
}

/// Shared state: the map directory, a read-mostly evaluator cache and the
/// job table. Cached evaluators are never mutated after publication.
pub struct AppState {
    config: ServiceConfig,
    cache: RwLock<HashMap<String, Arc<Evaluator>>>,
    jobs: Mutex<HashMap<Uuid, Job>>,
    log: Mutex<Vec<LogEntry>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            config,
            cache: RwLock::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn cached_scenes(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn request_log(&self) -> Vec<LogEntry> {
        self.log.lock().unwrap().clone()
    }

    fn evaluator_for(&self, s: &Scenario) -> Result<Arc<Evaluator>, ApiError> {
        let key = scene_key(s);
        if let Some(e) = self.cache.read().unwrap().get(&key) {
            return Ok(e.clone());
        }
        // Build outside the lock; if two requests race, the first insert wins.
        let built = Arc::new(s.evaluator()?);
        Ok(self.cache.write().unwrap().entry(key).or_insert(built).clone())
    }
}

/// Evaluators depend on the map, the ROI and the traffic model.
fn scene_key(s: &Scenario) -> String {
    let mut h = Sha256::new();
    h.update(s.map_doc.to_toml().as_bytes());
    h.update(serde_json::to_vec(&s.roi).expect("roi serializes"));
    h.update(serde_json::to_vec(&s.traffic).expect("traffic serializes"));
    hex::encode(h.finalize())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/maps", get(list_maps))
        .route("/api/maps/{id}", get(get_map))
        .route("/api/evaluate", post(evaluate))
        .route("/api/bev", post(bev))
        .route("/api/jobs/{id}", get(job_status))
        .layer(middleware::from_fn_with_state(state.clone(), record))
        .with_state(state)
}

async fn record(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let method = req.method().to_string();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let resp = next.run(req).await;
    let mut log = state.log.lock().unwrap();
    if log.len() == LOG_CAPACITY {
        log.remove(0);
    }
    log.push(LogEntry {
        method,
        path,
        status: resp.status().as_u16(),
        millis: start.elapsed().as_secs_f64() * 1e3,
    });
    resp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDescriptor {
    pub id: String,
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommended_roi_radius: Option<f64>,
    pub regions: usize,
    pub lanes: usize,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Describes every map document in `dir`, sorted by file name. Files that
/// fail validation are listed with `valid: false`; scenarios are skipped.
pub fn describe_maps(dir: &Path) -> Vec<MapDescriptor> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for path in files {
        let id = path.file_stem().unwrap().to_string_lossy().into_owned();
        let file = path.file_name().unwrap().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&path).unwrap_or_default();
        if matches!(sniff_kind(&text), Ok(DocKind::Scenario)) {
            continue;
        }
        out.push(match load_map(&path) {
            Ok((doc, map)) => MapDescriptor {
                id,
                file,
                name: doc.name.clone(),
                center: Some(doc.center),
                recommended_roi_radius: doc.recommended_roi_radius,
                regions: map.regions().len(),
                lanes: map.lanes().len(),
                valid: true,
                error: None,
            },
            Err(e) => MapDescriptor {
                id,
                file,
                name: None,
                center: None,
                recommended_roi_radius: None,
                regions: 0,
                lanes: 0,
                valid: false,
                error: Some(e.to_string()),
            },
        });
    }
    out
}

async fn list_maps(State(state): State<Arc<AppState>>) -> Json<Vec<MapDescriptor>> {
    let dir = state.config.maps_dir.clone();
    Json(tokio::task::spawn_blocking(move || describe_maps(&dir)).await.unwrap_or_default())
}

async fn get_map(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    if id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(ApiError::bad_request("invalid map id"));
    }
    let path = state.config.maps_dir.join(format!("{id}.toml"));
    match load_map(&path) {
        Ok((doc, _)) => Ok(Json(doc).into_response()),
        Err(DocError::NotFound(_)) => Err(ApiError {
            status: StatusCode::NOT_FOUND,
            message: format!("no map named {id:?}"),
        }),
        Err(e) => Err(e.into()),
    }
}

fn scenario_from(state: &AppState, headers: &HeaderMap, body: &[u8]) -> Result<Scenario, ApiError> {
    let text = std::str::from_utf8(body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("json"));
    let text = if is_json {
        let doc: ScenarioDoc =
            serde_json::from_str(text).map_err(|e| ApiError::bad_request(format!("parse error: {e}")))?;
        doc.to_toml()
    } else {
        text.to_string()
    };
    Ok(parse_scenario(&text, &state.config.maps_dir)?)
}

/// Runs `work` on the blocking pool; answers with its result if it finishes
/// within the threshold, otherwise 202 and a job id.
async fn run_job<F>(state: Arc<AppState>, work: F) -> Response
where
    F: FnOnce() -> Result<Value, ApiError> + Send + 'static,
{
    let id = Uuid::new_v4();
    state.jobs.lock().unwrap().insert(id, Job::Pending);
    let (tx, rx) = tokio::sync::oneshot::channel();
    let worker_state = state.clone();
    tokio::task::spawn_blocking(move || {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(work)).unwrap_or_else(|_| {
            Err(ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                message: "evaluation panicked".into(),
            })
        });
        if let Some(slot) = worker_state.jobs.lock().unwrap().get_mut(&id) {
            *slot = Job::Done(result.clone());
        }
        let _ = tx.send(result);
    });
    match tokio::time::timeout(state.config.async_threshold, rx).await {
        Ok(Ok(result)) => {
            state.jobs.lock().unwrap().remove(&id);
            match result {
                Ok(v) => Json(v).into_response(),
                Err(e) => e.into_response(),
            }
        }
        Ok(Err(_)) => ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: "evaluation worker vanished".into(),
        }
        .into_response(),
        Err(_) => (
            StatusCode::ACCEPTED,
            Json(json!({ "job": id.to_string(), "status": "pending", "poll": format!("/api/jobs/{id}") })),
        )
            .into_response(),
    }
}

async fn evaluate(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let scenario = match scenario_from(&state, &headers, &body) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    let st = state.clone();
    run_job(state, move || {
        let evaluator = st.evaluator_for(&scenario)?;
        let evaluation = evaluator.evaluate(&scenario.placement, &scenario.weights)?;
        Ok(serde_json::to_value(&evaluation.report).expect("reports serialize"))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct BevQuery {
    source: Option<String>,
    layer: Option<String>,
}

async fn bev(
    State(state): State<Arc<AppState>>,
    Query(q): Query<BevQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let source_name = q.source.unwrap_or_else(|| "visibility".into());
    let layer_name = q.layer.unwrap_or_else(|| "max".into());
    let Some(source) = HeatmapSource::parse(&source_name) else {
        return ApiError::bad_request(format!("source: expected visibility, occupancy or occlusion, got {source_name:?}"))
            .into_response();
    };
    let Some(layer) = HeatmapLayer::parse(&layer_name) else {
        return ApiError::bad_request(format!("layer: expected an index or \"max\", got {layer_name:?}")).into_response();
    };
    let scenario = match scenario_from(&state, &headers, &body) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    let st = state.clone();
    run_job(state, move || {
        let evaluator = st.evaluator_for(&scenario)?;
        let evaluation = evaluator.evaluate(&scenario.placement, &scenario.weights)?;
        let grid = evaluator.grid();
        let slice = HeatmapSlice::from_evaluation(grid, &evaluation, source, layer)?;
        let origin = grid.origin();
        let rows: Vec<&[f64]> = slice.values.chunks(slice.width).collect();
        Ok(json!({
            "source": source,
            "layer": layer,
            "width": slice.width,
            "height": slice.height,
            // xy of the grid's lower-left corner; row 0 of `values` is the top (max y) row
            "origin": [origin.x, origin.y],
            "voxel_edge": grid.voxel_edge(),
            "values": rows,
        }))
    })
    .await
}

async fn job_status(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let job = Uuid::parse_str(&id)
        .ok()
        .and_then(|u| state.jobs.lock().unwrap().get(&u).cloned());
    match job {
        None => ApiError {
            status: StatusCode::NOT_FOUND,
            message: format!("no job {id}"),
        }
        .into_response(),
        Some(Job::Pending) => Json(json!({ "job": id, "status": "pending" })).into_response(),
        Some(Job::Done(Ok(v))) => Json(json!({ "job": id, "status": "done", "result": v })).into_response(),
        Some(Job::Done(Err(e))) => Json(json!({
            "job": id,
            "status": "failed",
            "code": e.status.as_u16(),
            "error": e.message,
        }))
        .into_response(),
    }
}

pub async fn serve(port: u16, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    axum::serve(listener, router(AppState::new(config))).await
}

/// Runs the service on its own runtime until the process is stopped.
pub fn serve_blocking(port: u16, maps_dir: PathBuf) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(port, ServiceConfig::new(maps_dir)))
}
