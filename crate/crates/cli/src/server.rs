//! JSON-over-HTTP service under `/v1`, plus static serving of the UI bundle.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use toonscan_core::model::{Annotation, DefectClass, Label, Sample, Split};
use toonscan_core::pose::{composite_overlay, encode_png, TransformOp};
use toonscan_core::prompt::SampleMaterial;
use tower_http::services::ServeDir;

use crate::jobs::{JobManager, JobRequest};
use crate::workspace::{OpError, OpResult, Workspace};

/// Replayable responses of mutating requests, keyed by request id.
pub struct IdempotencyStore {
    path: PathBuf,
    seen: Mutex<HashMap<String, (u16, Value)>>,
}

#[derive(Serialize, Deserialize)]
struct IdemRecord {
    key: String,
    status: u16,
    body: Value,
}

impl IdempotencyStore {
    pub fn open(path: PathBuf) -> OpResult<Self> {
        let mut seen = HashMap::new();
        if let Ok(text) = fs::read_to_string(&path) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                if let Ok(r) = serde_json::from_str::<IdemRecord>(line) {
                    seen.insert(r.key, (r.status, r.body));
                }
            }
        }
        Ok(Self { path, seen: Mutex::new(seen) })
    }

    fn get(&self, key: &str) -> Option<(u16, Value)> {
        self.seen.lock().expect("idempotency map poisoned").get(key).cloned()
    }

    fn put(&self, key: String, status: u16, body: Value) {
        let rec = IdemRecord { key: key.clone(), status, body: body.clone() };
        let line = serde_json::to_string(&rec).expect("record serializes");
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            tracing::error!("cannot persist request record: {e}");
        }
        self.seen.lock().expect("idempotency map poisoned").insert(key, (status, body));
    }
}

#[derive(Clone)]
pub struct AppState {
    pub ws: Arc<Workspace>,
    pub jobs: Arc<JobManager>,
    pub idem: Arc<IdempotencyStore>,
}

impl AppState {
    pub fn new(ws: Workspace) -> OpResult<Self> {
        let jobs = JobManager::open(&ws.runs_dir)?;
        let idem = IdempotencyStore::open(ws.runs_dir.join("requests.ndjson"))?;
        Ok(Self { ws: Arc::new(ws), jobs: Arc::new(jobs), idem: Arc::new(idem) })
    }
}

pub struct ApiError(OpError);

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        ApiError(e)
    }
}

fn status_of(e: &OpError) -> StatusCode {
    match e {
        OpError::NotFound(_) => StatusCode::NOT_FOUND,
        OpError::Conflict(_) => StatusCode::CONFLICT,
        OpError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
        OpError::Failed(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(json!({"error": self.0.to_string()}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> OpResult<T> + Send + 'static) -> OpResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| OpError::Failed(format!("worker panicked: {e}")))?
}

fn request_id(headers: &HeaderMap) -> Option<String> {
    ["idempotency-key", "x-request-id"]
        .iter()
        .find_map(|h| headers.get(*h))
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

/// Runs a mutating operation once per request id; retries replay the
/// first response.
async fn mutate<T: Serialize + Send + 'static>(
    st: &AppState,
    headers: &HeaderMap,
    scope: String,
    ok: StatusCode,
    f: impl FnOnce() -> OpResult<T> + Send + 'static,
) -> Response {
    let key = request_id(headers).map(|id| format!("{scope} {id}"));
    if let Some((status, body)) = key.as_deref().and_then(|k| st.idem.get(k)) {
        let status = StatusCode::from_u16(status).unwrap_or(StatusCode::OK);
        return (status, Json(body)).into_response();
    }
    let (status, body) = match blocking(f).await {
        Ok(v) => (ok, serde_json::to_value(v).unwrap_or(Value::Null)),
        Err(e) => (status_of(&e), json!({"error": e.to_string()})),
    };
    if let Some(k) = key {
        if !status.is_server_error() {
            st.idem.put(k, status.as_u16(), body.clone());
        }
    }
    (status, Json(body)).into_response()
}

#[derive(Debug, Serialize)]
pub struct SampleSummary {
    pub id: String,
    pub split: Split,
    pub motion: String,
    pub label: Label,
    pub has_pose: bool,
}

impl From<&Sample> for SampleSummary {
    fn from(s: &Sample) -> Self {
        Self { id: s.id.clone(), split: s.split, motion: s.motion.clone(), label: s.label(), has_pose: s.pose.is_some() }
    }
}

#[derive(Debug, Deserialize)]
struct SampleQuery {
    split: Option<String>,
}

fn parse_split(s: &str) -> OpResult<Split> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| OpError::Invalid(format!("unknown split {s:?} (expected example-pool, test or unlabeled)")))
}

async fn list_samples(State(st): State<AppState>, Query(q): Query<SampleQuery>) -> ApiResult<Json<Vec<SampleSummary>>> {
    let split = q.split.as_deref().map(parse_split).transpose()?;
    let m = st.ws.manifest();
    Ok(Json(m.samples.iter().filter(|s| split.is_none_or(|sp| s.split == sp)).map(SampleSummary::from).collect()))
}

async fn get_sample(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Sample>> {
    Ok(Json(st.ws.sample(&id)?))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response()
}

async fn sample_image(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let sample = st.ws.sample(&id)?;
    let path = st.ws.store.root().join(&sample.image_ref);
    let bytes = blocking(move || fs::read(&path).map_err(|e| OpError::Failed(format!("sample {id}: {e}")))).await?;
    Ok(png(bytes))
}

fn overlay_png(ws: &Workspace, sample: &Sample) -> OpResult<Vec<u8>> {
    if sample.pose.is_none() {
        return Err(OpError::NotFound(format!("sample {} has no pose artifacts", sample.id)));
    }
    let fail = |e: &dyn std::fmt::Display| OpError::Failed(format!("sample {}: {e}", sample.id));
    let m = SampleMaterial::load(sample, ws.store.root(), TransformOp::None).map_err(|e| fail(&e))?;
    let img = match (m.overlay, &m.heatmap) {
        (Some(o), _) => o,
        (None, Some(h)) => composite_overlay(&m.rgb, h, &ws.config.pose.overlay, true).map_err(|e| fail(&e))?,
        (None, None) => return Err(OpError::NotFound(format!("sample {} has no heatmap", sample.id))),
    };
    encode_png(&img).map_err(|e| fail(&e))
}

async fn sample_overlay(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let sample = st.ws.sample(&id)?;
    let ws = st.ws.clone();
    Ok(png(blocking(move || overlay_png(&ws, &sample)).await?))
}

#[derive(Debug, Deserialize)]
pub struct AnnotationInput {
    pub label: Label,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub defect: Option<DefectClass>,
    #[serde(default)]
    pub annotator: Option<String>,
    #[serde(default)]
    pub move_to: Option<Split>,
}

async fn put_annotation(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(body): Json<AnnotationInput>,
) -> Response {
    let ws = st.ws.clone();
    let scope = format!("PUT /samples/{id}/annotation");
    mutate(&st, &headers, scope, StatusCode::OK, move || {
        let mut ann = Annotation::new(body.label, body.description, body.annotator.unwrap_or_else(|| "ui".into()));
        if let Some(d) = body.defect {
            ann = ann.with_defect(d);
        }
        ws.save_annotation(&id, ann, body.move_to)
    })
    .await
}

async fn get_pool(State(st): State<AppState>) -> Json<crate::workspace::PoolView> {
    Json(st.ws.pool())
}

#[derive(Debug, Deserialize)]
struct PoolInput {
    ids: Vec<String>,
}

async fn put_pool(State(st): State<AppState>, headers: HeaderMap, Json(body): Json<PoolInput>) -> Response {
    let ws = st.ws.clone();
    let jobs = st.jobs.clone();
    mutate(&st, &headers, "PUT /pool".into(), StatusCode::OK, move || {
        if jobs.learn_running() {
            return Err(OpError::Conflict("pool is locked while a learn job runs".into()));
        }
        ws.set_pool(&body.ids)
    })
    .await
}

async fn post_job(State(st): State<AppState>, headers: HeaderMap, Json(req): Json<JobRequest>) -> Response {
    let ws = st.ws.clone();
    let jobs = st.jobs.clone();
    mutate(&st, &headers, "POST /jobs".into(), StatusCode::ACCEPTED, move || jobs.submit(ws, req)).await
}

async fn get_job(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let rec = st.jobs.get(&id).ok_or_else(|| OpError::NotFound(format!("unknown job {id}")))?;
    Ok(Json(rec).into_response())
}

async fn run_results(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let ws = st.ws.clone();
    let view = blocking(move || ws.run_results(&id)).await?;
    Ok(Json(view).into_response())
}

#[derive(Debug, Deserialize)]
pub struct OverrideInput {
    pub sample_id: String,
    pub label: Label,
    pub reason: String,
    #[serde(default)]
    pub author: Option<String>,
}

async fn post_override(
    State(st): State<AppState>,
    UrlPath(run): UrlPath<String>,
    headers: HeaderMap,
    Json(body): Json<OverrideInput>,
) -> Response {
    let ws = st.ws.clone();
    let scope = format!("POST /results/{run}/override");
    mutate(&st, &headers, scope, StatusCode::CREATED, move || {
        ws.add_override(&run, &body.sample_id, body.label, &body.reason, body.author.as_deref().unwrap_or("ui"))
    })
    .await
}

pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/samples", get(list_samples))
        .route("/samples/{id}", get(get_sample))
        .route("/samples/{id}/image", get(sample_image))
        .route("/samples/{id}/overlay", get(sample_overlay))
        .route("/samples/{id}/annotation", put(put_annotation))
        .route("/pool", get(get_pool).put(put_pool))
        .route("/jobs", post(post_job))
        .route("/jobs/{id}", get(get_job))
        .route("/runs/{id}/results", get(run_results))
        .route("/results/{id}/override", post(post_override))
        .fallback(|| async { ApiError(OpError::NotFound("no such endpoint".into())) });
    let app = Router::new().nest("/v1", api).with_state(state);
    match ui_dir {
        Some(dir) if dir.is_dir() => app.fallback_service(ServeDir::new(dir)),
        _ => app,
    }
}

pub async fn serve(state: AppState, addr: SocketAddr, ui_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let app = router(state, ui_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
