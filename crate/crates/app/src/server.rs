//! JSON API behind the interactive sketching client.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use strokesel_core::embed::EmbedNet;
use strokesel_core::gallery::{Embedder, GalleryFeatures};
use strokesel_core::selector::{greedy_nonempty, SelectorNet};
use strokesel_core::sketch::{apply_mask, Point, Stroke, StrokeMask, VectorSketch};

pub const SCHEMA_VERSION: u32 = 1;

/// Read-only models shared by every session.
#[derive(Debug)]
pub struct Models {
    pub embed: EmbedNet,
    pub selector: SelectorNet,
    pub gallery: GalleryFeatures,
    pub canvas_h: usize,
    pub canvas_w: usize,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub threshold: f64,
    pub session_timeout: Duration,
    pub top_k: usize,
}

#[derive(Debug)]
struct Session {
    strokes: Vec<Stroke>,
    pair_id: Option<String>,
    created_at: Instant,
    last_used: Instant,
}

#[derive(Debug)]
pub struct AppState {
    models: Models,
    cfg: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(models: Models, cfg: ServiceConfig) -> Self {
        Self {
            models,
            cfg,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops idle sessions, then hands out the requested one.
    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let mut map = self.sessions.lock().unwrap();
        let now = Instant::now();
        let timeout = self.cfg.session_timeout;
        map.retain(|_, s| match s.try_lock() {
            Ok(s) => now.duration_since(s.last_used) < timeout,
            // busy means in use right now
            Err(_) => true,
        });
        map.get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    fn sketch_of(&self, s: &Session) -> Option<VectorSketch> {
        VectorSketch::new(s.strokes.clone(), self.models.canvas_h, self.models.canvas_w).ok()
    }

    fn critic(&self, sketch: &VectorSketch) -> Result<f64, ApiError> {
        self.models.selector.value(sketch).map_err(ApiError::internal)
    }

    fn select(&self, sketch: &VectorSketch) -> Result<StrokeMask, ApiError> {
        let out = self.models.selector.encode(sketch).map_err(ApiError::internal)?;
        Ok(greedy_nonempty(&out.probs))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn not_found(id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "unknown_session",
            message: format!("no session {id:?}"),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "malformed_request",
            message: message.into(),
        }
    }

    fn empty_sketch() -> Self {
        Self {
            status: StatusCode::CONFLICT,
            code: "empty_sketch",
            message: "the sketch has no strokes yet".into(),
        }
    }

    fn internal(e: strokesel_core::Error) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "code": self.code, "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn reply(mut v: Value) -> ApiResult {
    v["schema_version"] = json!(SCHEMA_VERSION);
    Ok(Json(v))
}

/// Parses an optional JSON body; empty means all defaults.
fn body<T: for<'de> Deserialize<'de> + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    /// Photo the user is drawing; lets retrieval results flag it.
    pair_id: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrokeBody {
    points: Vec<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
struct RetrieveParams {
    top_k: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Hit {
    photo_id: String,
    distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    is_paired: Option<bool>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}", delete(delete_session))
        .route("/session/{id}/stroke", post(add_stroke).delete(undo_stroke))
        .route("/session/{id}/score", get(score))
        .route("/session/{id}/select", post(select))
        .route("/session/{id}/retrieve", post(retrieve))
        .with_state(state)
}

async fn health(State(st): State<Arc<AppState>>) -> ApiResult {
    reply(json!({
        "gallery_size": st.models.gallery.len(),
        "sessions": st.session_count(),
        "threshold": st.cfg.threshold,
    }))
}

async fn create_session(State(st): State<Arc<AppState>>, raw: Bytes) -> ApiResult {
    let req: NewSession = body(&raw)?;
    if let Some(p) = &req.pair_id {
        if st.models.gallery.index_of(p).is_none() {
            return Err(ApiError::bad_request(format!("pair_id {p:?} is not in the gallery")));
        }
    }
    let id = format!("{:032x}", rand::random::<u128>());
    let now = Instant::now();
    let s = Session {
        strokes: Vec::new(),
        pair_id: req.pair_id,
        created_at: now,
        last_used: now,
    };
    st.sessions.lock().unwrap().insert(id.clone(), Arc::new(Mutex::new(s)));
    reply(json!({
        "id": id,
        "threshold": st.cfg.threshold,
        "canvas_h": st.models.canvas_h,
        "canvas_w": st.models.canvas_w,
    }))
}

async fn delete_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    st.session(&id)?;
    st.sessions.lock().unwrap().remove(&id);
    reply(json!({ "deleted": id }))
}

fn parse_stroke(st: &AppState, raw: &Bytes) -> Result<Stroke, ApiError> {
    if raw.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(ApiError::bad_request("stroke body is required"));
    }
    let req: StrokeBody = body(raw)?;
    if req.points.is_empty() {
        return Err(ApiError::bad_request("stroke has no points"));
    }
    let (h, w) = (st.models.canvas_h as f64, st.models.canvas_w as f64);
    for (i, [x, y]) in req.points.iter().enumerate() {
        if !(x.is_finite() && y.is_finite() && *x >= 0.0 && *x < w && *y >= 0.0 && *y < h) {
            return Err(ApiError::bad_request(format!("point {i} ({x}, {y}) is outside the {w}x{h} canvas")));
        }
    }
    Stroke::new(req.points.iter().map(|[x, y]| Point::new(*x, *y)).collect()).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn add_stroke(State(st): State<Arc<AppState>>, Path(id): Path<String>, raw: Bytes) -> ApiResult {
    let handle = st.session(&id)?;
    let stroke = parse_stroke(&st, &raw)?;
    let mut s = handle.lock().unwrap();
    s.strokes.push(stroke);
    s.last_used = Instant::now();
    let sketch = st.sketch_of(&s).expect("a stroke was just added");
    let score = st.critic(&sketch)?;
    reply(json!({ "k": sketch.k(), "critic_score": score }))
}

async fn undo_stroke(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let handle = st.session(&id)?;
    let mut s = handle.lock().unwrap();
    if s.strokes.pop().is_none() {
        return Err(ApiError::empty_sketch());
    }
    s.last_used = Instant::now();
    let score = match st.sketch_of(&s) {
        Some(sk) => Some(st.critic(&sk)?),
        None => None,
    };
    reply(json!({ "k": s.strokes.len(), "critic_score": score }))
}

async fn score(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let handle = st.session(&id)?;
    let s = handle.lock().unwrap();
    let score = match st.sketch_of(&s) {
        Some(sk) => Some(st.critic(&sk)?),
        None => None,
    };
    reply(json!({
        "k": s.strokes.len(),
        "critic_score": score,
        "threshold": st.cfg.threshold,
        "feed_recommended": score.is_some_and(|v| v >= st.cfg.threshold),
        "age_secs": s.created_at.elapsed().as_secs(),
    }))
}

async fn select(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let handle = st.session(&id)?;
    let mut s = handle.lock().unwrap();
    s.last_used = Instant::now();
    let sketch = st.sketch_of(&s).ok_or_else(ApiError::empty_sketch)?;
    let mask = st.select(&sketch)?;
    reply(json!({ "mask": mask.bits(), "k_selected": mask.selected(), "k": sketch.k() }))
}

async fn retrieve(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<RetrieveParams>,
) -> ApiResult {
    let handle = st.session(&id)?;
    let mut s = handle.lock().unwrap();
    s.last_used = Instant::now();
    let sketch = st.sketch_of(&s).ok_or_else(ApiError::empty_sketch)?;
    let mask = st.select(&sketch)?;
    let subset = apply_mask(&sketch, &mask).map_err(ApiError::internal)?;
    let query = st.models.embed.embed_sketch(&subset).map_err(ApiError::internal)?;
    let k = q.top_k.unwrap_or(st.cfg.top_k);
    let hits: Vec<Hit> = st
        .models
        .gallery
        .top_k(&query, k)
        .into_iter()
        .map(|(photo_id, distance)| Hit {
            is_paired: s.pair_id.as_ref().map(|p| *p == photo_id),
            photo_id,
            distance,
        })
        .collect();
    reply(json!({ "mask": mask.bits(), "k_selected": mask.selected(), "results": hits }))
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
}
