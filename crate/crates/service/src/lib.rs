//! HTTP preview service for interactive makeup sessions.
//!
//! Sessions hold an uploaded subject, its landmarks, the current plan and a
//! matte cache. Renders run on the blocking pool; at most one per session.

mod session;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use makeup_core::compositor::{self, Catalog, CompositorError, DirResolver, MakeupPlan, RenderOptions};
use makeup_core::imaging;
use makeup_core::semantics::{parse_landmarks, region_contour, Point2, SemanticRegion};
use serde::Serialize;
use serde_json::{json, Value};

pub use session::{RenderOutcome, Session, SessionAssets, LANDMARKS_REF, SUBJECT_REF};

/// Static configuration shared by all sessions.
#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Root for plan asset paths.
    pub assets_root: PathBuf,
    pub catalog: Option<Catalog>,
    /// Directory where sessions are mirrored, if any.
    pub persist_dir: Option<PathBuf>,
    pub render: RenderOptions,
}

pub struct AppState {
    config: ServiceConfig,
    assets: DirResolver,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    /// Builds the state and reloads any persisted sessions.
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let mut assets = DirResolver::new(&config.assets_root);
        if let Some(c) = &config.catalog {
            assets = assets.with_catalog(c.clone());
        }
        let mut sessions = HashMap::new();
        if let Some(dir) = &config.persist_dir {
            for root in session::persisted_sessions(dir) {
                if let Some(s) = Session::restore(&root) {
                    sessions.insert(s.id.clone(), Arc::new(s));
                }
            }
        }
        Arc::new(Self {
            config,
            assets,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn persist(&self, s: &Session) {
        if let Some(dir) = &self.config.persist_dir {
            // Persistence is a mirror; the in-memory session stays authoritative.
            let _ = s.persist(dir);
        }
    }
}

/// JSON error body `{"error": message}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("UnknownSession: {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/catalog", get(get_catalog))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/plan", put(put_plan))
        .route("/sessions/{id}/render", post(start_render))
        .route("/sessions/{id}/result.png", get(get_result))
        .route("/sessions/{id}/timings", get(get_timings))
        .layer(DefaultBodyLimit::max(64 << 20))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(config))).await
}

async fn create_session(State(state): State<Arc<AppState>>, mut multipart: Multipart) -> Result<Response, ApiError> {
    let schema = |m: String| ApiError::new(StatusCode::BAD_REQUEST, format!("SchemaError: {m}"));
    let mut subject = None;
    let mut landmarks = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| schema(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| schema(e.to_string()))?;
        match name.as_str() {
            "subject" => subject = Some(data),
            "landmarks" => landmarks = Some(data),
            other => return Err(schema(format!("unexpected field {other:?}"))),
        }
    }
    let subject_bytes = subject.ok_or_else(|| schema("missing field \"subject\"".into()))?;
    let landmark_bytes = landmarks.ok_or_else(|| schema("missing field \"landmarks\"".into()))?;
    let image = imaging::decode_rgb(&subject_bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let text = std::str::from_utf8(&landmark_bytes).map_err(|e| schema(e.to_string()))?;
    let lm = parse_landmarks(text).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    if (lm.width(), lm.height()) != image.dims() {
        return Err(schema(format!(
            "landmarks are for {}×{} but the image is {}×{}",
            lm.width(),
            lm.height(),
            image.width(),
            image.height()
        )));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let s = Arc::new(Session::new(id.clone(), subject_bytes.to_vec(), image, lm));
    state.persist(&s);
    state.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), s);
    Ok((StatusCode::CREATED, Json(json!({ "session": id }))).into_response())
}

async fn get_catalog(State(state): State<Arc<AppState>>) -> Json<Value> {
    let entries = state.config.catalog.as_ref().map(|c| c.entries.clone()).unwrap_or_default();
    Json(serde_json::to_value(entries).unwrap_or(Value::Null))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let s = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let rendering = s.is_rendering();
    let st = s.lock();
    let contours: BTreeMap<SemanticRegion, Vec<Point2>> = SemanticRegion::ALL
        .iter()
        .filter_map(|&r| region_contour(&st.landmarks, r).ok().map(|c| (r, c)))
        .collect();
    Ok(Json(json!({
        "session": s.id,
        "width": st.subject.width(),
        "height": st.subject.height(),
        "created": st.created,
        "updated": st.updated,
        "plan": st.plan,
        "validation": st.validation,
        "rendering": rendering,
        "has_result": matches!(st.outcome, Some(RenderOutcome::Done { .. })),
        "landmarks": st.landmarks.document(),
        "contours": contours,
    })))
}

#[derive(Serialize)]
struct RegionCacheState {
    region: SemanticRegion,
    matte_cached: bool,
}

async fn put_plan(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let s = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let text = String::from_utf8_lossy(&body);
    let mut plan = match MakeupPlan::from_json(&text) {
        Ok(p) => p,
        Err(e) => {
            let report = json!({ "valid": false, "regions": [], "problems": [format!("SchemaError: {e}")] });
            return Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(report)).into_response());
        }
    };
    // The uploaded subject replaces whatever the client named.
    plan.subject = SUBJECT_REF.to_string();
    plan.subject_landmarks = Some(LANDMARKS_REF.to_string());
    let known = |cid: &str| state.assets.catalog().is_some_and(|c| c.get(cid).is_some());
    let validation = plan.validate(Some(&known));
    if !validation.valid {
        return Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(validation)).into_response());
    }
    let cached = {
        let st = s.lock();
        let assets = SessionAssets {
            subject: &st.subject,
            landmarks: &st.landmarks,
            dir: &state.assets,
        };
        compositor::cached_regions(&plan, &assets, &state.config.render, &s.cache).unwrap_or_default()
    };
    {
        let mut st = s.lock();
        st.plan = plan;
        st.validation = validation.clone();
        st.updated = session::now_secs();
    }
    state.persist(&s);
    let cache: Vec<RegionCacheState> = cached
        .into_iter()
        .map(|(region, matte_cached)| RegionCacheState { region, matte_cached })
        .collect();
    let mut report = serde_json::to_value(&validation).unwrap_or(Value::Null);
    report["cache"] = serde_json::to_value(cache).unwrap_or(Value::Null);
    report["cache_stats"] = serde_json::to_value(s.cache.stats()).unwrap_or(Value::Null);
    Ok((StatusCode::OK, Json(report)).into_response())
}

/// Renders the session's plan exactly as the library would.
fn render_session(state: &AppState, s: &Session) -> RenderOutcome {
    let (subject, landmarks, plan) = {
        let st = s.lock();
        (st.subject.clone(), st.landmarks.clone(), st.plan.clone())
    };
    let assets = SessionAssets {
        subject: &subject,
        landmarks: &landmarks,
        dir: &state.assets,
    };
    match compositor::apply_plan_cached(&plan, &assets, &state.config.render, Some(&s.cache)) {
        Ok(result) => match imaging::encode_png_rgb(&result.image) {
            Ok(png) => RenderOutcome::Done {
                png,
                report: serde_json::to_value(result.report()).unwrap_or(Value::Null),
            },
            Err(e) => RenderOutcome::Failed {
                status: 500,
                error: e.to_string(),
            },
        },
        Err(e) => {
            let status = match e {
                CompositorError::Imaging(_) => 500,
                _ => 422,
            };
            RenderOutcome::Failed {
                status,
                error: e.to_string(),
            }
        }
    }
}

async fn start_render(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    // Claim the slot before spawning so a second request sees it at once.
    let guard = s
        .begin_render()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "RenderInFlight: a render is already running for this session"))?;
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let sess = guard.session();
        let outcome = render_session(&st, &sess);
        {
            let mut locked = sess.lock();
            locked.outcome = Some(outcome);
            locked.updated = session::now_secs();
        }
        st.persist(sess);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "session": id, "status": "rendering" }))).into_response())
}

fn pending() -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "status": "rendering" }))).into_response()
}

async fn get_result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    if s.is_rendering() {
        return Ok(pending());
    }
    let outcome = s.lock().outcome.clone();
    match outcome {
        Some(RenderOutcome::Done { png, .. }) => Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response()),
        Some(RenderOutcome::Failed { status, error }) => Err(ApiError::new(StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), error)),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "NoResult: session has not been rendered")),
    }
}

async fn get_timings(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    if s.is_rendering() {
        return Ok(pending());
    }
    let outcome = s.lock().outcome.clone();
    match outcome {
        Some(RenderOutcome::Done { report, .. }) => Ok(Json(json!({ "status": "done", "report": report })).into_response()),
        Some(RenderOutcome::Failed { status, error }) => Err(ApiError::new(StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), error)),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "NoResult: session has not been rendered")),
    }
}
