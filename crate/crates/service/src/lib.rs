//! HTTP API over the segmentation model and the reader-study engine.
//!
//! One model is loaded at startup. Forward passes run on the blocking pool
//! behind a semaphore so at most `workers` of them are in flight; study
//! sessions are serialized per session id by [`StudyStore`].

mod error;
mod schema;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use mpseg_core::dataio::{decode_upload, encode_png_gray, read_manifest};
use mpseg_core::maskops::foreground_stats;
use mpseg_core::readerstudy::{create_session, score_session, NextTrial, PoolItem, StudyReport, StudyStore, Truth};
use mpseg_core::segmodel::SegModel;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

pub use error::{ApiError, ErrorBody};
pub use schema::api_schema;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub checkpoint: Option<PathBuf>,
    pub threshold: f64,
    pub max_body_mb: usize,
    /// Where study event logs live. `None` keeps sessions in memory only.
    pub session_dir: Option<PathBuf>,
    /// Concurrent forward passes.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { checkpoint: None, threshold: 0.5, max_body_mb: 20, session_dir: None, workers: 1 }
    }
}

impl ServiceConfig {
    pub fn max_body_bytes(&self) -> usize {
        self.max_body_mb * 1024 * 1024
    }
}

#[derive(Clone)]
pub struct AppState {
    model: Option<Arc<SegModel>>,
    model_id: Option<String>,
    /// Why the model is absent, reported by `/api/health`.
    load_error: Option<String>,
    store: Arc<StudyStore>,
    inference: Arc<Semaphore>,
    threshold: f64,
    body_limit: usize,
}

impl AppState {
    /// Loads the checkpoint and opens the session store. A missing or
    /// unreadable checkpoint is not fatal: the service starts degraded and
    /// `/api/health` reports 503.
    pub fn from_config(cfg: &ServiceConfig) -> mpseg_core::Result<AppState> {
        if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
            return Err(mpseg_core::Error::InvalidArgument(format!("threshold must lie in (0, 1), got {}", cfg.threshold)));
        }
        if cfg.workers == 0 || cfg.max_body_mb == 0 {
            return Err(mpseg_core::Error::InvalidArgument("workers and max_body_mb must be at least 1".into()));
        }
        let (model, load_error) = match &cfg.checkpoint {
            None => (None, Some("no checkpoint configured".to_string())),
            Some(path) => match SegModel::load(path, None) {
                Ok(m) => (Some(Arc::new(m)), None),
                Err(e) => {
                    tracing::warn!(path = %path.display(), error = %e, "starting without a model");
                    (None, Some(format!("{}: {e}", e.code())))
                }
            },
        };
        let store = match &cfg.session_dir {
            Some(dir) => StudyStore::open(dir)?,
            None => StudyStore::in_memory(),
        };
        Ok(AppState {
            model_id: model.as_ref().map(|m| m.model_id()),
            model,
            load_error,
            store: Arc::new(store),
            inference: Arc::new(Semaphore::new(cfg.workers)),
            threshold: cfg.threshold,
            body_limit: cfg.max_body_bytes(),
        })
    }

    /// A state around an already-loaded model.
    pub fn with_model(model: SegModel, cfg: &ServiceConfig) -> mpseg_core::Result<AppState> {
        let mut state = AppState::from_config(&ServiceConfig { checkpoint: None, ..cfg.clone() })?;
        state.model_id = Some(model.model_id());
        state.model = Some(Arc::new(model));
        state.load_error = None;
        Ok(state)
    }

    pub fn model_loaded(&self) -> bool {
        self.model.is_some()
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.body_limit;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/schema", get(schema_doc))
        .route("/api/segment", post(segment))
        .route("/api/study/sessions", post(create_study))
        .route("/api/study/sessions/{id}/next", get(next_trial))
        .route("/api/study/sessions/{id}/responses", post(submit_response))
        .route("/api/study/sessions/{id}/report", get(report))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint") })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves on an already-bound listener until ctrl-c.
pub async fn serve(state: AppState, listener: TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, model = ?state.model_id, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: Option<String>,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

async fn health(State(st): State<AppState>) -> impl IntoResponse {
    let (code, status) = if st.model_loaded() {
        (StatusCode::OK, "ok")
    } else {
        (StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded")
    };
    let body = Health {
        status: status.into(),
        model_id: st.model_id.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        detail: st.load_error.clone(),
    };
    (code, Json(body))
}

async fn schema_doc() -> Json<serde_json::Value> {
    Json(api_schema())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    /// Base64 PNG, 8-bit grey, 255 where microplastic.
    pub mask: String,
    pub width: u32,
    pub height: u32,
    pub coverage_fraction: f64,
    pub particle_count: usize,
    pub threshold_used: f64,
    pub model_id: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Deserialize)]
struct SegmentQuery {
    threshold: Option<f64>,
}

fn parse_threshold(raw: &str) -> ApiResult<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_ARGUMENT", format!("threshold {raw:?} is not a number")))
}

async fn segment(
    State(st): State<AppState>,
    Query(q): Query<SegmentQuery>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<Json<SegmentResponse>> {
    let mut multipart = multipart?;
    let mut upload = None;
    let mut threshold = q.threshold;
    while let Some(field) = multipart.next_field().await? {
        match field.name() {
            Some("file" | "image") => upload = Some(field.bytes().await?),
            Some("threshold") => threshold = Some(parse_threshold(&field.text().await?)?),
            _ => {
                // Drain and ignore unknown parts; they still count against the body limit.
                field.bytes().await?;
            }
        }
    }
    let Some(model) = st.model.clone() else {
        return Err(ApiError::model_not_loaded(st.load_error.clone().unwrap_or_default()));
    };
    let bytes = upload.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "MISSING_FILE", "multipart field \"file\" is required"))?;
    if bytes.len() > st.body_limit {
        return Err(ApiError::too_large(st.body_limit));
    }
    let threshold = threshold.unwrap_or(st.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "INVALID_ARGUMENT", format!("threshold must lie in (0, 1), got {threshold}")));
    }

    let permit = st.inference.clone().acquire_owned().await.map_err(|e| ApiError::internal(e.to_string()))?;
    let model_id = st.model_id.clone().unwrap_or_default();
    let response = tokio::task::spawn_blocking(move || -> ApiResult<SegmentResponse> {
        let _permit = permit;
        let started = Instant::now();
        let image = decode_upload("upload", &bytes)?;
        let prediction = model.predict(&image, threshold)?;
        let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
        let stats = foreground_stats(&prediction.mask);
        let png = encode_png_gray(&prediction.mask.to_gray());
        Ok(SegmentResponse {
            mask: base64::engine::general_purpose::STANDARD.encode(png),
            width: prediction.width,
            height: prediction.height,
            coverage_fraction: stats.fraction,
            particle_count: stats.component_count,
            threshold_used: threshold,
            model_id,
            elapsed_ms,
        })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(response))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub real_manifest: PathBuf,
    pub generated_manifest: PathBuf,
    pub n_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub trial_index: usize,
    pub answer: Truth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseAccepted {
    pub answered: usize,
    pub n_trials: usize,
}

/// `/next` body. Trial fields are absent once `done` is true.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextTrialBody {
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answered: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_png_base64: Option<String>,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn create_study(
    State(st): State<AppState>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let Json(req) = body?;
    let created = blocking(move || {
        let real = PoolItem::from_manifest(&read_manifest(&req.real_manifest)?);
        let generated = PoolItem::from_manifest(&read_manifest(&req.generated_manifest)?);
        let session = create_session(&real, &generated, req.n_per_class, req.seed)?;
        let n_trials = session.n_trials();
        let session_id = st.store.insert(session)?;
        tracing::info!(%session_id, n_trials, "study session created");
        Ok(SessionCreated { session_id, n_trials })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn next_trial(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<NextTrialBody>> {
    let next = blocking(move || {
        st.store.with_session(&id, |s| match s.next_trial() {
            Err(mpseg_core::Error::SessionComplete) => Ok(NextTrial::Done),
            other => other,
        })
        .map_err(ApiError::from)
    })
    .await?;
    let body = match next {
        NextTrial::Done => NextTrialBody { done: true, trial_index: None, n_trials: None, answered: None, image_png_base64: None },
        NextTrial::Trial(p) => NextTrialBody {
            done: false,
            trial_index: Some(p.trial_index),
            n_trials: Some(p.n_trials),
            answered: Some(p.answered),
            image_png_base64: Some(p.image_png_base64),
        },
    };
    Ok(Json(body))
}

async fn submit_response(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> ApiResult<Json<ResponseAccepted>> {
    let Json(req) = body?;
    let accepted = blocking(move || {
        st.store
            .with_session(&id, |s| {
                let answered = s.submit_response(req.trial_index, req.answer)?;
                Ok(ResponseAccepted { answered, n_trials: s.n_trials() })
            })
            .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(accepted))
}

async fn report(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StudyReport>> {
    let r = st.store.with_session(&id, |s| score_session(s))?;
    Ok(Json(r))
}
