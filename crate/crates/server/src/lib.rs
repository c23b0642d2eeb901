//! HTTP/JSON scoring service.
//!
//! Routes:
//! - `GET  /health`
//! - `POST /v1/pair`: score one pair, returns a `PairScore`
//! - `POST /v1/jobs`: start a dataset evaluation, returns `{ "id": ... }`
//! - `GET  /v1/jobs/{id}`: job state, summary and written files
//! - `POST /v1/selftest`: run the built-in oracle suite

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use met3r_core::api::{
    ApiError, Health, JobAccepted, JobRequest, JobState, JobStatus, PairRequest, SelftestRequest,
};
use met3r_core::harness::{emit_outputs, run_job, summary};
use met3r_core::metric::met3r_pair;
use met3r_core::selftest::{self, SelftestReport};
use met3r_core::{Error, PairScore};

#[derive(Clone, Default)]
pub struct AppState {
    jobs: Arc<RwLock<HashMap<String, JobStatus>>>,
}

/// Error response carrying an HTTP status and an [`ApiError`] body.
pub struct HttpError(StatusCode, ApiError);

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::Config(_) | Error::Range(_) | Error::Shape(_) | Error::ShapeMismatch(_) | Error::CorruptImage { .. } => {
            StatusCode::BAD_REQUEST
        }
        Error::EmptyOverlap
        | Error::DegenerateGeometry(_)
        | Error::DegeneratePose(_)
        | Error::NoMatches
        | Error::EmptySequence(_)
        | Error::Format(_)
        | Error::FailureBudget { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        Error::BackendUnavailable(_) | Error::CacheMiss(_) => StatusCode::SERVICE_UNAVAILABLE,
        Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for HttpError {
    fn from(e: Error) -> Self {
        HttpError(status_for(&e), ApiError::from(&e))
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn internal(message: String) -> HttpError {
    HttpError(StatusCode::INTERNAL_SERVER_ERROR, ApiError { kind: "internal".into(), message })
}

async fn blocking<T, F>(f: F) -> Result<T, HttpError>
where
    F: FnOnce() -> Result<T, Error> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| internal(e.to_string()))?
        .map_err(HttpError::from)
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn pair(Json(req): Json<PairRequest>) -> Result<Json<PairScore>, HttpError> {
    let score = blocking(move || {
        let first = req.first.to_frame()?;
        let second = req.second.to_frame()?;
        req.metric.rasterizer.validate()?;
        let points = req.point_backend.build()?;
        let features = req.feature_backend.build()?;
        met3r_pair(&first, &second, points.as_ref(), features.as_ref(), &req.metric)
    })
    .await?;
    Ok(Json(score))
}

async fn submit_job(State(state): State<AppState>, Json(req): Json<JobRequest>) -> Result<(StatusCode, Json<JobAccepted>), HttpError> {
    req.job.validate()?;
    let id = uuid::Uuid::new_v4().to_string();
    let status = JobStatus { id: id.clone(), state: JobState::Running, error: None, summary: None, outputs: Vec::new() };
    state.jobs.write().expect("job table").insert(id.clone(), status);
    tracing::info!(%id, data = %req.job.data_root.display(), "job accepted");

    let jobs = state.jobs.clone();
    let job_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = run_job(&req.job).and_then(|result| {
            let outputs = match &req.out_dir {
                Some(dir) => emit_outputs(&result, &req.job, dir, req.extern_metrics.as_ref())?,
                None => Vec::new(),
            };
            Ok((summary(&result, &req.job.label(), req.extern_metrics.as_ref()), outputs))
        });
        let mut jobs = jobs.write().expect("job table");
        let entry = jobs.get_mut(&job_id).expect("job registered");
        match outcome {
            Ok((summary, outputs)) => {
                tracing::info!(id = %job_id, pairs = summary.pairs, excluded = summary.excluded, "job done");
                entry.state = JobState::Done;
                entry.summary = Some(summary);
                entry.outputs = outputs;
            }
            Err(e) => {
                tracing::warn!(id = %job_id, error = %e, "job failed");
                entry.state = JobState::Failed;
                entry.error = Some(ApiError::from(&e));
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { id })))
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>, HttpError> {
    state
        .jobs
        .read()
        .expect("job table")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| HttpError(StatusCode::NOT_FOUND, ApiError { kind: "not_found".into(), message: format!("no job {id}") }))
}

async fn run_selftest(body: Option<Json<SelftestRequest>>) -> Result<Json<SelftestReport>, HttpError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    if req.size < 32 {
        return Err(Error::Config(format!("selftest size must be at least 32, got {}", req.size)).into());
    }
    let report = blocking(move || Ok(selftest::run(req.seed, req.size))).await?;
    Ok(Json(report))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/pair", post(pair))
        .route("/v1/jobs", post(submit_job))
        .route("/v1/jobs/{id}", get(job_status))
        .route("/v1/selftest", post(run_selftest))
        .with_state(state)
}

pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::default())).await
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = serve(listener).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok((bound, handle))
}
