use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use super::model::*;
use super::trial::TrialService;
use crate::error::Error;

/// HTTP status for each error kind.
pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::InvalidInput(_) | Error::UndefinedStatistic(_) => StatusCode::BAD_REQUEST,
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::EnrollmentRejected(_)
        | Error::Sequencing(_)
        | Error::Phase(_)
        | Error::Idempotency(_) => StatusCode::CONFLICT,
        Error::Timing(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::Service { status, .. } => {
            StatusCode::from_u16(*status).unwrap_or(StatusCode::BAD_GATEWAY)
        }
        Error::InSession { source, .. } => status_for(source),
        Error::Transport(_) => StatusCode::BAD_GATEWAY,
        Error::Config(_) | Error::Corrupt(_) | Error::Io(_) | Error::Json(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(Error::InvalidInput(r.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let body = ErrorBody {
            error: self.0.kind().to_owned(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Svc = State<Arc<TrialService>>;

async fn blocking<T, F>(svc: Arc<TrialService>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&TrialService) -> crate::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(Error::Io(std::io::Error::other(e))))?
        .map(Json)
        .map_err(ApiError)
}

async fn bootstrap(State(svc): Svc) -> Json<Bootstrap> {
    Json(svc.bootstrap())
}

async fn create_session(
    State(svc): Svc,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<SessionState> {
    let Json(req) = body?;
    blocking(svc, move |s| s.create_session(&req)).await
}

async fn get_session(State(svc): Svc, Path(id): Path<String>) -> ApiResult<SessionState> {
    Ok(Json(svc.session(&id)?))
}

async fn consent(
    State(svc): Svc,
    Path(id): Path<String>,
    body: Result<Json<ConsentRequest>, JsonRejection>,
) -> ApiResult<SessionState> {
    let Json(req) = body?;
    blocking(svc, move |s| s.consent(&id, req.accepted)).await
}

async fn instructions(State(svc): Svc, Path(id): Path<String>) -> ApiResult<SessionState> {
    blocking(svc, move |s| s.complete_instructions(&id)).await
}

async fn next_trial(State(svc): Svc, Path(id): Path<String>) -> ApiResult<TrialPayload> {
    Ok(Json(svc.next_trial(&id)?))
}

async fn submit_response(
    State(svc): Svc,
    Path(id): Path<String>,
    body: Result<Json<SubmitResponse>, JsonRejection>,
) -> ApiResult<Feedback> {
    let Json(req) = body?;
    blocking(svc, move |s| s.submit_response(&id, &req)).await
}

async fn finalize(State(svc): Svc, Path(id): Path<String>) -> ApiResult<SessionSummary> {
    blocking(svc, move |s| s.finalize(&id)).await
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    task: Option<String>,
    arm: Option<String>,
    from: Option<String>,
    to: Option<String>,
    phase: Option<String>,
}

fn parse_time(field: &str, v: Option<String>) -> crate::Result<Option<DateTime<Utc>>> {
    v.filter(|s| !s.is_empty())
        .map(|s| {
            DateTime::parse_from_rfc3339(&s)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| Error::InvalidInput(format!("{field}: {e}")))
        })
        .transpose()
}

impl ExportQuery {
    fn into_filter(self) -> crate::Result<ExportFilter> {
        Ok(ExportFilter {
            task: self.task.filter(|s| !s.is_empty()),
            arm: self
                .arm
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .transpose()?,
            from: parse_time("from", self.from)?,
            to: parse_time("to", self.to)?,
            phase: self
                .phase
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .transpose()?,
        })
    }
}

async fn export(State(svc): Svc, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let filter = q.into_filter()?;
    let lines = tokio::task::spawn_blocking(move || svc.export(&filter))
        .await
        .map_err(|e| ApiError(Error::Io(std::io::Error::other(e))))?;
    let mut body = String::new();
    for line in &lines {
        body.push_str(&serde_json::to_string(line).map_err(Error::from)?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

/// All routes, plus static assets under `/assets` and the participant UI
/// as the fallback when those directories are configured.
pub fn router(svc: Arc<TrialService>) -> Router {
    let service_cfg = svc.experiment().config.service.clone();
    let mut app = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/bootstrap", get(bootstrap))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/consent", post(consent))
        .route("/sessions/{id}/instructions", post(instructions))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/export", get(export))
        .with_state(svc);
    if let Some(dir) = service_cfg.assets_dir {
        app = app.nest_service("/assets", ServeDir::new(dir));
    }
    if let Some(dir) = service_cfg.ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app
}

/// A server running on a background task.
pub struct RunningServer {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> crate::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        (&mut self.handle)
            .await
            .map_err(|e| Error::Io(std::io::Error::other(e)))??;
        Ok(())
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub async fn spawn(svc: Arc<TrialService>, addr: SocketAddr) -> crate::Result<RunningServer> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(svc);
    let handle = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(RunningServer {
        addr,
        shutdown: Some(tx),
        handle,
    })
}
