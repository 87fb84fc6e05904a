//! JSON API for blind evaluation sessions.
//!
//! | method | path                                   | body / query          |
//! |--------|----------------------------------------|-----------------------|
//! | POST   | `/cases`                               | `[EvaluationCase]`    |
//! | POST   | `/sessions`                            | [`CreateSession`]     |
//! | GET    | `/sessions/{id}/cases/{n}`             |                       |
//! | POST   | `/sessions/{id}/cases/{n}/submission`  | `Submission`          |
//! | POST   | `/sessions/{id}/close`                 |                       |
//! | GET    | `/results`                             | `ResultsFilter` query |
//! | GET    | `/images/*`                            | static files          |
//!
//! Case indices are zero-based. Nothing served under `/sessions` names a
//! model; model ids only appear in `/results`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cxr_core::evaluation::{
    results_table, CaseView, DatasetTag, EvalStore, EvaluationCase, ResultsExport, ResultsFilter, Submission,
    SubmissionAck,
};
use cxr_core::Error;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<EvalStore>,
    /// When set, every API call must carry `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub case_ids: Vec<String>,
    pub rater_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Session summary returned to the rater; the slot assignments stay server-side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub rater_id: String,
    pub cases: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_for(e: &Error) -> (StatusCode, &'static str) {
    match e.root() {
        Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        Error::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
        Error::InvalidInput(_) | Error::Format(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
        Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = status_for(&self.0);
        let body = ErrorBody {
            error: kind.to_string(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> cxr_core::Result<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::Consistency(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

async fn import_cases(
    State(s): State<AppState>,
    Json(cases): Json<Vec<EvaluationCase>>,
) -> ApiResult<serde_json::Value> {
    let n = blocking(move || s.store.import_cases(cases)).await?;
    Ok(Json(serde_json::json!({ "imported": n })))
}

async fn create_session(
    State(s): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let seed = req.seed.unwrap_or_else(rand::random);
    let session = blocking(move || s.store.create_session(&req.case_ids, &req.rater_id, seed)).await?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: session.session_id,
            rater_id: session.rater_id,
            cases: session.assignments.len(),
        }),
    ))
}

async fn case_view(State(s): State<AppState>, Path((id, n)): Path<(String, usize)>) -> ApiResult<CaseView> {
    Ok(Json(s.store.case_view(&id, n)?))
}

async fn submit(
    State(s): State<AppState>,
    Path((id, n)): Path<(String, usize)>,
    Json(sub): Json<Submission>,
) -> ApiResult<SubmissionAck> {
    Ok(Json(blocking(move || s.store.submit(&id, n, sub)).await?))
}

async fn close(State(s): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    blocking(move || s.store.close_session(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct ResultsQuery {
    dataset_tag: Option<DatasetTag>,
    abnormal: Option<bool>,
    rater_id: Option<String>,
    session_id: Option<String>,
    /// `table` for a plain-text table instead of JSON.
    format: Option<String>,
}

async fn results(State(s): State<AppState>, Query(q): Query<ResultsQuery>) -> Result<Response, ApiError> {
    let filter = ResultsFilter {
        dataset_tag: q.dataset_tag,
        abnormal: q.abnormal,
        rater_id: q.rater_id,
        session_id: q.session_id,
    };
    let export: ResultsExport = s.store.export_results(&filter)?;
    Ok(match q.format.as_deref() {
        Some("table") => results_table(&export).to_string().into_response(),
        _ => Json(export).into_response(),
    })
}

async fn health() -> &'static str {
    "ok"
}

async fn require_token(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            let body = ErrorBody {
                error: "unauthorized".into(),
                message: "missing or wrong bearer token".into(),
            };
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState, images: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/cases", post(import_cases))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/cases/{n}", get(case_view))
        .route("/sessions/{id}/cases/{n}/submission", post(submit))
        .route("/sessions/{id}/close", post(close))
        .route("/results", get(results))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    let mut app = Router::new().route("/health", get(health)).merge(api);
    if let Some(dir) = images {
        app = app.nest_service("/images", ServeDir::new(dir));
    }
    app
}

/// Serves until the process is stopped.
pub async fn serve(addr: &str, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}
