//! Local stand-ins for the grounding and generation services, for demos
//! and integration tests.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use cxr_core::error::BackendError;
use cxr_core::generation::{GenerateRequest, GenerateResponse, GenerationBackend, TemplateEngine};
use cxr_core::grounding::{GroundingBackend, StubGrounder};

use crate::clients::GroundRequest;

#[derive(Clone)]
struct StubState {
    grounder: Arc<StubGrounder>,
}

fn backend_error(e: BackendError) -> Response {
    let status = match e {
        BackendError::NotFound(_) => StatusCode::NOT_FOUND,
        BackendError::Refused(_) | BackendError::OverLength { .. } => StatusCode::BAD_REQUEST,
        _ => StatusCode::SERVICE_UNAVAILABLE,
    };
    (status, e.to_string()).into_response()
}

async fn ground(State(s): State<StubState>, Json(req): Json<GroundRequest>) -> Response {
    match s.grounder.ground(&req.image_id, &req.phrase) {
        Ok(r) => Json(r).into_response(),
        Err(e) => backend_error(e),
    }
}

async fn generate(Json(req): Json<GenerateRequest>) -> Response {
    match TemplateEngine.complete(&req) {
        Ok(text) => Json(GenerateResponse { text }).into_response(),
        Err(e) => backend_error(e),
    }
}

/// `/ground` backed by `grounder`, `/v1/generate` backed by the template engine.
pub fn stub_router(grounder: StubGrounder) -> Router {
    Router::new()
        .route("/ground", post(ground))
        .route("/v1/generate", post(generate))
        .with_state(StubState {
            grounder: Arc::new(grounder),
        })
}
