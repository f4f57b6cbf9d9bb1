//! HTTP scoring service. The model is loaded once and shared read-only;
//! a missing or unreadable model leaves the service up but answering 503.

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use halluguard::arbitration::arbitrate;
use halluguard::classifier::{file_hash, load_model, TrainedModel};
use halluguard::features::assemble_feature_vector;
use halluguard::judge::Category;
use halluguard::trace::parse_trace_line;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{AppError, Result};

#[derive(Debug, Clone)]
pub struct ServiceState {
    model: Option<Arc<TrainedModel>>,
    model_hash: Option<String>,
    threshold: f64,
}

impl ServiceState {
    pub fn new(model: Option<TrainedModel>, model_hash: Option<String>, threshold: f64) -> Self {
        Self {
            model: model.map(Arc::new),
            model_hash,
            threshold,
        }
    }

    /// Loads the model at `path`; on failure logs the error and starts
    /// without a model.
    pub fn load(path: Option<&Path>, threshold: f64) -> Self {
        let Some(path) = path else {
            tracing::warn!("no model configured; scoring disabled");
            return Self::new(None, None, threshold);
        };
        match (load_model(path), file_hash(path)) {
            (Ok(m), Ok(h)) => Self::new(Some(m), Some(h), threshold),
            (Err(e), _) => {
                tracing::error!("model {} not loaded: {e}", path.display());
                Self::new(None, None, threshold)
            }
            (_, Err(e)) => {
                tracing::error!("model {} not loaded: {e}", path.display());
                Self::new(None, None, threshold)
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub hallucination_probability: f64,
    pub schema_id: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArbitrateRequest {
    db_category: Category,
    clf_probability: f64,
    #[serde(default)]
    threshold: Option<f64>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn score(State(state): State<ServiceState>, body: Bytes) -> Response {
    let Some(model) = &state.model else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model not loaded");
    };
    let Some(spec) = &model.feature_spec else {
        return error(
            StatusCode::SERVICE_UNAVAILABLE,
            "model has no feature spec and cannot score traces",
        );
    };
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t.trim(),
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("body is not UTF-8: {e}")),
    };
    let trace = match parse_trace_line(text, 1) {
        Ok(t) => t,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let vector = match assemble_feature_vector(&trace, &spec.schema, &spec.config) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    match model.predict_values(&vector.values) {
        Ok(p) => Json(ScoreResponse {
            hallucination_probability: p,
            schema_id: vector.schema_id,
            warnings: vector.warnings,
        })
        .into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn arbitrate_handler(State(state): State<ServiceState>, body: Bytes) -> Response {
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let req: ArbitrateRequest = match serde_path_to_error::deserialize(de) {
        Ok(r) => r,
        Err(e) => {
            return error(
                StatusCode::BAD_REQUEST,
                format!("at `{}`: {}", e.path(), e.inner()),
            )
        }
    };
    let threshold = req.threshold.unwrap_or(state.threshold);
    match arbitrate(req.db_category, req.clf_probability, threshold) {
        Ok(outcome) => Json(outcome).into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn healthz(State(state): State<ServiceState>) -> Response {
    let body = json!({
        "status": if state.model.is_some() { "ok" } else { "degraded" },
        "model_hash": state.model_hash,
        "schema_id": state.model.as_ref().map(|m| m.schema_id.clone()),
    });
    let status = if state.model.is_some() {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    (status, Json(body)).into_response()
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/arbitrate", post(arbitrate_handler))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub fn serve(addr: &str, model: Option<&Path>, threshold: f64) -> Result<()> {
    let state = ServiceState::load(model, threshold);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| AppError::Domain(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| AppError::Io {
                path: addr.to_string(),
                source,
            })?;
        tracing::info!("listening on {addr}");
        axum::serve(listener, router(state))
            .await
            .map_err(|source| AppError::Io {
                path: addr.to_string(),
                source,
            })
    })
}
