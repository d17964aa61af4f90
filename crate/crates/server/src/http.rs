//! JSON over HTTP for applications, plus metrics and admin endpoints.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use predserve_core::{Error, Feedback, InputPayload, InputType, Output};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::frontend::Frontend;

#[derive(Debug, Deserialize)]
pub struct PredictRequest {
    pub app: String,
    #[serde(default)]
    pub context_id: String,
    pub input: Value,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PredictResponse {
    pub output: String,
    pub confidence: f64,
    pub is_default: bool,
    pub models_used: u32,
    pub models_missing: u32,
    pub latency_micros: u64,
}

#[derive(Debug, Deserialize)]
pub struct FeedbackRequest {
    pub app: String,
    #[serde(default)]
    pub context_id: String,
    pub input: Value,
    pub label: Value,
}

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::UnknownApp(_) => StatusCode::NOT_FOUND,
        Error::InputTypeMismatch { .. } | Error::MalformedInput(_) | Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
        Error::QueueFull => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.0.to_string(), "retryable": self.0.is_retryable() });
        (status_for(&self.0), Json(body)).into_response()
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedInput(msg.into())
}

/// Reads a JSON input as the application's declared type. Numeric types take
/// arrays of numbers; `string` takes a string; `bytes` takes either an array
/// of 0..=255 or a string (its UTF-8 bytes).
pub fn parse_input(ty: InputType, v: &Value) -> Result<InputPayload, Error> {
    let numbers = || -> Result<&Vec<Value>, Error> { v.as_array().ok_or_else(|| malformed(format!("{ty} input must be an array"))) };
    let payload = match ty {
        InputType::String => InputPayload::String(v.as_str().ok_or_else(|| malformed("string input must be a JSON string"))?.to_string()),
        InputType::Bytes => match v {
            Value::String(s) => InputPayload::Bytes(s.as_bytes().to_vec()),
            _ => InputPayload::Bytes(
                numbers()?
                    .iter()
                    .map(|x| {
                        x.as_u64().filter(|b| *b <= 255).map(|b| b as u8).ok_or_else(|| malformed("bytes must be integers in 0..=255"))
                    })
                    .collect::<Result<_, _>>()?,
            ),
        },
        InputType::Ints => InputPayload::Ints(
            numbers()?
                .iter()
                .map(|x| x.as_i64().and_then(|i| i32::try_from(i).ok()).ok_or_else(|| malformed("ints must be 32-bit integers")))
                .collect::<Result<_, _>>()?,
        ),
        InputType::Floats => InputPayload::Floats(
            numbers()?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32).ok_or_else(|| malformed("floats must be numbers")))
                .collect::<Result<_, _>>()?,
        ),
        InputType::Doubles => InputPayload::Doubles(
            numbers()?.iter().map(|x| x.as_f64().ok_or_else(|| malformed("doubles must be numbers"))).collect::<Result<_, _>>()?,
        ),
    };
    if payload.is_empty() {
        return Err(malformed("input must not be empty"));
    }
    Ok(payload)
}

fn parse_label(v: &Value) -> Result<Output, Error> {
    match v {
        Value::String(s) => Ok(Output::new(s.as_str())),
        Value::Number(n) => Ok(Output::new(n.to_string())),
        Value::Bool(b) => Ok(Output::new(b.to_string())),
        _ => Err(malformed("label must be a string or a number")),
    }
}

pub fn router(frontend: Arc<Frontend>) -> Router {
    Router::new()
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/feedback", post(feedback))
        .route("/metrics", get(metrics))
        .route("/admin/state/{app}", get(global_state))
        .route("/admin/state/{app}/{context}", get(context_state))
        .route("/admin/replicas", get(replicas))
        .route("/admin/reload", post(reload))
        .with_state(frontend)
}

fn input_type_of(fe: &Frontend, app: &str) -> Result<InputType, Error> {
    fe.app_config(app).map(|a| a.input_type).ok_or_else(|| Error::UnknownApp(app.to_string()))
}

async fn predict(State(fe): State<Arc<Frontend>>, Json(req): Json<PredictRequest>) -> Result<Json<PredictResponse>, ApiError> {
    let input = parse_input(input_type_of(&fe, &req.app)?, &req.input)?;
    let p = fe.predict(&req.app, &req.context_id, input).await?;
    Ok(Json(PredictResponse {
        output: p.prediction.output.value().to_string(),
        confidence: p.prediction.confidence,
        is_default: p.prediction.is_default,
        models_used: p.prediction.models_used,
        models_missing: p.prediction.models_missing,
        latency_micros: p.latency.as_micros() as u64,
    }))
}

async fn feedback(State(fe): State<Arc<Frontend>>, Json(req): Json<FeedbackRequest>) -> Result<Response, ApiError> {
    let input = parse_input(input_type_of(&fe, &req.app)?, &req.input)?;
    let label = parse_label(&req.label)?;
    fe.feedback(Feedback { app: req.app, context_id: req.context_id, input, label })?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "status": "accepted" }))).into_response())
}

async fn metrics(State(fe): State<Arc<Frontend>>) -> impl IntoResponse {
    ([("content-type", "text/plain; charset=utf-8")], fe.render_metrics())
}

async fn global_state(State(fe): State<Arc<Frontend>>, Path(app): Path<String>) -> Result<Json<Value>, ApiError> {
    state_json(&fe, &app, "")
}

async fn context_state(State(fe): State<Arc<Frontend>>, Path((app, context)): Path<(String, String)>) -> Result<Json<Value>, ApiError> {
    state_json(&fe, &app, &context)
}

fn state_json(fe: &Frontend, app: &str, context: &str) -> Result<Json<Value>, ApiError> {
    let s = fe.context_state(app, context)?;
    let models: Vec<Value> =
        s.summary.models.iter().map(|m| json!({ "model": m.model.as_str(), "weight": m.weight, "probability": m.probability })).collect();
    Ok(Json(json!({
        "app": app,
        "context_id": context,
        "policy": s.policy,
        "stored": s.stored,
        "query_count": s.summary.query_count,
        "models": models,
    })))
}

async fn replicas(State(fe): State<Arc<Frontend>>) -> Json<Value> {
    let rs: Vec<Value> = fe
        .layer()
        .replicas()
        .into_iter()
        .map(|r| {
            json!({
                "id": r.id.0,
                "model": r.model.as_str(),
                "queue_len": r.queue_len,
                "max_batch": r.max_batch,
                "suspect": r.suspect,
            })
        })
        .collect();
    Json(Value::Array(rs))
}

async fn reload(State(fe): State<Arc<Frontend>>) -> Result<Json<Value>, ApiError> {
    let c = fe.reload()?;
    let thresholds: Vec<Value> = c.confidence_thresholds.iter().map(|(a, t)| json!({ "app": a, "confidence_threshold": t })).collect();
    let delays: Vec<Value> =
        c.batch_delays.iter().map(|(m, d)| json!({ "model": m.as_str(), "batch_delay_ms": d.as_secs_f64() * 1e3 })).collect();
    Ok(Json(json!({
        "confidence_thresholds": thresholds,
        "batch_delays": delays,
        "needs_restart": c.needs_restart,
    })))
}
