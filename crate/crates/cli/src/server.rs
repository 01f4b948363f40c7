//! HTTP transport for the workbench service under `/api/v1`.
//!
//! `POST /api/v1/<operation>` takes the request object as JSON; the
//! read-only operations also answer `GET` with query parameters. Suite runs
//! can stream progress as server-sent events from `/api/v1/suite-run/stream`.

use std::convert::Infallible;
use std::io::Write;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use gramwb::workbench::{Service, ServiceError, SuiteRunRequest, OPERATIONS};
use serde_json::{json, Map, Value};
use tokio::sync::mpsc;

pub const API_PREFIX: &str = "/api/v1";

/// Operations reachable with `GET`.
const READ_ONLY: &[&str] = &["check", "chart", "fragments", "trace.events", "grammar-index"];

/// Query parameters holding comma-separated lists.
const LIST_PARAMS: &[&str] = &["labels", "tags", "trace", "breakpoints", "filter"];

/// Query parameters holding numbers.
const NUMBER_PARAMS: &[&str] = &["parse_id", "from", "to", "since", "reading_a", "reading_b", "workers"];

/// Operation name for a URL path below the prefix: `trace/start` is
/// `trace.start`, `sessions` creates a session.
pub fn operation_for(path: &str) -> Option<&'static str> {
    let dotted = path.trim_matches('/').replace('/', ".");
    let dotted = match dotted.as_str() {
        "sessions" => "session.create",
        other => other,
    };
    OPERATIONS.iter().copied().find(|op| *op == dotted)
}

pub fn status_for(e: &ServiceError) -> StatusCode {
    match e.code.as_str() {
        "bad_request" => StatusCode::BAD_REQUEST,
        "unknown_operation" | "session_not_found" | "not_found" | "no_baseline" => StatusCode::NOT_FOUND,
        "method_not_allowed" => StatusCode::METHOD_NOT_ALLOWED,
        "engine_mismatch" | "no_grammar" => StatusCode::CONFLICT,
        "invalid_input" | "parse_error" | "sentence_mismatch" => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn error_response(e: ServiceError) -> Response {
    (status_for(&e), Json(e.to_json())).into_response()
}

fn request_body(body: &Bytes) -> Result<Value, ServiceError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(json!({}));
    }
    let v: Value =
        serde_json::from_slice(body).map_err(|e| ServiceError::bad_request(format!("malformed JSON: {e}")))?;
    if !v.is_object() {
        return Err(ServiceError::bad_request("the request body must be a JSON object"));
    }
    Ok(v)
}

/// Typed request object from query parameters.
pub fn query_request(params: &[(String, String)]) -> Value {
    let mut m = Map::new();
    for (k, v) in params {
        let value = if LIST_PARAMS.contains(&k.as_str()) {
            Value::Array(v.split(',').filter(|s| !s.is_empty()).map(|s| Value::String(s.to_string())).collect())
        } else if NUMBER_PARAMS.contains(&k.as_str()) {
            v.parse::<u64>().map(Value::from).unwrap_or_else(|_| Value::String(v.clone()))
        } else {
            Value::String(v.clone())
        };
        m.insert(k.clone(), value);
    }
    Value::Object(m)
}

async fn dispatch(service: Arc<Service>, op: &'static str, req: Value) -> Response {
    match tokio::task::spawn_blocking(move || service.handle(op, req)).await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => error_response(e),
        Err(e) => error_response(ServiceError::new("internal", e.to_string())),
    }
}

async fn post_op(State(service): State<Arc<Service>>, Path(path): Path<String>, body: Bytes) -> Response {
    let Some(op) = operation_for(&path) else {
        return error_response(ServiceError::new("unknown_operation", format!("unknown operation `{path}`")));
    };
    match request_body(&body) {
        Ok(req) => dispatch(service, op, req).await,
        Err(e) => error_response(e),
    }
}

async fn get_op(
    State(service): State<Arc<Service>>,
    Path(path): Path<String>,
    Query(params): Query<Vec<(String, String)>>,
) -> Response {
    match operation_for(&path) {
        Some(op) if READ_ONLY.contains(&op) => dispatch(service, op, query_request(&params)).await,
        Some(op) => error_response(ServiceError::new("method_not_allowed", format!("`{op}` needs POST"))),
        None => error_response(ServiceError::new("unknown_operation", format!("unknown operation `{path}`"))),
    }
}

async fn close_session(State(service): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    dispatch(service, "session.close", json!({ "session_id": id })).await
}

async fn operations() -> Json<Value> {
    Json(json!({ "operations": OPERATIONS }))
}

/// Server-sent events: one `progress` event per finished sentence, then a
/// `result` event with the full response, or an `error` event.
async fn suite_stream(State(service): State<Arc<Service>>, body: Bytes) -> Response {
    let req: SuiteRunRequest = match request_body(&body).and_then(|v| {
        serde_json::from_value(v).map_err(|e| ServiceError::bad_request(format!("malformed request: {e}")))
    }) {
        Ok(r) => r,
        Err(e) => return error_response(e),
    };
    let (tx, rx) = mpsc::unbounded_channel::<Event>();
    tokio::task::spawn_blocking(move || {
        let progress_tx = tx.clone();
        let report = move |p: gramwb::testsuite::Progress| {
            let data = serde_json::to_string(&p).expect("progress serializes");
            let _ = progress_tx.send(Event::default().event("progress").data(data));
        };
        let last = match service.suite_run(req, &report) {
            Ok(v) => Event::default().event("result").data(v.to_string()),
            Err(e) => Event::default().event("error").data(e.to_json().to_string()),
        };
        let _ = tx.send(last);
    });
    Sse::new(event_stream(rx)).into_response()
}

fn event_stream(rx: mpsc::UnboundedReceiver<Event>) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|e| (Ok(e), rx)) })
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route(&format!("{API_PREFIX}/operations"), get(operations))
        .route(&format!("{API_PREFIX}/sessions/{{id}}"), axum::routing::delete(close_session))
        .route(&format!("{API_PREFIX}/suite-run/stream"), post(suite_stream))
        .route(&format!("{API_PREFIX}/{{*path}}"), post(post_op).get(get_op))
        .with_state(service)
}

/// Bind the configured port on localhost and serve until the process ends.
pub async fn serve(config: gramwb::workbench::Config, log: &mut dyn Write) -> std::io::Result<()> {
    let addr = SocketAddr::from(([127, 0, 0, 1], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let _ = writeln!(log, "listening on http://{}{API_PREFIX}", listener.local_addr()?);
    let service = Arc::new(gramwb::workbench::Service::new(config));
    let reaper = service.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            reaper.expire_idle();
        }
    });
    axum::serve(listener, router(service)).await
}
