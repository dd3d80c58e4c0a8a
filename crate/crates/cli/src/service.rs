//! HTTP front end: `POST /v1/report` and `GET /healthz`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use copilot_core::agent::{Query, TerminalStatus};
use copilot_core::config::Engine;
use serde::{Deserialize, Serialize};

use crate::commands::{load_volume, status_name};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRequest {
    pub case_id: String,
    pub query: String,
    pub organ: String,
    /// Path of the case volume as seen by the server.
    pub volume_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_status: Option<TerminalStatus>,
}

fn error(code: StatusCode, error: &str, message: impl Into<String>, status: Option<TerminalStatus>) -> Response {
    let body = ErrorBody { error: error.into(), message: message.into(), terminal_status: status };
    (code, [(header::CONTENT_TYPE, "application/json")], serde_json::to_vec(&body).expect("error serializes"))
        .into_response()
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new().route("/healthz", get(healthz)).route("/v1/report", post(report)).with_state(engine)
}

async fn healthz() -> &'static str {
    "ok\n"
}

/// Maps a request to one isolated case run. A completed run returns exactly
/// the bytes the CLI writes to `report.json`.
async fn report(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let req: ReportRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "malformed_request", e.to_string(), None),
    };
    for (name, v) in [("case_id", &req.case_id), ("query", &req.query), ("organ", &req.organ), ("volume_ref", &req.volume_ref)] {
        if v.trim().is_empty() {
            return error(StatusCode::BAD_REQUEST, "malformed_request", format!("{name} must not be empty"), None);
        }
    }
    if !engine.has_case(&req.case_id) {
        return error(StatusCode::NOT_FOUND, "unknown_case", format!("no masks for case {:?}", req.case_id), None);
    }
    let path = PathBuf::from(&req.volume_ref);
    let volume = match tokio::task::spawn_blocking(move || load_volume(&path)).await {
        Ok(Ok(v)) => Arc::new(v),
        Ok(Err(e)) => return error(StatusCode::BAD_REQUEST, "volume_unreadable", format!("{e:#}"), None),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None),
    };
    let run = engine.run(Query::new(req.query, req.case_id.clone(), req.organ), volume, req.volume_ref).await;
    let status = run.status();
    match (status, run.report) {
        (TerminalStatus::Completed, Some(r)) => {
            (StatusCode::OK, [(header::CONTENT_TYPE, "application/json")], r.to_json_bytes()).into_response()
        }
        (TerminalStatus::Completed, None) => {
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", "completed run holds no report", Some(status))
        }
        (s, _) => {
            let (code, tag) = match s {
                TerminalStatus::TimeBudget => (StatusCode::GATEWAY_TIMEOUT, "time_budget_exceeded"),
                TerminalStatus::StepCap => (StatusCode::UNPROCESSABLE_ENTITY, "step_cap_reached"),
                _ => (StatusCode::BAD_GATEWAY, "run_aborted"),
            };
            let last = run.trace.warnings().last().map(|w| w.message.clone());
            let message = match last {
                Some(w) => format!("case {} ended with status {}: {w}", req.case_id, status_name(s)),
                None => format!("case {} ended with status {}", req.case_id, status_name(s)),
            };
            error(code, tag, message, Some(s))
        }
    }
}

pub async fn serve(engine: Arc<Engine>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
