use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use oairelay_core::{serialize_response, Datestamp, CONTENT_TYPE};
use serde::Serialize;
use tokio::net::TcpListener;

use crate::aggregator::{Aggregator, RegisterError};
use crate::config::RepositoryConfig;
use crate::record::{RepoStatus, SourceRepository};
use crate::serve::View;

pub fn router(agg: Arc<Aggregator>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/oai", get(oai_aggregated).post(oai_aggregated))
        .route("/oai/{repo}", get(oai_wrapped).post(oai_wrapped))
        .route("/admin/repositories", get(list_repositories).post(register))
        .route("/admin/status", get(status))
        .route("/admin/harvest/{repo}", post(harvest_now))
        .with_state(agg)
}

pub async fn serve(
    listener: TcpListener,
    agg: Arc<Aggregator>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(agg))
        .with_graceful_shutdown(shutdown)
        .await
}

/// GET arguments come from the query string, POST arguments from a
/// form-encoded body.
fn request_pairs(method: &Method, query: Option<String>, body: &[u8]) -> Vec<(String, String)> {
    let raw: &[u8] = if method == Method::POST {
        body
    } else {
        query.as_deref().unwrap_or_default().as_bytes()
    };
    url::form_urlencoded::parse(raw).into_owned().collect()
}

fn answer(agg: &Aggregator, view: View, pairs: Vec<(String, String)>) -> Response {
    match agg.serve_pairs(&view, pairs) {
        Ok(resp) => (
            [(header::CONTENT_TYPE, CONTENT_TYPE)],
            serialize_response(&resp),
        )
            .into_response(),
        Err(unknown) => (
            StatusCode::NOT_FOUND,
            format!("no repository {:?}\n", unknown.0),
        )
            .into_response(),
    }
}

async fn oai_aggregated(
    State(agg): State<Arc<Aggregator>>,
    method: Method,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> Response {
    answer(&agg, View::Aggregated, request_pairs(&method, query, &body))
}

async fn oai_wrapped(
    State(agg): State<Arc<Aggregator>>,
    Path(repo): Path<String>,
    method: Method,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> Response {
    answer(&agg, View::Wrapped(repo), request_pairs(&method, query, &body))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RepositoryStatus {
    pub id: String,
    pub base_url: String,
    pub trust_rank: i64,
    pub status: RepoStatus,
    pub formats: Vec<String>,
    pub last_harvest: std::collections::BTreeMap<String, Datestamp>,
    pub records: usize,
    pub consecutive_failures: u32,
    pub next_attempt: Option<DateTime<Utc>>,
    pub last_error: Option<String>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StatusReport {
    pub total_records: usize,
    pub generation: u64,
    pub repositories: Vec<RepositoryStatus>,
}

pub fn status_report(agg: &Aggregator) -> StatusReport {
    let store = agg.store();
    let repositories = store
        .repos()
        .map(|r| RepositoryStatus {
            id: r.id.clone(),
            base_url: r.base_url.clone(),
            trust_rank: r.trust_rank,
            status: r.status.clone(),
            formats: r.harvest_formats().into_iter().map(|f| f.prefix).collect(),
            last_harvest: r.last_harvest.clone(),
            records: store.all_versions().filter(|v| v.source == r.id).count(),
            consecutive_failures: r.consecutive_failures,
            next_attempt: r.next_attempt,
            last_error: r.last_error.clone(),
        })
        .collect();
    StatusReport {
        total_records: store.record_count(),
        generation: store.generation(),
        repositories,
    }
}

async fn status(State(agg): State<Arc<Aggregator>>) -> Json<StatusReport> {
    Json(status_report(&agg))
}

async fn list_repositories(State(agg): State<Arc<Aggregator>>) -> Json<Vec<SourceRepository>> {
    Json(agg.repositories())
}

async fn register(State(agg): State<Arc<Aggregator>>, body: Bytes) -> Response {
    let rc: RepositoryConfig = match serde_json::from_slice(&body) {
        Ok(rc) => rc,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("{e}\n")).into_response(),
    };
    match agg.register(rc).await {
        Ok(repo) => {
            let code = match repo.status {
                RepoStatus::Active => StatusCode::CREATED,
                RepoStatus::Pending => StatusCode::ACCEPTED,
            };
            (code, Json(repo)).into_response()
        }
        Err(e) => {
            let code = match e {
                RegisterError::Duplicate(_) | RegisterError::TrustRankTaken { .. } => {
                    StatusCode::CONFLICT
                }
                RegisterError::BadId(_) => StatusCode::BAD_REQUEST,
                RegisterError::Rejected(_) => StatusCode::UNPROCESSABLE_ENTITY,
                RegisterError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            (code, format!("{e}\n")).into_response()
        }
    }
}

async fn harvest_now(State(agg): State<Arc<Aggregator>>, Path(repo): Path<String>) -> Response {
    match agg.harvest_repository(&repo).await {
        Some(summary) => Json(summary).into_response(),
        None => (StatusCode::NOT_FOUND, format!("no repository {repo:?}\n")).into_response(),
    }
}
