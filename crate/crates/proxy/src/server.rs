use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::body::{to_bytes, Body};
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use oairelay_core::CONTENT_TYPE;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;

use crate::repair::{repair_response, Verdict};
use crate::report::{Outcome, RepairReport, ReportStore};
use crate::routes::{ProxyRoute, RouteError, RoutingTable};

pub const REPORT_ID_HEADER: &str = "x-repair-report-id";
pub const FIXES_HEADER: &str = "x-repair-fixes";
pub const DROPPED_HEADER: &str = "x-repair-dropped";
pub const REPORT_URL_HEADER: &str = "x-repair-report";

const MAX_BODY: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMode {
    /// `/{prefix}/{repositoryId}?...` only.
    Path,
    /// `/{prefix}?url=...` only.
    Transparent,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_prefix")]
    pub prefix: String,
    #[serde(default)]
    pub mode: ProxyMode,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub routes: Vec<ProxyRoute>,
    #[serde(default = "default_report_capacity")]
    pub report_capacity: usize,
    #[serde(default)]
    pub report_log: Option<PathBuf>,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8081))
}

fn default_prefix() -> String {
    "proxy".into()
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_report_capacity() -> usize {
    1024
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            prefix: default_prefix(),
            mode: ProxyMode::default(),
            timeout_ms: default_timeout_ms(),
            routes: Vec::new(),
            report_capacity: default_report_capacity(),
            report_log: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("cannot open report log {path}: {source}")]
    ReportLog {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub struct ProxyState {
    table: RwLock<Arc<RoutingTable>>,
    http: reqwest::Client,
    reports: ReportStore,
    mode: ProxyMode,
    epoch: u64,
    seq: AtomicU64,
}

impl ProxyState {
    pub fn new(config: &ProxyConfig) -> Result<Self, ProxyError> {
        let table = RoutingTable::new(&config.prefix, config.routes.clone())?;
        let reports = match &config.report_log {
            Some(path) => ReportStore::with_log(config.report_capacity, path).map_err(|source| {
                ProxyError::ReportLog {
                    path: path.clone(),
                    source,
                }
            })?,
            None => ReportStore::new(config.report_capacity),
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .expect("HTTP client configuration is static");
        let epoch = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Ok(Self {
            table: RwLock::new(Arc::new(table)),
            http,
            reports,
            mode: config.mode,
            epoch,
            seq: AtomicU64::new(0),
        })
    }

    pub fn routes(&self) -> Arc<RoutingTable> {
        self.table.read().expect("route table lock").clone()
    }

    /// Swaps in a new table; in-flight requests keep the one they started with.
    pub fn replace_routes(&self, table: RoutingTable) {
        *self.table.write().expect("route table lock") = Arc::new(table);
    }

    pub fn reports(&self) -> &ReportStore {
        &self.reports
    }

    fn next_id(&self) -> String {
        let n = self.seq.fetch_add(1, Ordering::Relaxed);
        format!("{:x}-{n}", self.epoch)
    }
}

pub fn router(state: Arc<ProxyState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/admin/routes", get(list_routes).put(put_routes))
        .route("/admin/reports/{id}", get(get_report))
        .fallback(proxy_handle)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<ProxyState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

#[derive(Serialize)]
struct RoutesView<'a> {
    prefix: &'a str,
    routes: &'a [ProxyRoute],
}

async fn list_routes(State(state): State<Arc<ProxyState>>) -> Response {
    let table = state.routes();
    Json(RoutesView {
        prefix: table.prefix(),
        routes: table.routes(),
    })
    .into_response()
}

async fn put_routes(
    State(state): State<Arc<ProxyState>>,
    Json(routes): Json<Vec<ProxyRoute>>,
) -> Response {
    let prefix = state.routes().prefix().to_owned();
    match RoutingTable::new(&prefix, routes) {
        Ok(table) => {
            state.replace_routes(table);
            StatusCode::NO_CONTENT.into_response()
        }
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    }
}

async fn get_report(State(state): State<Arc<ProxyState>>, Path(id): Path<String>) -> Response {
    match state.reports().get(&id) {
        Some(r) => Json(r).into_response(),
        None => (StatusCode::NOT_FOUND, format!("no report {id:?}\n")).into_response(),
    }
}

fn plain(status: StatusCode, message: impl Into<String>) -> Response {
    let mut msg = message.into();
    msg.push('\n');
    (status, [(header::CONTENT_TYPE, "text/plain; charset=utf-8")], msg).into_response()
}

/// Works out the upstream URL for a proxied request.
fn upstream_url(
    state: &ProxyState,
    path: &str,
    query: Option<&str>,
) -> Result<(Option<String>, String), Response> {
    let table = state.routes();
    if table.is_prefix(path) {
        if state.mode == ProxyMode::Path {
            return Err(plain(StatusCode::NOT_FOUND, "transparent mode is disabled"));
        }
        let mut target = None;
        let mut rest = url::form_urlencoded::Serializer::new(String::new());
        for (k, v) in url::form_urlencoded::parse(query.unwrap_or("").as_bytes()) {
            if k == "url" && target.is_none() {
                target = Some(v.into_owned());
            } else {
                rest.append_pair(&k, &v);
            }
        }
        let Some(target) = target else {
            return Err(plain(StatusCode::BAD_REQUEST, "missing url parameter"));
        };
        let parsed = url::Url::parse(&target)
            .ok()
            .filter(|u| matches!(u.scheme(), "http" | "https"));
        if parsed.is_none() {
            return Err(plain(
                StatusCode::BAD_REQUEST,
                format!("url {target:?} is not an absolute http(s) URL"),
            ));
        }
        let extra = rest.finish();
        let url = if extra.is_empty() {
            target
        } else if target.contains('?') {
            format!("{target}&{extra}")
        } else {
            format!("{target}?{extra}")
        };
        return Ok((None, url));
    }
    if state.mode == ProxyMode::Transparent {
        return Err(plain(StatusCode::NOT_FOUND, "path-style routing is disabled"));
    }
    let route = table.resolve(path).map_err(|e| plain(StatusCode::NOT_FOUND, e.to_string()))?;
    let url = match query {
        Some(q) if !q.is_empty() => {
            let sep = if route.base_url.contains('?') { '&' } else { '?' };
            format!("{}{sep}{q}", route.base_url)
        }
        _ => route.base_url.clone(),
    };
    Ok((Some(route.repository_id.clone()), url))
}

async fn proxy_handle(State(state): State<Arc<ProxyState>>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    if parts.method != Method::GET && parts.method != Method::POST {
        return plain(StatusCode::METHOD_NOT_ALLOWED, "only GET and POST are proxied");
    }
    let (route_id, url) = match upstream_url(&state, parts.uri.path(), parts.uri.query()) {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    let id = state.next_id();
    let mut report = RepairReport::new(id.clone(), route_id, url.clone());

    let mut upstream = state.http.request(parts.method.clone(), &url);
    if parts.method == Method::POST {
        let Ok(bytes) = to_bytes(body, MAX_BODY).await else {
            return plain(StatusCode::PAYLOAD_TOO_LARGE, "request body too large");
        };
        if let Some(ct) = parts.headers.get(header::CONTENT_TYPE) {
            upstream = upstream.header(header::CONTENT_TYPE, ct.clone());
        }
        upstream = upstream.body(bytes);
    }

    let unreachable = |report: &mut RepairReport, e: reqwest::Error| {
        let what = if e.is_timeout() { "timed out" } else { "unreachable" };
        report.outcome = Outcome::Unreachable;
        report.status = StatusCode::GATEWAY_TIMEOUT.as_u16();
        report.error = Some(format!("upstream {what}: {e}"));
        format!("upstream {url} {what}")
    };
    let resp = match upstream.send().await {
        Ok(r) => r,
        Err(e) => {
            let msg = unreachable(&mut report, e);
            state.reports.push(report);
            return with_report_headers(plain(StatusCode::GATEWAY_TIMEOUT, msg), &id, 0, 0);
        }
    };
    let status = resp.status();
    let content_type = resp.headers().get(header::CONTENT_TYPE).cloned();
    let bytes = match resp.bytes().await {
        Ok(b) => b,
        Err(e) => {
            let msg = unreachable(&mut report, e);
            state.reports.push(report);
            return with_report_headers(plain(StatusCode::GATEWAY_TIMEOUT, msg), &id, 0, 0);
        }
    };

    if status != StatusCode::OK {
        report.outcome = Outcome::UpstreamStatus;
        report.status = status.as_u16();
        state.reports.push(report);
        let mut out = Response::new(Body::from(bytes));
        *out.status_mut() = status;
        if let Some(ct) = content_type {
            out.headers_mut().insert(header::CONTENT_TYPE, ct);
        }
        return with_report_headers(out, &id, 0, 0);
    }

    let outcome = repair_response(&bytes);
    report.absorb(&outcome);
    let fixes = outcome.fix_count();
    let dropped = outcome.dropped_count;
    let response = match outcome.verdict {
        Verdict::Clean => {
            let mut out = Response::new(Body::from(bytes));
            let ct = content_type.unwrap_or(HeaderValue::from_static(CONTENT_TYPE));
            out.headers_mut().insert(header::CONTENT_TYPE, ct);
            out
        }
        Verdict::Repaired => {
            ([(header::CONTENT_TYPE, CONTENT_TYPE)], outcome.body).into_response()
        }
        Verdict::Rejected => {
            report.status = StatusCode::BAD_GATEWAY.as_u16();
            let first = outcome
                .residual_violations
                .first()
                .map_or_else(String::new, |v| format!(": {v}"));
            plain(
                StatusCode::BAD_GATEWAY,
                format!("upstream response could not be repaired{first}"),
            )
        }
    };
    if report.outcome != Outcome::Clean {
        tracing::debug!(
            request = %id,
            fixes,
            dropped,
            outcome = ?report.outcome,
            "repaired upstream response"
        );
    }
    state.reports.push(report);
    with_report_headers(response, &id, fixes, dropped)
}

fn with_report_headers(mut resp: Response, id: &str, fixes: usize, dropped: usize) -> Response {
    let h = resp.headers_mut();
    let val = |s: String| HeaderValue::from_str(&s).expect("ascii header value");
    h.insert(REPORT_ID_HEADER, val(id.to_owned()));
    h.insert(FIXES_HEADER, val(fixes.to_string()));
    h.insert(DROPPED_HEADER, val(dropped.to_string()));
    h.insert(REPORT_URL_HEADER, val(format!("/admin/reports/{id}")));
    resp
}
