use std::collections::HashMap;
use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{ConnectInfo, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Redirect, Response};
use axum::routing::get;
use axum::Router;
use oairelay_core::{ClientError, OaiClient, OaiErrorCode, OaiRequest, Payload, Verb};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::pages::{
    index_path, page_count, render_index, render_record, render_robots, render_sitemap, DcFields,
    RecordPage,
};
use crate::throttle::{Throttle, ThrottleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Root URL of the backing aggregator; its wrapped views live under
    /// `{aggregator_url}/oai/{repositoryId}`.
    pub aggregator_url: String,
    /// Public URL used in the sitemap. Defaults to `http://{listen}`.
    #[serde(default)]
    pub public_url: Option<String>,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default)]
    pub throttle: ThrottleConfig,
    /// Repositories disallowed in robots.txt and left out of the sitemap.
    #[serde(default)]
    pub excluded: Vec<String>,
    #[serde(default = "default_prefix")]
    pub metadata_prefix: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// How long a repository's identifier listing is reused.
    #[serde(default = "default_listing_ttl_ms")]
    pub listing_ttl_ms: u64,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8083))
}

fn default_page_size() -> usize {
    50
}

fn default_prefix() -> String {
    "oai_dc".into()
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_listing_ttl_ms() -> u64 {
    5_000
}

impl GatewayConfig {
    pub fn new(aggregator_url: impl Into<String>) -> Self {
        Self {
            listen: default_listen(),
            aggregator_url: aggregator_url.into(),
            public_url: None,
            page_size: default_page_size(),
            throttle: ThrottleConfig::default(),
            excluded: Vec::new(),
            metadata_prefix: default_prefix(),
            timeout_ms: default_timeout_ms(),
            listing_ttl_ms: default_listing_ttl_ms(),
        }
    }

    pub fn public_url(&self) -> String {
        match &self.public_url {
            Some(u) => u.trim_end_matches('/').to_owned(),
            None => format!("http://{}", self.listen),
        }
    }

    fn aggregator_root(&self) -> &str {
        self.aggregator_url.trim_end_matches('/')
    }

    pub fn wrapped_url(&self, repo: &str) -> String {
        format!("{}/oai/{repo}", self.aggregator_root())
    }
}

pub struct GatewayState {
    config: GatewayConfig,
    client: OaiClient,
    throttle: Throttle<IpAddr>,
    listings: Mutex<HashMap<String, (Instant, Arc<Vec<String>>)>>,
}

#[derive(Debug)]
enum Failure {
    NotFound,
    Gone,
    Unavailable(String),
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        match self {
            Failure::NotFound => (StatusCode::NOT_FOUND, "not found\n").into_response(),
            Failure::Gone => (StatusCode::GONE, "record deleted\n").into_response(),
            Failure::Unavailable(why) => {
                (StatusCode::SERVICE_UNAVAILABLE, format!("aggregator unavailable: {why}\n"))
                    .into_response()
            }
        }
    }
}

fn upstream(e: ClientError) -> Failure {
    match e {
        ClientError::Status { status: 404, .. } => Failure::NotFound,
        e => Failure::Unavailable(e.to_string()),
    }
}

impl GatewayState {
    pub fn new(config: GatewayConfig) -> Self {
        Self {
            client: OaiClient::new(Duration::from_millis(config.timeout_ms)),
            throttle: Throttle::new(config.throttle),
            listings: Mutex::new(HashMap::new()),
            config,
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Non-deleted identifiers of a repository in lexicographic order.
    async fn listing(&self, repo: &str) -> Result<Arc<Vec<String>>, Failure> {
        let ttl = Duration::from_millis(self.config.listing_ttl_ms);
        if let Some((at, ids)) = self.listings.lock().expect("listing lock").get(repo) {
            if at.elapsed() < ttl {
                return Ok(ids.clone());
            }
        }
        let base = self.config.wrapped_url(repo);
        let mut req = OaiRequest::list(Verb::ListIdentifiers, &self.config.metadata_prefix);
        let mut ids = Vec::new();
        loop {
            let fetched = self.client.fetch(&base, &req).await.map_err(upstream)?;
            let resp = fetched.response();
            match &resp.payload {
                Payload::ListIdentifiers { headers, .. } => {
                    ids.extend(headers.iter().filter(|h| !h.deleted).map(|h| h.identifier.clone()));
                }
                Payload::Errors(_)
                    if resp.has_error(OaiErrorCode::NoRecordsMatch)
                        || resp.has_error(OaiErrorCode::CannotDisseminateFormat) => {}
                _ => return Err(Failure::Unavailable("unexpected ListIdentifiers answer".into())),
            }
            match resp.next_token() {
                Some(t) => req = OaiRequest::resume(Verb::ListIdentifiers, t),
                None => break,
            }
        }
        ids.sort();
        ids.dedup();
        let ids = Arc::new(ids);
        self.listings
            .lock()
            .expect("listing lock")
            .insert(repo.to_owned(), (Instant::now(), ids.clone()));
        Ok(ids)
    }

    async fn repositories(&self) -> Result<Vec<String>, Failure> {
        #[derive(Deserialize)]
        struct Repo {
            id: String,
        }
        let url = format!("{}/admin/repositories", self.config.aggregator_root());
        let raw = self.client.get_raw(&url).await.map_err(upstream)?;
        if raw.status != 200 {
            return Err(Failure::Unavailable(format!("{url} answered {}", raw.status)));
        }
        let repos: Vec<Repo> = serde_json::from_slice(&raw.body)
            .map_err(|e| Failure::Unavailable(format!("{url}: {e}")))?;
        Ok(repos.into_iter().map(|r| r.id).collect())
    }
}

pub fn router(state: Arc<GatewayState>) -> Router {
    let throttled = Router::new()
        .route("/robots.txt", get(robots))
        .route("/sitemap.xml", get(sitemap))
        .route("/gw/{repo}", get(repo_root))
        .route("/gw/{repo}/index/{page}", get(index_page))
        .route("/gw/{repo}/{id}", get(record_page))
        .layer(middleware::from_fn_with_state(state.clone(), throttle))
        .with_state(state);
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .merge(throttled)
}

pub async fn serve(
    listener: TcpListener,
    state: Arc<GatewayState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(
        listener,
        router(state).into_make_service_with_connect_info::<SocketAddr>(),
    )
    .with_graceful_shutdown(shutdown)
    .await
}

async fn throttle(State(state): State<Arc<GatewayState>>, req: Request, next: Next) -> Response {
    let client = req
        .extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED), |c| c.0.ip());
    let decision = state.throttle.check(client);
    match decision.retry_after_secs() {
        None => next.run(req).await,
        Some(secs) => {
            let mut resp = (StatusCode::TOO_MANY_REQUESTS, "slow down\n").into_response();
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
            resp
        }
    }
}

async fn robots(State(state): State<Arc<GatewayState>>) -> Response {
    let sitemap = format!("{}/sitemap.xml", state.config.public_url());
    (
        [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
        render_robots(&state.config.excluded, &sitemap),
    )
        .into_response()
}

async fn sitemap(State(state): State<Arc<GatewayState>>) -> Result<Response, Failure> {
    let mut pages = Vec::new();
    for repo in state.repositories().await? {
        if state.config.excluded.contains(&repo) {
            continue;
        }
        let n = state.listing(&repo).await?.len();
        pages.extend((0..page_count(n, state.config.page_size)).map(|p| (repo.clone(), p)));
    }
    Ok((
        [(header::CONTENT_TYPE, "application/xml; charset=utf-8")],
        render_sitemap(&state.config.public_url(), &pages),
    )
        .into_response())
}

async fn repo_root(Path(repo): Path<String>) -> Redirect {
    Redirect::to(&index_path(&repo, 0))
}

async fn index_page(
    State(state): State<Arc<GatewayState>>,
    Path((repo, page)): Path<(String, usize)>,
) -> Result<Html<String>, Failure> {
    let ids = state.listing(&repo).await?;
    let size = state.config.page_size.max(1);
    if page >= page_count(ids.len(), size) {
        return Err(Failure::NotFound);
    }
    let slice = &ids[(page * size).min(ids.len())..((page + 1) * size).min(ids.len())];
    let has_next = (page + 1) * size < ids.len();
    Ok(Html(render_index(&repo, page, slice, has_next)))
}

async fn record_page(
    State(state): State<Arc<GatewayState>>,
    Path((repo, id)): Path<(String, String)>,
) -> Result<Html<String>, Failure> {
    let req = OaiRequest::get_record(&id, &state.config.metadata_prefix);
    let fetched = state
        .client
        .fetch(&state.config.wrapped_url(&repo), &req)
        .await
        .map_err(upstream)?;
    let resp = fetched.response();
    let record = match &resp.payload {
        Payload::GetRecord(r) => r,
        Payload::Errors(_)
            if resp.has_error(OaiErrorCode::IdDoesNotExist)
                || resp.has_error(OaiErrorCode::CannotDisseminateFormat) =>
        {
            return Err(Failure::NotFound)
        }
        _ => return Err(Failure::Unavailable("unexpected GetRecord answer".into())),
    };
    if record.header.deleted {
        return Err(Failure::Gone);
    }
    let fields = record
        .metadata
        .as_ref()
        .map(|m| DcFields::extract(m.as_bytes()))
        .unwrap_or_default();
    let ids = state.listing(&repo).await?;
    let pos = ids.binary_search(&id).ok();
    let prev = pos.and_then(|i| i.checked_sub(1)).map(|i| ids[i].as_str());
    let next = pos.and_then(|i| ids.get(i + 1)).map(String::as_str);
    let datestamp = record.header.datestamp.to_string();
    Ok(Html(render_record(&RecordPage {
        repo: &repo,
        identifier: &id,
        datestamp: &datestamp,
        fields: &fields,
        prev,
        next,
        index_page: pos.map_or(0, |i| i / state.config.page_size.max(1)),
    })))
}
