//! A minimal OAI-PMH HTTP client.

use std::time::Duration;

use thiserror::Error;

use crate::parse::{parse_response, ParsedResponse};
use crate::request::OaiRequest;
use crate::response::OaiResponse;
use crate::violation::Violation;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("transport error for {url}: {message}")]
    Transport { url: String, message: String },
    #[error("{url} answered HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("unusable response from {url}: {}", first_violation(.violations))]
    Fatal {
        url: String,
        violations: Vec<Violation>,
    },
}

fn first_violation(v: &[Violation]) -> String {
    v.iter()
        .find(|v| v.fatal)
        .or(v.first())
        .map_or_else(|| "no response".to_owned(), ToString::to_string)
}

impl ClientError {
    /// Whether the endpoint could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, ClientError::Timeout { .. } | ClientError::Transport { .. })
    }
}

/// Raw HTTP exchange, before OAI-PMH parsing.
#[derive(Debug, Clone)]
pub struct RawResponse {
    pub url: String,
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl RawResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Fetched {
    pub raw: RawResponse,
    pub parsed: ParsedResponse,
}

impl Fetched {
    pub fn response(&self) -> &OaiResponse {
        self.parsed
            .response
            .as_ref()
            .expect("fetch only returns parsed responses")
    }
}

#[derive(Debug, Clone)]
pub struct OaiClient {
    http: reqwest::Client,
    timeout: Duration,
}

impl Default for OaiClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl OaiClient {
    pub fn new(timeout: Duration) -> Self {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("HTTP client configuration is static");
        Self { http, timeout }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn request_url(base_url: &str, request: &OaiRequest) -> String {
        let sep = if base_url.contains('?') { '&' } else { '?' };
        format!("{base_url}{sep}{}", request.to_query())
    }

    /// Sends a GET and returns whatever came back, any status.
    pub async fn get_raw(&self, url: &str) -> Result<RawResponse, ClientError> {
        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                ClientError::Timeout { url: url.to_owned() }
            } else {
                ClientError::Transport {
                    url: url.to_owned(),
                    message: e.to_string(),
                }
            }
        };
        let resp = self.http.get(url).send().await.map_err(map_err)?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_owned(), v.to_str().ok()?.to_owned())))
            .collect();
        let body = resp.bytes().await.map_err(map_err)?.to_vec();
        Ok(RawResponse {
            url: url.to_owned(),
            status,
            headers,
            body,
        })
    }

    /// Issues an OAI-PMH request and parses the answer. Non-200 statuses
    /// and fatally broken bodies are errors; recoverable violations are
    /// left in [`Fetched::parsed`] for the caller to judge.
    pub async fn fetch(&self, base_url: &str, request: &OaiRequest) -> Result<Fetched, ClientError> {
        let url = Self::request_url(base_url, request);
        let raw = self.get_raw(&url).await?;
        if raw.status != 200 {
            return Err(ClientError::Status {
                url,
                status: raw.status,
            });
        }
        let parsed = parse_response(&raw.body);
        if parsed.is_fatal() {
            return Err(ClientError::Fatal {
                url,
                violations: parsed.violations,
            });
        }
        Ok(Fetched { raw, parsed })
    }
}
