//! Simulated data providers served over real HTTP.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use axum::body::Bytes;
use axum::extract::{RawQuery, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use chrono::{DateTime, Utc};
use oairelay_core::{
    parse_request, serialize_response, Clock, Datestamp, DeletedRecordPolicy, Granularity,
    Identify, OaiError, OaiErrorCode, OaiRecord, OaiRequest, OaiResponse, Payload, RecordHeader,
    RequestEcho, ResumptionToken, Verb, XmlFragment, CONTENT_TYPE,
};
use serde::{Deserialize, Serialize};

use crate::corpus::{format_for, other_metadata, Corpus, CorpusRecord, DcParts};
use crate::faults::{strip_response_date, FaultKind, FaultSpec};
use crate::net::{bind_local, on_signal, ServerTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Downtime {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDpConfig {
    pub repository_id: String,
    pub record_count: usize,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default = "default_version")]
    pub protocol_version: String,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub downtime: Vec<Downtime>,
}

fn default_formats() -> Vec<String> {
    vec!["oai_dc".into()]
}

fn default_page_size() -> usize {
    50
}

fn default_version() -> String {
    "2.0".into()
}

impl SimDpConfig {
    pub fn new(repository_id: &str, record_count: usize) -> Self {
        Self {
            repository_id: repository_id.to_owned(),
            record_count,
            formats: default_formats(),
            page_size: default_page_size(),
            protocol_version: default_version(),
            faults: Vec::new(),
            downtime: Vec::new(),
        }
    }

    pub fn with_formats(mut self, formats: &[&str]) -> Self {
        self.formats = formats.iter().map(|s| (*s).to_owned()).collect();
        self
    }

    pub fn with_page_size(mut self, n: usize) -> Self {
        self.page_size = n;
        self
    }

    pub fn with_fault(mut self, spec: FaultSpec) -> Self {
        self.faults.push(spec);
        self
    }
}

pub struct SimDp {
    config: SimDpConfig,
    clock: Arc<dyn Clock>,
    base_url: String,
    corpus: RwLock<Corpus>,
    affected: BTreeMap<FaultKind, BTreeSet<String>>,
    requests: AtomicU64,
}

/// Position in a list, carried in the resumption token.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ListCursor {
    verb: Verb,
    prefix: String,
    from: Option<Datestamp>,
    until: Option<Datestamp>,
    offset: usize,
}

impl ListCursor {
    fn encode(&self) -> String {
        let opt = |d: &Option<Datestamp>| d.map_or_else(|| "-".to_owned(), |d| d.to_string());
        format!(
            "{}|{}|{}|{}|{}",
            self.offset,
            self.verb.as_str(),
            self.prefix,
            opt(&self.from),
            opt(&self.until)
        )
    }

    fn decode(s: &str) -> Option<Self> {
        let mut parts = s.split('|');
        let offset = parts.next()?.parse().ok()?;
        let verb = parts.next()?.parse().ok()?;
        let prefix = parts.next()?.to_owned();
        let opt = |p: Option<&str>| -> Option<Option<Datestamp>> {
            match p? {
                "-" => Some(None),
                d => Datestamp::parse(d).ok().map(Some),
            }
        };
        let from = opt(parts.next())?;
        let until = opt(parts.next())?;
        parts.next().is_none().then_some(Self {
            verb,
            prefix,
            from,
            until,
            offset,
        })
    }
}

impl SimDp {
    pub fn new(config: SimDpConfig, clock: Arc<dyn Clock>, base_url: String) -> Self {
        let corpus = Corpus::generate(&config.repository_id, config.record_count, clock.now());
        let ids = corpus.identifiers();
        let mut affected: BTreeMap<FaultKind, BTreeSet<String>> = BTreeMap::new();
        for spec in &config.faults {
            affected.entry(spec.kind).or_default().extend(spec.affected(&ids));
        }
        Self {
            config,
            clock,
            base_url,
            corpus: RwLock::new(corpus),
            affected,
            requests: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &SimDpConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.repository_id
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn corpus(&self) -> RwLockReadGuard<'_, Corpus> {
        self.corpus.read().expect("corpus lock")
    }

    /// Records a fault of `kind` touches.
    pub fn affected(&self, kind: FaultKind) -> BTreeSet<String> {
        self.affected.get(&kind).cloned().unwrap_or_default()
    }

    /// Records no proxy can repair.
    pub fn unrepairable(&self) -> BTreeSet<String> {
        self.affected
            .iter()
            .filter(|(k, _)| !k.is_repairable())
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect()
    }

    /// Whether any record-level fault touches `id`.
    pub fn is_faulty(&self, id: &str) -> bool {
        self.affected.values().any(|s| s.contains(id))
    }

    pub fn mutate(&self, id: &str) -> bool {
        let now = self.clock.now();
        self.corpus.write().expect("corpus lock").mutate(id, now)
    }

    pub fn delete(&self, id: &str) -> bool {
        let now = self.clock.now();
        self.corpus.write().expect("corpus lock").delete(id, now)
    }

    pub fn mutate_random(&self, count: usize, seed: u64) -> Vec<String> {
        let now = self.clock.now();
        self.corpus
            .write()
            .expect("corpus lock")
            .mutate_random(count, seed, now)
    }

    /// Metadata bytes as served, faults included.
    pub fn metadata(&self, rec: &CorpusRecord, prefix: &str) -> Vec<u8> {
        if prefix != "oai_dc" {
            return other_metadata(self.id(), rec, prefix);
        }
        let mut parts = DcParts::new(self.id(), rec);
        for spec in &self.config.faults {
            if self.affected.get(&spec.kind).is_some_and(|s| s.contains(&rec.identifier)) {
                spec.apply(&mut parts);
            }
        }
        parts.assemble()
    }

    /// Clean metadata of the current version.
    pub fn clean_metadata(&self, id: &str, prefix: &str) -> Option<Vec<u8>> {
        let corpus = self.corpus();
        let rec = corpus.get(id)?;
        Some(if prefix == "oai_dc" {
            DcParts::new(self.id(), rec).assemble()
        } else {
            other_metadata(self.id(), rec, prefix)
        })
    }

    /// Every request needed to walk a complete list, in order.
    pub fn list_requests(&self, verb: Verb, prefix: &str) -> Vec<OaiRequest> {
        let n = self.corpus().window(None, None).len();
        let size = self.config.page_size.max(1);
        let mut out = vec![OaiRequest::list(verb, prefix)];
        let mut offset = size;
        while offset < n {
            let cursor = ListCursor {
                verb,
                prefix: prefix.to_owned(),
                from: None,
                until: None,
                offset,
            };
            out.push(OaiRequest::resume(verb, cursor.encode()));
            offset += size;
        }
        out
    }

    fn is_down(&self, now: DateTime<Utc>) -> bool {
        self.config
            .downtime
            .iter()
            .any(|w| w.start <= now && now < w.end)
    }

    fn record(&self, rec: &CorpusRecord, prefix: &str) -> OaiRecord {
        OaiRecord {
            header: header_of(rec),
            metadata: (!rec.deleted).then(|| XmlFragment::new(self.metadata(rec, prefix))),
            abouts: Vec::new(),
        }
    }

    /// Answers one request: status code and body.
    pub fn respond(&self, pairs: Vec<(String, String)>) -> (StatusCode, Vec<u8>) {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let now = self.clock.now();
        if self.is_down(now) {
            return (StatusCode::SERVICE_UNAVAILABLE, b"down for maintenance\n".to_vec());
        }
        let stamp = Datestamp::seconds(now);
        let (response, key) = match parse_request(pairs) {
            Ok(req) => {
                let payload = self.payload(&req).unwrap_or_else(|e| Payload::Errors(vec![e]));
                let response = OaiResponse {
                    response_date: stamp,
                    request: RequestEcho::for_request(&self.base_url, &req),
                    payload,
                };
                (response, req.to_query())
            }
            Err(e) => (
                OaiResponse::error(stamp, RequestEcho::bare(&self.base_url), e),
                String::new(),
            ),
        };
        let mut body = serialize_response(&response);
        if self.config.protocol_version != "2.0" {
            body = retag_version(&body, &self.config.protocol_version);
        }
        if self.config.faults.iter().any(|f| f.hits_response(&key)) {
            body = strip_response_date(&body);
        }
        (StatusCode::OK, body)
    }

    /// Whether the response to `req` loses its responseDate.
    pub fn response_hit(&self, req: &OaiRequest) -> bool {
        let key = req.to_query();
        self.config.faults.iter().any(|f| f.hits_response(&key))
    }

    fn supports(&self, prefix: &str) -> Result<(), OaiError> {
        if self.config.formats.iter().any(|f| f == prefix) {
            Ok(())
        } else {
            Err(OaiError::new(
                OaiErrorCode::CannotDisseminateFormat,
                format!("{prefix:?} is not supported"),
            ))
        }
    }

    fn payload(&self, req: &OaiRequest) -> Result<Payload, OaiError> {
        let corpus = self.corpus();
        match req.verb() {
            Verb::Identify => Ok(Payload::Identify(Identify {
                repository_name: format!("Simulated provider {}", self.id()),
                base_url: self.base_url.clone(),
                protocol_version: self.config.protocol_version.clone(),
                earliest_datestamp: corpus
                    .window(None, None)
                    .first()
                    .map_or(Datestamp::seconds(self.clock.now()), |r| r.datestamp),
                deleted_record: DeletedRecordPolicy::Persistent,
                granularity: Granularity::Second,
                admin_emails: vec![format!("admin@{}.example.org", self.id())],
                compressions: Vec::new(),
                descriptions: Vec::new(),
            })),
            Verb::ListMetadataFormats => {
                if let Some(id) = &req.identifier {
                    if corpus.get(id).is_none() {
                        return Err(id_missing(id));
                    }
                }
                Ok(Payload::ListMetadataFormats(
                    self.config.formats.iter().map(|p| format_for(p)).collect(),
                ))
            }
            Verb::ListSets => Err(OaiError::new(
                OaiErrorCode::NoSetHierarchy,
                "sets are not supported",
            )),
            Verb::GetRecord => {
                let prefix = req.metadata_prefix.as_deref().unwrap_or_default();
                let id = req.identifier.as_deref().unwrap_or_default();
                let rec = corpus.get(id).ok_or_else(|| id_missing(id))?;
                self.supports(prefix)?;
                Ok(Payload::GetRecord(self.record(rec, prefix)))
            }
            Verb::ListIdentifiers | Verb::ListRecords => self.list(&corpus, req),
        }
    }

    fn list(&self, corpus: &Corpus, req: &OaiRequest) -> Result<Payload, OaiError> {
        let cursor = match &req.resumption_token {
            Some(t) => ListCursor::decode(t)
                .filter(|c| c.verb == req.verb())
                .ok_or_else(|| {
                    OaiError::new(OaiErrorCode::BadResumptionToken, format!("bad token {t:?}"))
                })?,
            None => {
                if req.set.is_some() {
                    return Err(OaiError::new(
                        OaiErrorCode::NoSetHierarchy,
                        "sets are not supported",
                    ));
                }
                ListCursor {
                    verb: req.verb(),
                    prefix: req.metadata_prefix.clone().unwrap_or_default(),
                    from: req.from,
                    until: req.until,
                    offset: 0,
                }
            }
        };
        self.supports(&cursor.prefix)?;
        let window = corpus.window(cursor.from.as_ref(), cursor.until.as_ref());
        if window.is_empty() && cursor.offset == 0 {
            return Err(OaiError::new(OaiErrorCode::NoRecordsMatch, "no records match"));
        }
        if cursor.offset > window.len() {
            return Err(OaiError::new(
                OaiErrorCode::BadResumptionToken,
                "token points past the end of the list",
            ));
        }
        let size = self.config.page_size.max(1);
        let page = &window[cursor.offset..(cursor.offset + size).min(window.len())];
        let next = cursor.offset + page.len();
        let token = if next < window.len() {
            Some(ResumptionToken {
                token: ListCursor {
                    offset: next,
                    ..cursor.clone()
                }
                .encode(),
                complete_list_size: Some(window.len() as u64),
                cursor: Some(cursor.offset as u64),
                expiration_date: None,
            })
        } else if cursor.offset > 0 {
            Some(ResumptionToken {
                token: String::new(),
                complete_list_size: Some(window.len() as u64),
                cursor: Some(cursor.offset as u64),
                expiration_date: None,
            })
        } else {
            None
        };
        Ok(match cursor.verb {
            Verb::ListIdentifiers => Payload::ListIdentifiers {
                headers: page.iter().map(|r| header_of(r)).collect(),
                token,
            },
            _ => Payload::ListRecords {
                records: page.iter().map(|r| self.record(r, &cursor.prefix)).collect(),
                token,
            },
        })
    }
}

fn header_of(rec: &CorpusRecord) -> RecordHeader {
    RecordHeader {
        identifier: rec.identifier.clone(),
        datestamp: rec.datestamp,
        set_specs: Vec::new(),
        deleted: rec.deleted,
    }
}

fn id_missing(id: &str) -> OaiError {
    OaiError::new(OaiErrorCode::IdDoesNotExist, format!("{id:?} is unknown"))
}

/// Rewrites the protocolVersion element for providers that claim an older
/// protocol.
fn retag_version(body: &[u8], version: &str) -> Vec<u8> {
    let text = String::from_utf8_lossy(body);
    text.replace(
        "<protocolVersion>2.0</protocolVersion>",
        &format!("<protocolVersion>{version}</protocolVersion>"),
    )
    .into_bytes()
}

pub fn router(dp: Arc<SimDp>) -> Router {
    Router::new()
        .route("/oai", axum::routing::get(handle).post(handle))
        .with_state(dp)
}

async fn handle(
    State(dp): State<Arc<SimDp>>,
    method: Method,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> Response {
    let raw: &[u8] = if method == Method::POST {
        &body
    } else {
        query.as_deref().unwrap_or_default().as_bytes()
    };
    let pairs = url::form_urlencoded::parse(raw).into_owned().collect();
    let (status, body) = dp.respond(pairs);
    if status != StatusCode::OK {
        return (status, body).into_response();
    }
    (status, [(header::CONTENT_TYPE, CONTENT_TYPE)], body).into_response()
}

/// A simulated provider with its listener.
pub struct SimDpHandle {
    dp: Arc<SimDp>,
    server: ServerTask,
}

impl SimDpHandle {
    pub async fn spawn(config: SimDpConfig, clock: Arc<dyn Clock>) -> io::Result<Self> {
        let listener = bind_local().await?;
        let addr = listener.local_addr()?;
        let dp = Arc::new(SimDp::new(config, clock, format!("http://{addr}/oai")));
        let server = Self::start(listener, dp.clone())?;
        Ok(Self { dp, server })
    }

    fn start(listener: tokio::net::TcpListener, dp: Arc<SimDp>) -> io::Result<ServerTask> {
        ServerTask::spawn(listener, move |l, rx| async move {
            axum::serve(l, router(dp)).with_graceful_shutdown(on_signal(rx)).await
        })
    }

    pub fn dp(&self) -> &Arc<SimDp> {
        &self.dp
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.addr()
    }

    pub fn base_url(&self) -> &str {
        self.dp.base_url()
    }

    pub fn is_running(&self) -> bool {
        self.server.is_running()
    }

    /// Takes the provider off the network.
    pub async fn kill(&mut self) {
        self.server.stop().await;
    }

    /// Brings it back on the same port, corpus and counters intact.
    pub async fn restart(&mut self) -> io::Result<()> {
        if self.server.is_running() {
            return Ok(());
        }
        let listener = tokio::net::TcpListener::bind(self.server.addr()).await?;
        self.server = Self::start(listener, self.dp.clone())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use oairelay_core::{parse_response, SimClock};

    fn dp(config: SimDpConfig) -> SimDp {
        let clock = SimClock::new(Utc.with_ymd_and_hms(2002, 1, 1, 0, 0, 0).unwrap());
        SimDp::new(config, Arc::new(clock), "http://dp.test/oai".into())
    }

    fn ask(dp: &SimDp, q: &str) -> (StatusCode, Vec<u8>) {
        dp.respond(url::form_urlencoded::parse(q.as_bytes()).into_owned().collect())
    }

    #[test]
    fn pagination_covers_corpus() {
        let dp = dp(SimDpConfig::new("x", 120).with_page_size(50));
        let reqs = dp.list_requests(Verb::ListRecords, "oai_dc");
        assert_eq!(reqs.len(), 3);
        let mut seen = 0;
        for r in reqs {
            let (_, body) = ask(&dp, &r.to_query());
            let parsed = parse_response(&body);
            assert!(parsed.is_clean(), "{:?}", parsed.violations);
            seen += parsed.response.unwrap().records().len();
        }
        assert_eq!(seen, 120);
        assert_eq!(dp.requests(), 3);
    }

    #[test]
    fn bare_ampersand_hits_exactly_the_enumerated_records() {
        let dp = dp(SimDpConfig::new("x", 100)
            .with_page_size(100)
            .with_fault(FaultSpec::new(FaultKind::BareAmpersand, 0.1, 5)));
        let affected = dp.affected(FaultKind::BareAmpersand);
        assert_eq!(affected.len(), 10);
        let (_, body) = ask(&dp, "verb=ListRecords&metadataPrefix=oai_dc");
        let parsed = parse_response(&body);
        let bad: BTreeSet<String> = parsed
            .units
            .iter()
            .filter(|u| parsed.violations_in(&u.span).next().is_some())
            .filter_map(|u| u.identifier.clone())
            .collect();
        assert_eq!(bad, affected);
    }

    #[test]
    fn downtime_answers_503_and_counts() {
        let mut config = SimDpConfig::new("x", 1);
        config.downtime.push(Downtime {
            start: Utc.with_ymd_and_hms(2001, 1, 1, 0, 0, 0).unwrap(),
            end: Utc.with_ymd_and_hms(2003, 1, 1, 0, 0, 0).unwrap(),
        });
        let dp = dp(config);
        assert_eq!(ask(&dp, "verb=Identify").0, StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(dp.requests(), 1);
    }

    #[test]
    fn protocol_errors() {
        let dp = dp(SimDpConfig::new("x", 3));
        let code = |q: &str| {
            let (_, body) = ask(&dp, q);
            parse_response(&body).response.unwrap().errors()[0].code
        };
        assert_eq!(code("verb=Nope"), OaiErrorCode::BadVerb);
        assert_eq!(code("verb=ListSets"), OaiErrorCode::NoSetHierarchy);
        assert_eq!(
            code("verb=GetRecord&identifier=oai:y:1&metadataPrefix=oai_dc"),
            OaiErrorCode::IdDoesNotExist
        );
        assert_eq!(
            code("verb=ListRecords&metadataPrefix=mods"),
            OaiErrorCode::CannotDisseminateFormat
        );
        assert_eq!(
            code("verb=ListRecords&metadataPrefix=oai_dc&from=2010-01-01"),
            OaiErrorCode::NoRecordsMatch
        );
        assert_eq!(
            code("verb=ListRecords&resumptionToken=junk"),
            OaiErrorCode::BadResumptionToken
        );
    }
}
