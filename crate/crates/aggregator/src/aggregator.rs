//! The aggregator service: source registration, harvesting, scheduling.
//! Serving lives in `serve.rs`.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use oairelay_core::{
    compare_datestamps, ClientError, Clock, Datestamp, Fetched, Granularity, MetadataFormat,
    OaiClient, OaiError, OaiErrorCode, OaiRecord, OaiRequest, Payload, Verb,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AggregatorConfig, RepositoryConfig};
use crate::ingest::{ingest_record, prepare_record, IngestOutcome};
use crate::record::{Reliability, RepoStatus, SourceRepository};
use crate::store::{Store, StoreError};

/// Headers set by the repairing proxy when it is between us and a source.
const FIXES_HEADER: &str = "x-repair-fixes";
const DROPPED_HEADER: &str = "x-repair-dropped";
const REPORT_URL_HEADER: &str = "x-repair-report";

const MAX_BACKOFF_SECS: u64 = 24 * 3600;

#[derive(Debug, Error)]
pub enum AggregatorError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("repository id {0:?} is configured twice")]
    DuplicateId(String),
    #[error("trust rank {rank} is used by both {first:?} and {second:?}")]
    DuplicateTrustRank {
        rank: i64,
        first: String,
        second: String,
    },
}

#[derive(Debug, Error)]
pub enum RegisterError {
    #[error("repository {0:?} is already registered")]
    Duplicate(String),
    #[error("trust rank {rank} is already used by {holder:?}")]
    TrustRankTaken { rank: i64, holder: String },
    #[error("invalid repository id {0:?}")]
    BadId(String),
    #[error("registration rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("source answered with {0}")]
    Oai(String),
    #[error("response from {url} is malformed: {message}")]
    Envelope { url: String, message: String },
    #[error("a harvest of {0} is already running")]
    Busy(String),
    #[error("aggregator stopped")]
    Crashed,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Result of one harvest of one repository across its formats.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HarvestSummary {
    pub repository: String,
    /// Records written (inserted, updated, or winning a collision).
    pub ingested: usize,
    /// Records that hit an existing key from another source.
    pub collided: usize,
    /// Records dropped upstream by a proxy or rejected here.
    pub dropped: usize,
    pub unchanged: usize,
    pub pages: usize,
    pub elapsed_ms: u64,
    pub error: Option<String>,
    pub next_attempt: Option<DateTime<Utc>>,
    pub consecutive_failures: u32,
}

/// Which records of a page the proxy changed.
enum Altered {
    None,
    Some(HashSet<String>),
    All,
}

impl Altered {
    fn contains(&self, id: &str) -> bool {
        match self {
            Altered::None => false,
            Altered::Some(ids) => ids.contains(id),
            Altered::All => true,
        }
    }
}

pub struct Aggregator {
    config: AggregatorConfig,
    clock: Arc<dyn Clock>,
    client: OaiClient,
    store: RwLock<Store>,
    busy: Mutex<HashSet<(String, String)>>,
    /// Remaining record writes before a simulated crash.
    crash_after: Mutex<Option<usize>>,
    dead: AtomicBool,
}

fn check_unique(repos: &[RepositoryConfig]) -> Result<(), AggregatorError> {
    let mut ids = HashSet::new();
    let mut ranks: HashMap<i64, &str> = HashMap::new();
    for r in repos {
        if !ids.insert(r.id.as_str()) {
            return Err(AggregatorError::DuplicateId(r.id.clone()));
        }
        if let Some(first) = ranks.insert(r.trust_rank, &r.id) {
            return Err(AggregatorError::DuplicateTrustRank {
                rank: r.trust_rank,
                first: first.to_owned(),
                second: r.id.clone(),
            });
        }
    }
    Ok(())
}

pub fn valid_repository_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

impl Aggregator {
    /// Opens the store and merges the configured repositories into it.
    /// Newly configured repositories start pending; call
    /// [`Aggregator::activate_pending`] or let the scheduler register them.
    pub fn new(config: AggregatorConfig, clock: Arc<dyn Clock>) -> Result<Self, AggregatorError> {
        check_unique(&config.repositories)?;
        let mut store = match &config.storage_dir {
            Some(dir) => Store::open(dir)?,
            None => Store::in_memory(),
        };
        for rc in &config.repositories {
            let repo = match store.repo(&rc.id) {
                Some(existing) => {
                    let mut r = existing.clone();
                    r.base_url = rc.base_url.clone();
                    r.trust_rank = rc.trust_rank;
                    r.poll_interval_secs = rc.poll_interval_secs;
                    r.reliability = rc.reliability;
                    r.only_formats = rc.formats.clone();
                    r
                }
                None => new_repository(rc),
            };
            store.save_repo(repo)?;
        }
        let client = OaiClient::new(Duration::from_millis(config.request_timeout_ms));
        Ok(Self {
            config,
            clock,
            client,
            store: RwLock::new(store),
            busy: Mutex::new(HashSet::new()),
            crash_after: Mutex::new(None),
            dead: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn store(&self) -> RwLockReadGuard<'_, Store> {
        self.store.read().expect("store lock poisoned")
    }

    fn store_mut(&self) -> RwLockWriteGuard<'_, Store> {
        self.store.write().expect("store lock poisoned")
    }

    pub fn repository(&self, id: &str) -> Option<SourceRepository> {
        self.store().repo(id).cloned()
    }

    pub fn repositories(&self) -> Vec<SourceRepository> {
        self.store().repos().cloned().collect()
    }

    /// Makes the next harvest stop after `writes` more record writes,
    /// leaving a half-written log line behind, and refuse all further work.
    pub fn crash_after(&self, writes: usize) {
        *self.crash_after.lock().expect("crash lock") = Some(writes);
    }

    pub fn is_dead(&self) -> bool {
        self.dead.load(Ordering::SeqCst)
    }

    /// Flushes the record log.
    pub fn flush(&self) -> Result<(), StoreError> {
        self.store_mut().sync()
    }

    /// Registers a new source: Identify, then ListMetadataFormats. A source
    /// that cannot be reached is stored pending and retried by the
    /// scheduler.
    pub async fn register(&self, rc: RepositoryConfig) -> Result<SourceRepository, RegisterError> {
        if !valid_repository_id(&rc.id) {
            return Err(RegisterError::BadId(rc.id));
        }
        {
            let store = self.store();
            if store.repo(&rc.id).is_some() {
                return Err(RegisterError::Duplicate(rc.id));
            }
            let holder = store
                .repos()
                .find(|r| r.trust_rank == rc.trust_rank)
                .map(|r| r.id.clone());
            if let Some(holder) = holder {
                return Err(RegisterError::TrustRankTaken {
                    rank: rc.trust_rank,
                    holder,
                });
            }
        }
        let mut repo = new_repository(&rc);
        match self.contact(&mut repo).await {
            Ok(()) => {}
            Err(ContactError::Unreachable(e)) => self.schedule_failure(&mut repo, e),
            Err(ContactError::Rejected(msg)) => return Err(RegisterError::Rejected(msg)),
        }
        self.store_mut().save_repo(repo.clone())?;
        Ok(repo)
    }

    /// Retries Identify for every pending repository that is due.
    pub async fn activate_pending(&self) -> Vec<SourceRepository> {
        let now = self.now();
        let due: Vec<SourceRepository> = self
            .store()
            .repos()
            .filter(|r| r.status == RepoStatus::Pending && is_due(r, now))
            .cloned()
            .collect();
        let mut out = Vec::new();
        for mut repo in due {
            match self.contact(&mut repo).await {
                Ok(()) => {}
                Err(ContactError::Unreachable(e)) => self.schedule_failure(&mut repo, e),
                Err(ContactError::Rejected(e)) => self.schedule_failure(&mut repo, e),
            }
            if let Err(e) = self.store_mut().save_repo(repo.clone()) {
                tracing::error!("saving {}: {e}", repo.id);
            }
            out.push(repo);
        }
        out
    }

    async fn contact(&self, repo: &mut SourceRepository) -> Result<(), ContactError> {
        let fetched = self
            .client
            .fetch(&repo.base_url, &OaiRequest::identify())
            .await
            .map_err(ContactError::from_client)?;
        let identify = match &fetched.response().payload {
            Payload::Identify(i) => i.clone(),
            Payload::Errors(e) => return Err(ContactError::Rejected(describe_errors(e))),
            _ => return Err(ContactError::Rejected("Identify answered with another verb".into())),
        };
        if let Some(v) = fetched.parsed.envelope_violations().next() {
            return Err(ContactError::Rejected(format!("Identify response: {v}")));
        }
        let fetched = self
            .client
            .fetch(&repo.base_url, &OaiRequest::list_metadata_formats())
            .await
            .map_err(ContactError::from_client)?;
        let formats = match &fetched.response().payload {
            Payload::ListMetadataFormats(f) => f.clone(),
            Payload::Errors(e) => return Err(ContactError::Rejected(describe_errors(e))),
            _ => {
                return Err(ContactError::Rejected(
                    "ListMetadataFormats answered with another verb".into(),
                ))
            }
        };
        repo.identify = Some(identify);
        repo.formats = formats;
        repo.status = RepoStatus::Active;
        repo.consecutive_failures = 0;
        repo.last_error = None;
        repo.next_attempt = Some(self.now());
        Ok(())
    }

    fn schedule_failure(&self, repo: &mut SourceRepository, error: String) {
        repo.consecutive_failures += 1;
        let delay = backoff_secs(repo.poll_interval_secs, repo.consecutive_failures);
        repo.next_attempt = Some(self.now() + chrono::Duration::seconds(delay as i64));
        repo.last_error = Some(error);
    }

    /// Harvests every format of one repository and updates its schedule.
    pub async fn harvest_repository(&self, id: &str) -> Option<HarvestSummary> {
        let started = Instant::now();
        let mut repo = self.repository(id)?;
        let mut summary = HarvestSummary {
            repository: id.to_owned(),
            ..Default::default()
        };
        if self.is_dead() {
            summary.error = Some(HarvestError::Crashed.to_string());
            return Some(summary);
        }
        if repo.status == RepoStatus::Pending {
            if let Err(e) = self.contact(&mut repo).await {
                let msg = match e {
                    ContactError::Unreachable(m) | ContactError::Rejected(m) => m,
                };
                return Some(self.finish(repo, summary, Err(msg), started));
            }
        }
        let mut result = Ok(());
        for format in repo.harvest_formats() {
            match self.harvest_format(&repo, &format, &mut summary).await {
                Ok(watermark) => {
                    // Saved per format so a later failure keeps this progress.
                    let fresh = self.repository(id).unwrap_or_else(|| repo.clone());
                    repo.last_harvest = fresh.last_harvest;
                    advance_watermark(&mut repo, &format.prefix, watermark);
                    if let Err(e) = self.store_mut().save_repo(repo.clone()) {
                        result = Err(e.to_string());
                        break;
                    }
                }
                Err(HarvestError::Crashed) => {
                    summary.error = Some(HarvestError::Crashed.to_string());
                    summary.elapsed_ms = started.elapsed().as_millis() as u64;
                    return Some(summary);
                }
                Err(e) => {
                    result = Err(e.to_string());
                    break;
                }
            }
        }
        Some(self.finish(repo, summary, result, started))
    }

    fn finish(
        &self,
        mut repo: SourceRepository,
        mut summary: HarvestSummary,
        result: Result<(), String>,
        started: Instant,
    ) -> HarvestSummary {
        let now = self.now();
        match result {
            Ok(()) => {
                repo.consecutive_failures = 0;
                repo.last_error = None;
                repo.last_success = Some(now);
                repo.next_attempt =
                    Some(now + chrono::Duration::seconds(repo.poll_interval_secs as i64));
            }
            Err(e) => {
                tracing::warn!("harvest of {} failed: {e}", repo.id);
                self.schedule_failure(&mut repo, e.clone());
                summary.error = Some(e);
            }
        }
        summary.next_attempt = repo.next_attempt;
        summary.consecutive_failures = repo.consecutive_failures;
        if !self.is_dead() {
            if let Err(e) = self.store_mut().save_repo(repo) {
                tracing::error!("saving repository state: {e}");
            }
        }
        summary.elapsed_ms = started.elapsed().as_millis() as u64;
        summary
    }

    /// One incremental harvest of one format. Returns the responseDate of
    /// the first page, which becomes the next `from`.
    async fn harvest_format(
        &self,
        repo: &SourceRepository,
        format: &MetadataFormat,
        summary: &mut HarvestSummary,
    ) -> Result<Datestamp, HarvestError> {
        let job = (repo.id.clone(), format.prefix.clone());
        if !self.busy.lock().expect("busy lock").insert(job.clone()) {
            return Err(HarvestError::Busy(format!("{}/{}", job.0, job.1)));
        }
        let result = self.harvest_pages(repo, format, summary).await;
        self.busy.lock().expect("busy lock").remove(&job);
        result
    }

    async fn harvest_pages(
        &self,
        repo: &SourceRepository,
        format: &MetadataFormat,
        summary: &mut HarvestSummary,
    ) -> Result<Datestamp, HarvestError> {
        let verb = match repo.reliability {
            Reliability::Batch => Verb::ListRecords,
            Reliability::PerRecord => Verb::ListIdentifiers,
        };
        let granularity = repo
            .identify
            .as_ref()
            .map_or(Granularity::Second, |i| i.granularity);
        let mut request = OaiRequest::list(verb, &format.prefix);
        if let Some(from) = repo.last_harvest.get(&format.prefix) {
            request = request.with_from(from.truncate_to(granularity));
        }
        let mut first_date = None;
        loop {
            let fetched = self.client.fetch(&repo.base_url, &request).await?;
            summary.pages += 1;
            summary.dropped += header_count(&fetched, DROPPED_HEADER);
            if let Some(v) = fetched.parsed.envelope_violations().next() {
                return Err(HarvestError::Envelope {
                    url: fetched.raw.url.clone(),
                    message: v.to_string(),
                });
            }
            let response = fetched.response();
            first_date.get_or_insert(response.response_date);
            match &response.payload {
                Payload::Errors(_) if response.has_error(OaiErrorCode::NoRecordsMatch) => break,
                Payload::Errors(e) => return Err(HarvestError::Oai(describe_errors(e))),
                _ => {}
            }
            let altered = self.altered_records(&fetched).await;
            let records = match repo.reliability {
                Reliability::Batch => accepted_records(&fetched, summary)
                    .into_iter()
                    .map(|r| (r, false))
                    .collect(),
                Reliability::PerRecord => self.fetch_each(repo, format, &fetched, summary).await?,
            };
            self.ingest_page(repo, format, records, &altered, summary)?;
            match response.next_token() {
                Some(token) => request = OaiRequest::resume(verb, token),
                None => break,
            }
        }
        Ok(first_date.expect("at least one page was fetched"))
    }

    async fn fetch_each(
        &self,
        repo: &SourceRepository,
        format: &MetadataFormat,
        list: &Fetched,
        summary: &mut HarvestSummary,
    ) -> Result<Vec<(OaiRecord, bool)>, HarvestError> {
        let Payload::ListIdentifiers { headers, .. } = &list.response().payload else {
            return Err(HarvestError::Oai("ListIdentifiers answered with another verb".into()));
        };
        let clean: HashSet<&str> = list
            .parsed
            .units
            .iter()
            .filter(|u| list.parsed.violations_in(&u.span).next().is_none())
            .filter_map(|u| u.identifier.as_deref())
            .collect();
        let mut out = Vec::new();
        for header in headers {
            if !clean.contains(header.identifier.as_str()) {
                summary.dropped += 1;
                continue;
            }
            if header.deleted {
                out.push((
                    OaiRecord {
                        header: header.clone(),
                        metadata: None,
                        abouts: Vec::new(),
                    },
                    false,
                ));
                continue;
            }
            let req = OaiRequest::get_record(&header.identifier, &format.prefix);
            let fetched = self.client.fetch(&repo.base_url, &req).await?;
            summary.dropped += header_count(&fetched, DROPPED_HEADER);
            let altered = self.altered_records(&fetched).await;
            let mut records = accepted_records(&fetched, summary);
            match records.pop() {
                Some(record) => {
                    let changed = altered.contains(&record.header.identifier);
                    out.push((record, changed));
                }
                None if fetched.response().has_error(OaiErrorCode::IdDoesNotExist) => {}
                None => summary.dropped += 1,
            }
        }
        Ok(out)
    }

    fn ingest_page(
        &self,
        repo: &SourceRepository,
        format: &MetadataFormat,
        records: Vec<(OaiRecord, bool)>,
        altered: &Altered,
        summary: &mut HarvestSummary,
    ) -> Result<(), HarvestError> {
        let now = self.now();
        let mut store = self.store_mut();
        for (record, fetched_altered) in records {
            if self.is_dead() {
                return Err(HarvestError::Crashed);
            }
            let was_altered = fetched_altered || altered.contains(&record.header.identifier);
            let stored = match prepare_record(&record, repo, format, now, was_altered) {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!("{}: {e}", repo.id);
                    summary.dropped += 1;
                    continue;
                }
            };
            if self.tick_crash() {
                store.write_torn_tail()?;
                self.dead.store(true, Ordering::SeqCst);
                return Err(HarvestError::Crashed);
            }
            let outcome = ingest_record(&mut store, stored, &self.config.policy)?;
            if outcome.is_write() {
                summary.ingested += 1;
            }
            if outcome.is_collision() {
                summary.collided += 1;
            }
            if outcome == IngestOutcome::Unchanged {
                summary.unchanged += 1;
            }
        }
        Ok(())
    }

    /// Counts down the crash hook; `true` when the crash should happen now.
    fn tick_crash(&self) -> bool {
        let mut guard = self.crash_after.lock().expect("crash lock");
        match guard.as_mut() {
            Some(0) => {
                *guard = None;
                true
            }
            Some(n) => {
                *n -= 1;
                false
            }
            None => false,
        }
    }

    async fn altered_records(&self, fetched: &Fetched) -> Altered {
        if header_count(fetched, FIXES_HEADER) == 0 {
            return Altered::None;
        }
        let Some(path) = fetched.raw.header(REPORT_URL_HEADER) else {
            return Altered::All;
        };
        let Ok(url) = url::Url::parse(&fetched.raw.url).and_then(|u| u.join(path)) else {
            return Altered::All;
        };
        let report = match self.client.get_raw(url.as_str()).await {
            Ok(r) if r.status == 200 => r,
            _ => return Altered::All,
        };
        let ids = serde_json::from_slice::<serde_json::Value>(&report.body)
            .ok()
            .and_then(|v| {
                v.get("repairedRecords")?
                    .as_array()?
                    .iter()
                    .map(|id| id.as_str().map(str::to_owned))
                    .collect::<Option<HashSet<String>>>()
            });
        ids.map_or(Altered::All, Altered::Some)
    }

    /// Repositories whose next attempt is due and that are not harvesting.
    pub fn due_repositories(&self) -> Vec<String> {
        let now = self.now();
        let busy = self.busy.lock().expect("busy lock");
        self.store()
            .repos()
            .filter(|r| is_due(r, now))
            .filter(|r| !busy.iter().any(|(id, _)| id == &r.id))
            .map(|r| r.id.clone())
            .collect()
    }

    /// Launches a harvest for every due repository and returns their ids
    /// without waiting for them.
    pub fn scheduler_tick(self: &Arc<Self>) -> Vec<String> {
        let due = self.due_repositories();
        for id in &due {
            let this = Arc::clone(self);
            let id = id.clone();
            tokio::spawn(async move {
                this.harvest_repository(&id).await;
            });
        }
        due
    }

    /// Harvests every due repository concurrently and waits for all.
    pub async fn harvest_due(self: &Arc<Self>) -> Vec<HarvestSummary> {
        let mut set = tokio::task::JoinSet::new();
        for id in self.due_repositories() {
            let this = Arc::clone(self);
            set.spawn(async move { this.harvest_repository(&id).await });
        }
        let mut out: Vec<HarvestSummary> = set.join_all().await.into_iter().flatten().collect();
        out.sort_by(|a, b| a.repository.cmp(&b.repository));
        out
    }

    /// Runs [`Aggregator::scheduler_tick`] every `scheduler_tick_ms` until
    /// `shutdown` resolves.
    pub async fn run_scheduler(self: Arc<Self>, shutdown: impl std::future::Future<Output = ()>) {
        // The first tick comes one period after start.
        let period = Duration::from_millis(self.config.scheduler_tick_ms.max(1));
        let mut interval = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                _ = interval.tick() => {
                    self.scheduler_tick();
                }
            }
        }
    }
}

enum ContactError {
    Unreachable(String),
    Rejected(String),
}

impl ContactError {
    fn from_client(e: ClientError) -> Self {
        match e {
            ClientError::Fatal { .. } => ContactError::Rejected(e.to_string()),
            _ => ContactError::Unreachable(e.to_string()),
        }
    }
}

fn new_repository(rc: &RepositoryConfig) -> SourceRepository {
    SourceRepository {
        id: rc.id.clone(),
        base_url: rc.base_url.clone(),
        trust_rank: rc.trust_rank,
        poll_interval_secs: rc.poll_interval_secs,
        reliability: rc.reliability,
        only_formats: rc.formats.clone(),
        status: RepoStatus::Pending,
        identify: None,
        formats: Vec::new(),
        last_harvest: Default::default(),
        consecutive_failures: 0,
        next_attempt: None,
        last_error: None,
        last_success: None,
    }
}

fn is_due(repo: &SourceRepository, now: DateTime<Utc>) -> bool {
    repo.next_attempt.is_none_or(|t| t <= now)
}

/// Delay before the next attempt after `failures` consecutive failures.
pub fn backoff_secs(interval: u64, failures: u32) -> u64 {
    let factor = 1u64.checked_shl(failures).unwrap_or(u64::MAX);
    interval.saturating_mul(factor).min(MAX_BACKOFF_SECS)
}

fn advance_watermark(repo: &mut SourceRepository, prefix: &str, to: Datestamp) {
    match repo.last_harvest.get(prefix) {
        Some(old) if compare_datestamps(old, &to).is_ge() => {}
        _ => {
            repo.last_harvest.insert(prefix.to_owned(), to);
        }
    }
}

fn header_count(fetched: &Fetched, name: &str) -> usize {
    fetched
        .raw
        .header(name)
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Records whose bytes parsed without any violation.
fn accepted_records(fetched: &Fetched, summary: &mut HarvestSummary) -> Vec<OaiRecord> {
    let parsed = &fetched.parsed;
    let records = fetched.response().records();
    // Units with a parsed header line up one-to-one with parsed records.
    let units: Vec<_> = parsed.units.iter().filter(|u| u.identifier.is_some()).collect();
    summary.dropped += parsed.units.len() - units.len();
    let mut out = Vec::new();
    for (unit, record) in units.into_iter().zip(records) {
        if parsed.violations_in(&unit.span).next().is_some() {
            tracing::warn!("rejecting {}: malformed record", record.header.identifier);
            summary.dropped += 1;
            continue;
        }
        out.push(record.clone());
    }
    out
}

fn describe_errors(errors: &[OaiError]) -> String {
    errors
        .iter()
        .map(|e| format!("{}: {}", e.code, e.message))
        .collect::<Vec<_>>()
        .join("; ")
}
