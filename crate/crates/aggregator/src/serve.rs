//! Answering OAI-PMH requests from the store.

use std::cmp::Ordering;

use oairelay_core::{
    compare_datestamps, parse_request, Datestamp, DeletedRecordPolicy, Granularity, Identify,
    MetadataFormat, OaiError, OaiErrorCode, OaiRequest, OaiResponse, Payload, RequestEcho,
    ResumptionToken, Verb,
};

use crate::aggregator::Aggregator;
use crate::record::StoredRecord;
use crate::store::Store;
use crate::token::TokenState;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum View {
    Aggregated,
    Wrapped(String),
}

impl View {
    fn repo(&self) -> Option<&str> {
        match self {
            View::Aggregated => None,
            View::Wrapped(id) => Some(id),
        }
    }

    fn admits(&self, rec: &StoredRecord) -> bool {
        self.repo().is_none_or(|id| rec.source == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownRepository(pub String);

/// The version of a key served in `view`: in a wrapped view the copy from
/// that source, otherwise the copy from the most trusted source, first
/// stored on ties.
pub fn select_version<'a>(
    store: &Store,
    versions: &'a [StoredRecord],
    view: &View,
) -> Option<&'a StoredRecord> {
    let rank = |r: &StoredRecord| store.repo(&r.source).map_or(i64::MAX, |s| s.trust_rank);
    versions
        .iter()
        .filter(|v| view.admits(v))
        .reduce(|best, v| if rank(v) < rank(best) { v } else { best })
}

impl Aggregator {
    pub fn base_url(&self, view: &View) -> String {
        match view {
            View::Aggregated => self.config().aggregated_base_url(),
            View::Wrapped(id) => self.config().wrapped_base_url(id),
        }
    }

    /// Answers a request given as raw key/value pairs.
    pub fn serve_pairs(
        &self,
        view: &View,
        pairs: Vec<(String, String)>,
    ) -> Result<OaiResponse, UnknownRepository> {
        if let Some(id) = view.repo() {
            if self.store().repo(id).is_none() {
                return Err(UnknownRepository(id.to_owned()));
            }
        }
        let now = Datestamp::seconds(self.now());
        let base = self.base_url(view);
        Ok(match parse_request(pairs) {
            Ok(req) => self.serve(view, &req),
            Err(e) => OaiResponse::error(now, RequestEcho::bare(base), e),
        })
    }

    /// Answers a validated request. Never contacts a source.
    pub fn serve(&self, view: &View, req: &OaiRequest) -> OaiResponse {
        let now = Datestamp::seconds(self.now());
        let echo = RequestEcho::for_request(self.base_url(view), req);
        let store = self.store();
        let payload = match req.verb() {
            Verb::Identify => Ok(Payload::Identify(self.identify(&store, view))),
            Verb::ListMetadataFormats => {
                list_formats(&store, view, req.identifier.as_deref())
                    .map(Payload::ListMetadataFormats)
            }
            Verb::ListSets => Err(OaiError::new(
                OaiErrorCode::NoSetHierarchy,
                "this aggregator does not export sets",
            )),
            Verb::GetRecord => get_record(
                &store,
                view,
                req.identifier.as_deref().unwrap_or_default(),
                req.metadata_prefix.as_deref().unwrap_or_default(),
            ),
            Verb::ListIdentifiers | Verb::ListRecords => self.list(&store, view, req),
        };
        OaiResponse {
            response_date: now,
            request: echo,
            payload: payload.unwrap_or_else(|e| Payload::Errors(vec![e])),
        }
    }

    fn identify(&self, store: &Store, view: &View) -> Identify {
        let earliest = store
            .all_versions()
            .filter(|r| view.admits(r))
            .map(|r| r.local_datestamp)
            .min_by(compare_datestamps)
            .unwrap_or_else(|| Datestamp::seconds(self.now()));
        let base_url = self.base_url(view);
        let own = || Identify {
            repository_name: self.config().repository_name.clone(),
            base_url: base_url.clone(),
            protocol_version: "2.0".into(),
            earliest_datestamp: earliest,
            deleted_record: DeletedRecordPolicy::Transient,
            granularity: Granularity::Second,
            admin_emails: vec![self.config().admin_email.clone()],
            compressions: Vec::new(),
            descriptions: Vec::new(),
        };
        match view.repo().and_then(|id| store.repo(id)?.identify.clone()) {
            // Replay the source's own answer, adjusted to what is served here.
            Some(mut snapshot) => {
                snapshot.base_url = base_url.clone();
                snapshot.earliest_datestamp = earliest;
                snapshot.granularity = Granularity::Second;
                snapshot
            }
            None => own(),
        }
    }

    fn list(&self, store: &Store, view: &View, req: &OaiRequest) -> Result<Payload, OaiError> {
        let verb = req.verb();
        let now = self.now();
        let ttl = self.config().token_ttl_secs;
        let (state, resumed) = match &req.resumption_token {
            Some(token) => {
                let bad = |why: &str| {
                    OaiError::new(OaiErrorCode::BadResumptionToken, format!("{why}: {token}"))
                };
                let state = TokenState::decode(token).ok_or_else(|| bad("unreadable token"))?;
                if state.verb != verb || state.view.as_deref() != view.repo() {
                    return Err(bad("token belongs to another list"));
                }
                if state.expires(ttl).is_none_or(|t| t < now) {
                    return Err(bad("token has expired"));
                }
                (state, true)
            }
            None => {
                let prefix = req.metadata_prefix.clone().unwrap_or_default();
                let state = TokenState {
                    view: view.repo().map(str::to_owned),
                    verb,
                    prefix,
                    from: req.from,
                    until: req.until,
                    after: (i64::MIN, String::new()),
                    generation: store.generation(),
                    issued: now.timestamp(),
                    cursor: 0,
                };
                (state, false)
            }
        };
        if let (Some(f), Some(u)) = (state.from, state.until) {
            if compare_datestamps(&f, &u) == Ordering::Greater {
                return Err(OaiError::bad_argument("from is later than until"));
            }
        }
        if !view_formats(store, view).iter().any(|f| f.prefix == state.prefix) {
            return Err(OaiError::new(
                OaiErrorCode::CannotDisseminateFormat,
                format!("metadata format {:?} is not available", state.prefix),
            ));
        }

        let mut matching: Vec<&StoredRecord> = store
            .entries()
            .filter(|(key, _)| key.1 == state.prefix)
            .filter_map(|(_, versions)| select_version(store, versions, view))
            .filter(|r| in_range(&r.local_datestamp, state.from.as_ref(), state.until.as_ref()))
            .collect();
        matching.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
        let total = matching.len();
        let start = matching.partition_point(|r| sort_key(r) <= (state.after.0, &state.after.1));
        if total == 0 && !resumed {
            return Err(OaiError::new(OaiErrorCode::NoRecordsMatch, "no records match"));
        }
        let page_size = self.config().page_size.max(1);
        let page: Vec<&StoredRecord> = matching[start..].iter().take(page_size).copied().collect();
        let more = start + page.len() < total;

        let token = if more {
            let last = page.last().expect("a non-final page is not empty");
            let next = TokenState {
                after: (last.local_datestamp.instant().timestamp(), last.identifier.clone()),
                cursor: state.cursor + page.len() as u64,
                issued: now.timestamp(),
                ..state.clone()
            };
            let expiration = next.expires(ttl).map(Datestamp::seconds);
            Some(ResumptionToken {
                token: next.encode(),
                complete_list_size: Some(total as u64),
                cursor: Some(state.cursor),
                expiration_date: expiration,
            })
        } else if resumed {
            Some(ResumptionToken {
                token: String::new(),
                complete_list_size: Some(total as u64),
                cursor: Some(state.cursor),
                expiration_date: None,
            })
        } else {
            None
        };

        Ok(match verb {
            Verb::ListIdentifiers => Payload::ListIdentifiers {
                headers: page.iter().map(|r| r.to_oai().header).collect(),
                token,
            },
            _ => Payload::ListRecords {
                records: page.iter().map(|r| r.to_oai()).collect(),
                token,
            },
        })
    }
}

fn sort_key(r: &StoredRecord) -> (i64, &str) {
    (r.local_datestamp.instant().timestamp(), r.identifier.as_str())
}

fn in_range(ds: &Datestamp, from: Option<&Datestamp>, until: Option<&Datestamp>) -> bool {
    from.is_none_or(|f| compare_datestamps(ds, f) != Ordering::Less)
        && until.is_none_or(|u| compare_datestamps(ds, u) != Ordering::Greater)
}

/// Formats offered by the view: every harvested source's formats for the
/// aggregated view, one source's own list for a wrapped view.
pub fn view_formats(store: &Store, view: &View) -> Vec<MetadataFormat> {
    let mut out: Vec<MetadataFormat> = Vec::new();
    for repo in store.repos() {
        if view.repo().is_some_and(|id| id != repo.id) {
            continue;
        }
        for f in repo.harvest_formats() {
            if !out.iter().any(|o| o.prefix == f.prefix) {
                out.push(f);
            }
        }
    }
    out
}

fn list_formats(
    store: &Store,
    view: &View,
    identifier: Option<&str>,
) -> Result<Vec<MetadataFormat>, OaiError> {
    let all = view_formats(store, view);
    let formats = match identifier {
        None => all,
        Some(id) => {
            let held: Vec<&str> = store
                .entries()
                .filter(|(key, versions)| key.0 == id && versions.iter().any(|v| view.admits(v)))
                .map(|(key, _)| key.1.as_str())
                .collect();
            if held.is_empty() {
                return Err(OaiError::new(
                    OaiErrorCode::IdDoesNotExist,
                    format!("{id:?} is not held here"),
                ));
            }
            all.into_iter()
                .filter(|f| held.contains(&f.prefix.as_str()))
                .collect()
        }
    };
    if formats.is_empty() {
        return Err(OaiError::new(
            OaiErrorCode::NoMetadataFormats,
            "no metadata formats available",
        ));
    }
    Ok(formats)
}

fn get_record(store: &Store, view: &View, id: &str, prefix: &str) -> Result<Payload, OaiError> {
    let key = (id.to_owned(), prefix.to_owned());
    if let Some(rec) = select_version(store, store.versions(&key), view) {
        return Ok(Payload::GetRecord(rec.to_oai()));
    }
    let known = store
        .entries()
        .any(|(key, versions)| key.0 == id && versions.iter().any(|v| view.admits(v)));
    Err(if known {
        OaiError::new(
            OaiErrorCode::CannotDisseminateFormat,
            format!("{id:?} is not available as {prefix:?}"),
        )
    } else {
        OaiError::new(OaiErrorCode::IdDoesNotExist, format!("{id:?} is not held here"))
    })
}
