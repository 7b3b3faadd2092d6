use chrono::{DateTime, Utc};
use oairelay_core::{
    validate_identifier, Datestamp, MetadataFormat, OaiRecord, ProvenanceEntry,
};
use serde::{Deserialize, Serialize};

use crate::collision::{resolve_collision, CollisionPolicy, Decision};
use crate::record::{SourceRepository, StoredRecord};
use crate::store::{Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum IngestOutcome {
    /// First copy of the key.
    Inserted,
    /// Same source, changed content.
    Updated,
    /// Same source, same content: nothing written.
    Unchanged,
    /// Collision won by the newcomer.
    Replaced,
    /// Collision stored alongside the existing copy.
    KeptBoth,
    /// Collision won by the existing copy.
    Discarded,
}

impl IngestOutcome {
    pub fn is_write(self) -> bool {
        matches!(
            self,
            IngestOutcome::Inserted
                | IngestOutcome::Updated
                | IngestOutcome::Replaced
                | IngestOutcome::KeptBoth
        )
    }

    pub fn is_collision(self) -> bool {
        matches!(
            self,
            IngestOutcome::Replaced | IngestOutcome::KeptBoth | IngestOutcome::Discarded
        )
    }
}

/// Turns a harvested record into the form stored here: identifier kept,
/// datestamp set to `now`, and a provenance hop added that wraps whatever
/// provenance the record already carried.
pub fn prepare_record(
    record: &OaiRecord,
    repo: &SourceRepository,
    format: &MetadataFormat,
    now: DateTime<Utc>,
    altered: bool,
) -> Result<StoredRecord, String> {
    let header = &record.header;
    let check = validate_identifier(&header.identifier);
    if !check.valid {
        return Err(format!(
            "identifier {:?} rejected: {}",
            header.identifier,
            check.reason.unwrap_or_default()
        ));
    }
    if header.deleted == record.metadata.is_some() && !header.deleted {
        return Err(format!("record {:?} has no metadata", header.identifier));
    }
    let harvest_date = Datestamp::seconds(now);
    let mut abouts = record.abouts.clone();
    let previous = ProvenanceEntry::find(&abouts);
    let entry = ProvenanceEntry {
        base_url: repo.base_url.clone(),
        origin_identifier: header.identifier.clone(),
        origin_datestamp: header.datestamp,
        metadata_namespace: format.namespace.clone(),
        harvest_date,
        altered,
        parent: previous.as_ref().map(|(_, p)| Box::new(p.clone())),
    };
    match previous {
        Some((i, _)) => abouts[i] = entry.to_about(),
        None => abouts.push(entry.to_about()),
    }
    Ok(StoredRecord {
        identifier: header.identifier.clone(),
        prefix: format.prefix.clone(),
        source: repo.id.clone(),
        original_datestamp: header.datestamp,
        local_datestamp: harvest_date,
        metadata: if header.deleted {
            None
        } else {
            record.metadata.clone()
        },
        abouts,
        set_specs: header.set_specs.clone(),
        deleted: header.deleted,
    })
}

/// Stores `incoming`, resolving collisions with copies from other sources.
pub fn ingest_record(
    store: &mut Store,
    incoming: StoredRecord,
    policy: &CollisionPolicy,
) -> Result<IngestOutcome, StoreError> {
    let key = incoming.key();
    let versions = store.versions(&key).to_vec();
    if let Some(same) = versions.iter().find(|v| v.source == incoming.source) {
        if same.same_content(&incoming) {
            return Ok(IngestOutcome::Unchanged);
        }
        store.put(incoming)?;
        return Ok(IngestOutcome::Updated);
    }
    if versions.is_empty() {
        store.put(incoming)?;
        return Ok(IngestOutcome::Inserted);
    }

    let trust = |id: &str| store.repo(id).map(|r| r.trust_rank);
    let decisions: Vec<Decision> = versions
        .iter()
        .map(|v| resolve_collision(v, &incoming, trust, policy))
        .collect();
    if decisions.contains(&Decision::KeepExisting) {
        return Ok(IngestOutcome::Discarded);
    }
    let all_replaced = decisions.iter().all(|d| *d == Decision::Replace);
    for (v, d) in versions.iter().zip(&decisions) {
        if *d == Decision::Replace {
            store.remove(&key, &v.source)?;
        }
    }
    store.put(incoming)?;
    Ok(if all_replaced {
        IngestOutcome::Replaced
    } else {
        IngestOutcome::KeptBoth
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{Fallback, Rule};
    use crate::record::RepoStatus;
    use chrono::TimeZone;
    use oairelay_core::{RecordHeader, XmlFragment};

    fn repo(id: &str, rank: i64) -> SourceRepository {
        SourceRepository {
            id: id.into(),
            base_url: format!("http://{id}.example.org/oai"),
            trust_rank: rank,
            poll_interval_secs: 60,
            reliability: Default::default(),
            only_formats: None,
            status: RepoStatus::Active,
            identify: None,
            formats: vec![MetadataFormat::oai_dc()],
            last_harvest: Default::default(),
            consecutive_failures: 0,
            next_attempt: None,
            last_error: None,
            last_success: None,
        }
    }

    fn record(ds: &str, title: &str) -> OaiRecord {
        OaiRecord {
            header: RecordHeader::new("oai:x.example.org:1", Datestamp::parse(ds).unwrap()),
            metadata: Some(XmlFragment::from(format!("<dc><t>{title}</t></dc>"))),
            abouts: Vec::new(),
        }
    }

    fn at(h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2002, 6, 1, h, 0, 0).unwrap()
    }

    #[test]
    fn datestamp_is_rewritten_and_origin_kept() {
        let r = repo("x", 1);
        let s = prepare_record(&record("2002-01-01", "a"), &r, &MetadataFormat::oai_dc(), at(12), false)
            .unwrap();
        assert_eq!(s.local_datestamp.to_string(), "2002-06-01T12:00:00Z");
        assert_eq!(s.original_datestamp().0.to_string(), "2002-01-01");
        assert_eq!(s.provenance_depth(), 1);
    }

    #[test]
    fn existing_provenance_is_nested() {
        let r = repo("x", 1);
        let fmt = MetadataFormat::oai_dc();
        let first = prepare_record(&record("2002-01-01", "a"), &r, &fmt, at(1), false).unwrap();
        let mut again = first.to_oai();
        again.abouts.push(XmlFragment::from("<other/>"));
        let second = prepare_record(&again, &repo("ax", 2), &fmt, at(2), false).unwrap();
        assert_eq!(second.provenance_depth(), 2);
        assert_eq!(second.original_datestamp().0.to_string(), "2002-01-01");
        assert_eq!(second.abouts.len(), 2);
        assert_eq!(second.abouts[1].as_bytes(), b"<other/>");
    }

    #[test]
    fn unchanged_reharvest_is_a_no_op() {
        let mut store = Store::in_memory();
        let r = repo("x", 1);
        let fmt = MetadataFormat::oai_dc();
        let policy = CollisionPolicy::default();
        let a = prepare_record(&record("2002-01-01", "a"), &r, &fmt, at(1), false).unwrap();
        assert_eq!(ingest_record(&mut store, a, &policy).unwrap(), IngestOutcome::Inserted);
        let b = prepare_record(&record("2002-01-01", "a"), &r, &fmt, at(2), false).unwrap();
        assert_eq!(ingest_record(&mut store, b, &policy).unwrap(), IngestOutcome::Unchanged);
        let kept = &store.versions(&("oai:x.example.org:1".into(), "oai_dc".into()))[0];
        assert_eq!(kept.local_datestamp.instant(), at(1));
        assert_eq!(kept.provenance_depth(), 1);
        let c = prepare_record(&record("2002-02-01", "b"), &r, &fmt, at(3), false).unwrap();
        assert_eq!(ingest_record(&mut store, c, &policy).unwrap(), IngestOutcome::Updated);
    }

    #[test]
    fn keep_both_then_trusted_winner() {
        let mut store = Store::in_memory();
        store.save_repo(repo("ax", 2)).unwrap();
        store.save_repo(repo("bx", 1)).unwrap();
        let fmt = MetadataFormat::oai_dc();
        let policy = CollisionPolicy {
            rules: vec![Rule::DuplicateDiscard],
            fallback: Fallback::KeepBoth,
        };
        let a = prepare_record(&record("2002-01-01", "a"), &repo("ax", 2), &fmt, at(1), false).unwrap();
        let b = prepare_record(&record("2002-01-01", "b"), &repo("bx", 1), &fmt, at(1), false).unwrap();
        ingest_record(&mut store, a, &policy).unwrap();
        assert_eq!(ingest_record(&mut store, b, &policy).unwrap(), IngestOutcome::KeptBoth);
        assert_eq!(store.record_count(), 2);
    }

    #[test]
    fn invalid_identifier_is_rejected() {
        let mut rec = record("2002-01-01", "a");
        rec.header.identifier = "not a uri".into();
        assert!(prepare_record(&rec, &repo("x", 1), &MetadataFormat::oai_dc(), at(1), false).is_err());
    }
}
