use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use oairelay_core::{
    Datestamp, Identify, MetadataFormat, OaiRecord, ProvenanceEntry, RecordHeader, XmlFragment,
};
use serde::{Deserialize, Serialize};

/// A record as held by the aggregator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StoredRecord {
    pub identifier: String,
    pub prefix: String,
    /// Id of the source repository it was harvested from.
    pub source: String,
    /// Datestamp the source served it with.
    pub original_datestamp: Datestamp,
    /// When it was ingested here; this is the datestamp re-exported.
    pub local_datestamp: Datestamp,
    pub metadata: Option<XmlFragment>,
    /// Includes the provenance container.
    pub abouts: Vec<XmlFragment>,
    /// Kept for completeness; not re-exported.
    #[serde(default)]
    pub set_specs: Vec<String>,
    pub deleted: bool,
}

impl StoredRecord {
    pub fn key(&self) -> (String, String) {
        (self.identifier.clone(), self.prefix.clone())
    }

    pub fn provenance(&self) -> Option<ProvenanceEntry> {
        ProvenanceEntry::find(&self.abouts).map(|(_, p)| p)
    }

    /// Datestamp from the oldest provenance hop. The flag is `true` when
    /// there is no provenance and the local datestamp is returned instead.
    pub fn original_datestamp(&self) -> (Datestamp, bool) {
        match self.provenance() {
            Some(p) => (p.innermost().origin_datestamp, false),
            None => (self.local_datestamp, true),
        }
    }

    pub fn provenance_depth(&self) -> usize {
        self.provenance().map_or(0, |p| p.depth())
    }

    /// The record as re-exported: local datestamp, no set membership.
    pub fn to_oai(&self) -> OaiRecord {
        OaiRecord {
            header: RecordHeader {
                identifier: self.identifier.clone(),
                datestamp: self.local_datestamp,
                set_specs: Vec::new(),
                deleted: self.deleted,
            },
            metadata: if self.deleted {
                None
            } else {
                self.metadata.clone()
            },
            abouts: self.abouts.clone(),
        }
    }

    /// Same content from the same upstream state, ignoring when it was
    /// ingested here.
    pub fn same_content(&self, other: &StoredRecord) -> bool {
        let strip = |r: &StoredRecord| -> (Vec<XmlFragment>, Option<ProvenanceEntry>) {
            let mut abouts = r.abouts.clone();
            let prov = ProvenanceEntry::find(&abouts).map(|(i, p)| {
                abouts.remove(i);
                p
            });
            (abouts, prov.and_then(|p| p.parent.map(|b| *b)))
        };
        self.identifier == other.identifier
            && self.prefix == other.prefix
            && self.source == other.source
            && self.original_datestamp == other.original_datestamp
            && self.metadata == other.metadata
            && self.deleted == other.deleted
            && self.set_specs == other.set_specs
            && strip(self) == strip(other)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Reliability {
    /// ListRecords with resumption.
    #[default]
    Batch,
    /// ListIdentifiers, then one GetRecord per item.
    PerRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RepoStatus {
    /// Registered but the source has not answered Identify yet.
    Pending,
    Active,
}

/// An upstream provider and everything the aggregator knows about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceRepository {
    pub id: String,
    pub base_url: String,
    pub trust_rank: i64,
    pub poll_interval_secs: u64,
    #[serde(default)]
    pub reliability: Reliability,
    /// Restricts harvesting to these prefixes when set.
    #[serde(default)]
    pub only_formats: Option<Vec<String>>,
    pub status: RepoStatus,
    pub identify: Option<Identify>,
    #[serde(default)]
    pub formats: Vec<MetadataFormat>,
    /// Per-prefix responseDate of the last complete harvest.
    #[serde(default)]
    pub last_harvest: BTreeMap<String, Datestamp>,
    #[serde(default)]
    pub consecutive_failures: u32,
    pub next_attempt: Option<DateTime<Utc>>,
    pub last_error: Option<String>,
    pub last_success: Option<DateTime<Utc>>,
}

impl SourceRepository {
    pub fn harvest_formats(&self) -> Vec<MetadataFormat> {
        self.formats
            .iter()
            .filter(|f| {
                self.only_formats
                    .as_ref()
                    .is_none_or(|only| only.iter().any(|p| p == &f.prefix))
            })
            .cloned()
            .collect()
    }

    pub fn format(&self, prefix: &str) -> Option<&MetadataFormat> {
        self.formats.iter().find(|f| f.prefix == prefix)
    }
}
