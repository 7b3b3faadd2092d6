//! Deterministic record corpora for simulated providers.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use oairelay_core::model::{DC_NS, OAI_DC_NS, OAI_DC_SCHEMA, XSI_NS};
use oairelay_core::{compare_datestamps, Datestamp, MetadataFormat};
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn identifier(repo: &str, index: usize) -> String {
    format!("oai:{repo}.example.org:rec-{index:05}")
}

pub fn format_for(prefix: &str) -> MetadataFormat {
    if prefix == "oai_dc" {
        return MetadataFormat::oai_dc();
    }
    MetadataFormat {
        prefix: prefix.to_owned(),
        schema: format!("http://formats.example.org/{prefix}.xsd"),
        namespace: format!("http://formats.example.org/{prefix}/"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub index: usize,
    pub identifier: String,
    pub version: u32,
    pub datestamp: Datestamp,
    pub deleted: bool,
}

/// Field values of one record version. Faults are injected into these
/// strings before they are assembled, each into its own field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DcParts {
    pub title: Vec<u8>,
    pub creator: Vec<u8>,
    pub description: Vec<u8>,
    /// Raw attribute text placed in the `dc:date` start tag.
    pub date_attrs: Vec<u8>,
    pub date: String,
    pub resource: String,
    pub namespace: String,
}

impl DcParts {
    pub fn new(repo: &str, rec: &CorpusRecord) -> Self {
        let i = rec.index;
        Self {
            title: format!("Record {i} of {repo}, version {}", rec.version).into_bytes(),
            creator: format!("Author {}", i % 17).into_bytes(),
            description: format!("Simulated item {i} held by {repo}.").into_bytes(),
            date_attrs: Vec::new(),
            date: format!("{}", 1990 + i % 30),
            resource: format!("http://{repo}.example.org/items/{i}"),
            namespace: OAI_DC_NS.to_owned(),
        }
    }

    pub fn assemble(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(
            format!(
                "<oai_dc:dc xmlns:oai_dc=\"{}\" xmlns:dc=\"{DC_NS}\" xmlns:xsi=\"{XSI_NS}\" \
                 xsi:schemaLocation=\"{OAI_DC_NS} {OAI_DC_SCHEMA}\">",
                self.namespace
            )
            .as_bytes(),
        );
        let mut field = |name: &str, attrs: &[u8], value: &[u8]| {
            out.extend_from_slice(format!("<dc:{name}").as_bytes());
            out.extend_from_slice(attrs);
            out.push(b'>');
            out.extend_from_slice(value);
            out.extend_from_slice(format!("</dc:{name}>").as_bytes());
        };
        field("title", b"", &self.title);
        field("creator", b"", &self.creator);
        field("description", b"", &self.description);
        field("date", &self.date_attrs, self.date.as_bytes());
        field("identifier", b"", self.resource.as_bytes());
        out.extend_from_slice(b"</oai_dc:dc>");
        out
    }
}

/// Metadata bytes of a record version in a format other than oai_dc.
pub fn other_metadata(repo: &str, rec: &CorpusRecord, prefix: &str) -> Vec<u8> {
    let ns = format_for(prefix).namespace;
    format!(
        "<{prefix}:record xmlns:{prefix}=\"{ns}\"><{prefix}:title>Record {} of {repo}, version {}</{prefix}:title></{prefix}:record>",
        rec.index, rec.version
    )
    .into_bytes()
}

/// The records of one simulated provider, keyed by identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub repo: String,
    records: BTreeMap<String, CorpusRecord>,
}

impl Corpus {
    pub fn generate(repo: &str, count: usize, created: DateTime<Utc>) -> Self {
        let records = (0..count)
            .map(|i| {
                let id = identifier(repo, i);
                let rec = CorpusRecord {
                    index: i,
                    identifier: id.clone(),
                    version: 0,
                    datestamp: Datestamp::seconds(created),
                    deleted: false,
                };
                (id, rec)
            })
            .collect();
        Self {
            repo: repo.to_owned(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &CorpusRecord> {
        self.records.values()
    }

    pub fn identifiers(&self) -> Vec<String> {
        self.records.keys().cloned().collect()
    }

    /// Clean oai_dc bytes of the current version.
    pub fn dc_bytes(&self, id: &str) -> Option<Vec<u8>> {
        self.records
            .get(id)
            .map(|r| DcParts::new(&self.repo, r).assemble())
    }

    /// Records in datestamp order, then identifier, within `[from, until]`.
    pub fn window(&self, from: Option<&Datestamp>, until: Option<&Datestamp>) -> Vec<&CorpusRecord> {
        let mut out: Vec<&CorpusRecord> = self
            .records
            .values()
            .filter(|r| from.is_none_or(|f| compare_datestamps(&r.datestamp, f).is_ge()))
            .filter(|r| until.is_none_or(|u| compare_datestamps(&r.datestamp, u).is_le()))
            .collect();
        out.sort_by(|a, b| {
            compare_datestamps(&a.datestamp, &b.datestamp).then(a.identifier.cmp(&b.identifier))
        });
        out
    }

    /// Bumps the version of `id` and stamps it with `now`.
    pub fn mutate(&mut self, id: &str, now: DateTime<Utc>) -> bool {
        match self.records.get_mut(id) {
            Some(r) => {
                r.version += 1;
                r.deleted = false;
                r.datestamp = Datestamp::seconds(now);
                true
            }
            None => false,
        }
    }

    pub fn delete(&mut self, id: &str, now: DateTime<Utc>) -> bool {
        match self.records.get_mut(id) {
            Some(r) => {
                r.deleted = true;
                r.datestamp = Datestamp::seconds(now);
                true
            }
            None => false,
        }
    }

    /// Mutates `count` records chosen by `seed` and returns their ids.
    pub fn mutate_random(&mut self, count: usize, seed: u64, now: DateTime<Utc>) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<String> = self
            .records
            .keys()
            .cloned()
            .choose_multiple(&mut rng, count);
        chosen.sort();
        for id in &chosen {
            self.mutate(id, now);
        }
        chosen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2002, 1, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Corpus::generate("x", 10, t0());
        let b = Corpus::generate("x", 10, t0());
        assert_eq!(a, b);
        assert_eq!(a.dc_bytes(&identifier("x", 3)), b.dc_bytes(&identifier("x", 3)));
    }

    #[test]
    fn clean_dc_is_well_formed() {
        let c = Corpus::generate("x", 1, t0());
        let bytes = c.dc_bytes(&identifier("x", 0)).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().namespace(), Some(OAI_DC_NS));
        assert_eq!(doc.root_element().children().filter(|n| n.is_element()).count(), 5);
    }

    #[test]
    fn mutation_moves_record_to_the_end() {
        let mut c = Corpus::generate("x", 5, t0());
        let later = t0() + chrono::Duration::seconds(10);
        let ids = c.mutate_random(2, 9, later);
        assert_eq!(ids.len(), 2);
        let w = c.window(Some(&Datestamp::seconds(later)), None);
        let got: Vec<_> = w.iter().map(|r| r.identifier.clone()).collect();
        assert_eq!(got, ids);
        assert_eq!(c.mutate_random(2, 9, later), ids);
    }
}
