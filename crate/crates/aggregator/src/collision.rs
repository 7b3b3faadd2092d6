//! Choosing between two copies of a record that reached the aggregator
//! through different sources.

use std::cmp::Ordering;

use oairelay_core::xml::{escape_attr, escape_text, parse_document, Element, Node};
use oairelay_core::compare_datestamps;
use serde::{Deserialize, Serialize};

use crate::record::StoredRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Rule {
    /// Equal canonical metadata: the newcomer is a duplicate.
    DuplicateDiscard,
    /// The copy from the lower trust rank wins.
    TrustedSource,
    /// The copy whose original datestamp is newer wins.
    MostRecent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Fallback {
    #[default]
    KeepExisting,
    KeepBoth,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollisionPolicy {
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub fallback: Fallback,
}

impl Default for CollisionPolicy {
    fn default() -> Self {
        Self {
            rules: vec![Rule::DuplicateDiscard, Rule::TrustedSource, Rule::MostRecent],
            fallback: Fallback::KeepExisting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Decision {
    KeepExisting,
    Replace,
    KeepBoth,
}

/// Applies `policy` to two copies of the same key from different sources.
/// `trust_rank` maps a source repository id to its rank (lower is more
/// trusted); unknown sources rank last.
pub fn resolve_collision(
    existing: &StoredRecord,
    incoming: &StoredRecord,
    trust_rank: impl Fn(&str) -> Option<i64>,
    policy: &CollisionPolicy,
) -> Decision {
    for rule in &policy.rules {
        match rule {
            Rule::DuplicateDiscard => {
                if existing.deleted == incoming.deleted
                    && canonical_metadata(existing) == canonical_metadata(incoming)
                {
                    return Decision::KeepExisting;
                }
            }
            Rule::TrustedSource => {
                let rank = |r: &StoredRecord| trust_rank(&r.source).unwrap_or(i64::MAX);
                match rank(incoming).cmp(&rank(existing)) {
                    Ordering::Less => return Decision::Replace,
                    Ordering::Greater => return Decision::KeepExisting,
                    Ordering::Equal => {}
                }
            }
            Rule::MostRecent => {
                let a = existing.original_datestamp().0;
                let b = incoming.original_datestamp().0;
                match compare_datestamps(&b, &a) {
                    Ordering::Greater => return Decision::Replace,
                    Ordering::Less => return Decision::KeepExisting,
                    Ordering::Equal => {}
                }
            }
        }
    }
    match policy.fallback {
        Fallback::KeepExisting => Decision::KeepExisting,
        Fallback::KeepBoth => Decision::KeepBoth,
    }
}

fn canonical_metadata(r: &StoredRecord) -> Option<Vec<u8>> {
    r.metadata.as_ref().map(|m| canonicalize(m.as_bytes()))
}

/// Canonical form used for duplicate detection: attributes sorted by name,
/// runs of whitespace in text collapsed, whitespace-only text, comments and
/// processing instructions dropped, references decoded and re-escaped.
pub fn canonicalize(xml: &[u8]) -> Vec<u8> {
    let doc = parse_document(xml);
    let mut out = String::new();
    match &doc.root {
        Some(root) => write_element(root, &mut out),
        None => return collapse(&String::from_utf8_lossy(xml)).into_bytes(),
    }
    out.into_bytes()
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn write_element(el: &Element, out: &mut String) {
    out.push('<');
    out.push_str(&el.name);
    let mut attrs: Vec<_> = el.attrs.iter().collect();
    attrs.sort_by(|a, b| a.name.cmp(&b.name));
    for a in attrs {
        out.push(' ');
        out.push_str(&a.name);
        out.push_str("=\"");
        out.push_str(&escape_attr(&collapse(&a.value)));
        out.push('"');
    }
    out.push('>');
    for child in &el.children {
        match child {
            Node::Element(e) => write_element(e, out),
            Node::Text { text, .. } => {
                let t = collapse(text);
                if !t.is_empty() {
                    out.push_str(&escape_text(&t));
                }
            }
        }
    }
    out.push_str("</");
    out.push_str(&el.name);
    out.push('>');
}

#[cfg(test)]
mod tests {
    use super::*;
    use oairelay_core::{Datestamp, ProvenanceEntry, XmlFragment};

    fn stored(source: &str, title: &str, origin: &str) -> StoredRecord {
        let origin = Datestamp::parse(origin).unwrap();
        let prov = ProvenanceEntry {
            base_url: format!("http://{source}/oai"),
            origin_identifier: "oai:x:1".into(),
            origin_datestamp: origin,
            metadata_namespace: "ns".into(),
            harvest_date: Datestamp::parse("2002-06-01T00:00:00Z").unwrap(),
            altered: false,
            parent: None,
        };
        StoredRecord {
            identifier: "oai:x:1".into(),
            prefix: "oai_dc".into(),
            source: source.into(),
            original_datestamp: origin,
            local_datestamp: Datestamp::parse("2002-06-01T00:00:00Z").unwrap(),
            metadata: Some(XmlFragment::from(format!("<dc><title>{title}</title></dc>"))),
            abouts: vec![prov.to_about()],
            set_specs: Vec::new(),
            deleted: false,
        }
    }

    fn ranks(id: &str) -> Option<i64> {
        match id {
            "bx" => Some(1),
            "ax" => Some(2),
            _ => None,
        }
    }

    fn only(rule: Rule) -> CollisionPolicy {
        CollisionPolicy {
            rules: vec![rule],
            fallback: Fallback::KeepExisting,
        }
    }

    #[test]
    fn duplicates_are_discarded() {
        let a = stored("ax", "Same", "2002-01-01");
        let b = stored("bx", "Same", "2002-01-01");
        assert_eq!(
            resolve_collision(&a, &b, ranks, &only(Rule::DuplicateDiscard)),
            Decision::KeepExisting
        );
    }

    #[test]
    fn canonical_form_ignores_layout() {
        let a = canonicalize(br#"<dc b="2"  a="1"><t>A   B</t>  <!-- x --></dc>"#);
        let b = canonicalize(b"<dc a='1' b='2'>\n <t>\n A B </t>\n</dc>");
        assert_eq!(a, b);
        assert_ne!(a, canonicalize(br#"<dc a="1" b="2"><t>A C</t></dc>"#));
    }

    #[test]
    fn trusted_source_prefers_lower_rank() {
        let a = stored("ax", "A", "2002-01-01");
        let b = stored("bx", "B", "2002-01-01");
        assert_eq!(resolve_collision(&a, &b, ranks, &only(Rule::TrustedSource)), Decision::Replace);
        assert_eq!(
            resolve_collision(&b, &a, ranks, &only(Rule::TrustedSource)),
            Decision::KeepExisting
        );
    }

    #[test]
    fn most_recent_prefers_newer_origin() {
        let old = stored("ax", "A", "2002-03-01");
        let new = stored("cx", "B", "2002-04-01");
        let policy = CollisionPolicy {
            rules: vec![Rule::DuplicateDiscard, Rule::TrustedSource, Rule::MostRecent],
            fallback: Fallback::KeepBoth,
        };
        // Equal (unknown) trust falls through to MostRecent.
        let equal = |_: &str| Some(5);
        assert_eq!(resolve_collision(&old, &new, equal, &policy), Decision::Replace);
        assert_eq!(resolve_collision(&new, &old, equal, &policy), Decision::KeepExisting);
    }

    #[test]
    fn ties_reach_the_fallback() {
        let a = stored("ax", "A", "2002-03-01");
        let b = stored("cx", "B", "2002-03-01");
        let policy = CollisionPolicy {
            rules: vec![Rule::MostRecent],
            fallback: Fallback::KeepBoth,
        };
        assert_eq!(resolve_collision(&a, &b, ranks, &policy), Decision::KeepBoth);
    }
}
