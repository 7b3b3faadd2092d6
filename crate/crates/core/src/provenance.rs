//! Harvest history carried in a record's `about` section, using the
//! OAI-PMH 2.0 provenance schema.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datestamp::{compare_datestamps, Datestamp};
use crate::model::XmlFragment;
use crate::xml::{escape_text, parse_document, Element, NamespaceScope};

pub const PROVENANCE_NS: &str = "http://www.openarchives.org/OAI/2.0/provenance";
pub const PROVENANCE_SCHEMA: &str = "http://www.openarchives.org/OAI/2.0/provenance.xsd";

/// One hop of a record's history. `parent` is the hop before this one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub base_url: String,
    pub origin_identifier: String,
    pub origin_datestamp: Datestamp,
    pub metadata_namespace: String,
    pub harvest_date: Datestamp,
    pub altered: bool,
    pub parent: Option<Box<ProvenanceEntry>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProvenanceError {
    #[error("provenance fragment is not well-formed: {0}")]
    Malformed(String),
    #[error("originDescription is missing <{0}>")]
    MissingField(&'static str),
    #[error("invalid {field}: {value:?}")]
    Invalid { field: &'static str, value: String },
}

impl ProvenanceEntry {
    /// Number of hops described, including this one.
    pub fn depth(&self) -> usize {
        1 + self.parent.as_ref().map_or(0, |p| p.depth())
    }

    /// The oldest hop, i.e. the one closest to the original repository.
    pub fn innermost(&self) -> &ProvenanceEntry {
        let mut e = self;
        while let Some(p) = &e.parent {
            e = p;
        }
        e
    }

    /// Every hop, newest first.
    pub fn chain(&self) -> Vec<&ProvenanceEntry> {
        let mut out = vec![self];
        let mut e = self;
        while let Some(p) = &e.parent {
            out.push(p);
            e = p;
        }
        out
    }

    /// Checks that no hop was harvested before its origin datestamp.
    pub fn is_consistent(&self) -> bool {
        self.chain().iter().all(|e| {
            compare_datestamps(&e.harvest_date, &e.origin_datestamp) != Ordering::Less
        })
    }

    pub fn to_about(&self) -> XmlFragment {
        let mut out = String::new();
        write!(
            out,
            "<provenance xmlns=\"{PROVENANCE_NS}\" \
             xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" \
             xsi:schemaLocation=\"{PROVENANCE_NS} {PROVENANCE_SCHEMA}\">"
        )
        .expect("string write");
        self.write_origin(&mut out);
        out.push_str("</provenance>");
        XmlFragment::from(out)
    }

    fn write_origin(&self, out: &mut String) {
        write!(
            out,
            "<originDescription harvestDate=\"{}\" altered=\"{}\">\
             <baseURL>{}</baseURL><identifier>{}</identifier>\
             <datestamp>{}</datestamp><metadataNamespace>{}</metadataNamespace>",
            self.harvest_date,
            self.altered,
            escape_text(&self.base_url),
            escape_text(&self.origin_identifier),
            self.origin_datestamp,
            escape_text(&self.metadata_namespace),
        )
        .expect("string write");
        if let Some(parent) = &self.parent {
            parent.write_origin(out);
        }
        out.push_str("</originDescription>");
    }

    /// Parses an about fragment. Returns `Ok(None)` when the fragment is not
    /// a provenance container.
    pub fn from_about(fragment: &XmlFragment) -> Result<Option<ProvenanceEntry>, ProvenanceError> {
        let doc = parse_document(fragment.as_bytes());
        let Some(root) = doc.root else {
            return Err(ProvenanceError::Malformed("no root element".into()));
        };
        let scope = NamespaceScope::new();
        if root.local_name() != "provenance"
            || scope.element_namespace(&root).as_deref() != Some(PROVENANCE_NS)
        {
            return Ok(None);
        }
        if let Some(v) = doc.violations.first() {
            return Err(ProvenanceError::Malformed(v.to_string()));
        }
        let origin = root
            .child("originDescription")
            .ok_or(ProvenanceError::MissingField("originDescription"))?;
        parse_origin(origin).map(Some)
    }

    /// Finds the provenance about among `abouts`, returning its index.
    pub fn find(abouts: &[XmlFragment]) -> Option<(usize, ProvenanceEntry)> {
        abouts.iter().enumerate().find_map(|(i, a)| {
            ProvenanceEntry::from_about(a)
                .ok()
                .flatten()
                .map(|e| (i, e))
        })
    }
}

fn parse_origin(el: &Element) -> Result<ProvenanceEntry, ProvenanceError> {
    let field = |name: &'static str| -> Result<String, ProvenanceError> {
        el.child(name)
            .map(|c| c.text().trim().to_owned())
            .ok_or(ProvenanceError::MissingField(name))
    };
    let datestamp = |name: &'static str, value: &str| {
        Datestamp::parse(value).map_err(|_| ProvenanceError::Invalid {
            field: name,
            value: value.to_owned(),
        })
    };
    let harvest_raw = el
        .attr("harvestDate")
        .ok_or(ProvenanceError::MissingField("harvestDate"))?;
    let altered = match el.attr("altered").unwrap_or("false") {
        "true" | "1" => true,
        "false" | "0" => false,
        other => {
            return Err(ProvenanceError::Invalid {
                field: "altered",
                value: other.to_owned(),
            })
        }
    };
    let parent = match el.child("originDescription") {
        Some(p) => Some(Box::new(parse_origin(p)?)),
        None => None,
    };
    Ok(ProvenanceEntry {
        base_url: field("baseURL")?,
        origin_identifier: field("identifier")?,
        origin_datestamp: datestamp("datestamp", &field("datestamp")?)?,
        metadata_namespace: field("metadataNamespace")?,
        harvest_date: datestamp("harvestDate", harvest_raw)?,
        altered,
        parent,
    })
}
