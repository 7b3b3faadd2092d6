use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datestamp::{Datestamp, Granularity};

pub const OAI_NS: &str = "http://www.openarchives.org/OAI/2.0/";
pub const OAI_SCHEMA: &str = "http://www.openarchives.org/OAI/2.0/OAI-PMH.xsd";
pub const OAI_DC_NS: &str = "http://www.openarchives.org/OAI/2.0/oai_dc/";
pub const OAI_DC_SCHEMA: &str = "http://www.openarchives.org/OAI/2.0/oai_dc.xsd";
pub const DC_NS: &str = "http://purl.org/dc/elements/1.1/";
pub const XSI_NS: &str = "http://www.w3.org/2001/XMLSchema-instance";

/// An opaque XML fragment kept exactly as received.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct XmlFragment(Vec<u8>);

impl XmlFragment {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn as_str(&self) -> Option<&str> {
        std::str::from_utf8(&self.0).ok()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Serialized as a string when the bytes are UTF-8, otherwise as a byte
/// array, so nothing is lost either way.
impl Serialize for XmlFragment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(&self.0) {
            Ok(text) => s.serialize_str(text),
            Err(_) => s.serialize_bytes(&self.0),
        }
    }
}

impl<'de> Deserialize<'de> for XmlFragment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Bytes(Vec<u8>),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Text(t) => Self(t.into_bytes()),
            Repr::Bytes(b) => Self(b),
        })
    }
}

impl fmt::Debug for XmlFragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "XmlFragment({:?})", String::from_utf8_lossy(&self.0))
    }
}

impl From<&str> for XmlFragment {
    fn from(s: &str) -> Self {
        Self(s.as_bytes().to_vec())
    }
}

impl From<String> for XmlFragment {
    fn from(s: String) -> Self {
        Self(s.into_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordHeader {
    pub identifier: String,
    pub datestamp: Datestamp,
    pub set_specs: Vec<String>,
    pub deleted: bool,
}

impl RecordHeader {
    pub fn new(identifier: impl Into<String>, datestamp: Datestamp) -> Self {
        Self {
            identifier: identifier.into(),
            datestamp,
            set_specs: Vec::new(),
            deleted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiRecord {
    pub header: RecordHeader,
    /// Exactly one element; `None` for deleted records.
    pub metadata: Option<XmlFragment>,
    pub abouts: Vec<XmlFragment>,
}

impl OaiRecord {
    pub fn deleted(identifier: impl Into<String>, datestamp: Datestamp) -> Self {
        let mut header = RecordHeader::new(identifier, datestamp);
        header.deleted = true;
        Self {
            header,
            metadata: None,
            abouts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetadataFormat {
    pub prefix: String,
    pub schema: String,
    pub namespace: String,
}

impl MetadataFormat {
    pub fn oai_dc() -> Self {
        Self {
            prefix: "oai_dc".into(),
            schema: OAI_DC_SCHEMA.into(),
            namespace: OAI_DC_NS.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetInfo {
    pub spec: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResumptionToken {
    /// Empty on the final page of a list.
    pub token: String,
    pub complete_list_size: Option<u64>,
    pub cursor: Option<u64>,
    pub expiration_date: Option<Datestamp>,
}

impl ResumptionToken {
    pub fn is_final(&self) -> bool {
        self.token.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeletedRecordPolicy {
    No,
    Persistent,
    Transient,
}

impl DeletedRecordPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            DeletedRecordPolicy::No => "no",
            DeletedRecordPolicy::Persistent => "persistent",
            DeletedRecordPolicy::Transient => "transient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "no" => Some(Self::No),
            "persistent" => Some(Self::Persistent),
            "transient" => Some(Self::Transient),
            _ => None,
        }
    }
}

/// Payload of an Identify response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Identify {
    pub repository_name: String,
    pub base_url: String,
    pub protocol_version: String,
    pub earliest_datestamp: Datestamp,
    pub deleted_record: DeletedRecordPolicy,
    pub granularity: Granularity,
    pub admin_emails: Vec<String>,
    pub compressions: Vec<String>,
    pub descriptions: Vec<XmlFragment>,
}
