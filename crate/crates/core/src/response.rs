use crate::datestamp::Datestamp;
use crate::error::{OaiError, OaiErrorCode};
use crate::model::{Identify, MetadataFormat, OaiRecord, RecordHeader, ResumptionToken, SetInfo};
use crate::request::{OaiRequest, Verb};

/// The `<request>` element echoed at the top of every response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RequestEcho {
    pub base_url: String,
    /// Attribute pairs in document order. Empty for badVerb/badArgument
    /// responses, where the protocol forbids echoing the arguments.
    pub attributes: Vec<(String, String)>,
}

impl RequestEcho {
    pub fn bare(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            attributes: Vec::new(),
        }
    }

    pub fn for_request(base_url: impl Into<String>, request: &OaiRequest) -> Self {
        Self {
            base_url: base_url.into(),
            attributes: request
                .to_pairs()
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect(),
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Errors(Vec<OaiError>),
    Identify(Identify),
    ListMetadataFormats(Vec<MetadataFormat>),
    ListSets {
        sets: Vec<SetInfo>,
        token: Option<ResumptionToken>,
    },
    ListIdentifiers {
        headers: Vec<RecordHeader>,
        token: Option<ResumptionToken>,
    },
    ListRecords {
        records: Vec<OaiRecord>,
        token: Option<ResumptionToken>,
    },
    GetRecord(OaiRecord),
}

impl Payload {
    pub fn verb(&self) -> Option<Verb> {
        Some(match self {
            Payload::Errors(_) => return None,
            Payload::Identify(_) => Verb::Identify,
            Payload::ListMetadataFormats(_) => Verb::ListMetadataFormats,
            Payload::ListSets { .. } => Verb::ListSets,
            Payload::ListIdentifiers { .. } => Verb::ListIdentifiers,
            Payload::ListRecords { .. } => Verb::ListRecords,
            Payload::GetRecord(_) => Verb::GetRecord,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiResponse {
    pub response_date: Datestamp,
    pub request: RequestEcho,
    pub payload: Payload,
}

impl OaiResponse {
    pub fn error(response_date: Datestamp, request: RequestEcho, error: OaiError) -> Self {
        Self {
            response_date,
            request,
            payload: Payload::Errors(vec![error]),
        }
    }

    pub fn errors(&self) -> &[OaiError] {
        match &self.payload {
            Payload::Errors(e) => e,
            _ => &[],
        }
    }

    pub fn has_error(&self, code: OaiErrorCode) -> bool {
        self.errors().iter().any(|e| e.code == code)
    }

    /// Resumption token of a list response, if any.
    pub fn resumption_token(&self) -> Option<&ResumptionToken> {
        match &self.payload {
            Payload::ListSets { token, .. }
            | Payload::ListIdentifiers { token, .. }
            | Payload::ListRecords { token, .. } => token.as_ref(),
            _ => None,
        }
    }

    /// Token string to continue the list with, `None` when the list is done.
    pub fn next_token(&self) -> Option<&str> {
        self.resumption_token()
            .filter(|t| !t.is_final())
            .map(|t| t.token.as_str())
    }

    pub fn records(&self) -> &[OaiRecord] {
        match &self.payload {
            Payload::ListRecords { records, .. } => records,
            Payload::GetRecord(r) => std::slice::from_ref(r),
            _ => &[],
        }
    }
}
