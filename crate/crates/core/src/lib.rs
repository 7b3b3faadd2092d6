//! OAI-PMH 2.0 protocol model shared by the relay components: datestamps,
//! request legality, a tolerant response parser that classifies every
//! violation by byte offset, a serializer, and the provenance container.

pub mod client;
pub mod clock;
pub mod datestamp;
pub mod error;
pub mod identifier;
pub mod model;
pub mod parse;
pub mod provenance;
pub mod request;
pub mod response;
pub mod serialize;
pub mod utf8;
pub mod violation;
pub mod xml;

pub use client::{ClientError, Fetched, OaiClient, RawResponse};
pub use clock::{Clock, SimClock, SystemClock};
pub use datestamp::{compare_datestamps, Datestamp, Granularity};
pub use error::{OaiError, OaiErrorCode};
pub use identifier::{is_oai_identifier, is_valid_identifier, validate_identifier};
pub use model::{
    DeletedRecordPolicy, Identify, MetadataFormat, OaiRecord, RecordHeader, ResumptionToken,
    SetInfo, XmlFragment,
};
pub use parse::{parse_response, ParsedResponse, RecordUnit};
pub use provenance::ProvenanceEntry;
pub use request::{parse_query, parse_request, OaiRequest, Verb};
pub use response::{OaiResponse, Payload, RequestEcho};
pub use serialize::{serialize_response, CONTENT_TYPE};
pub use violation::{Violation, ViolationClass};
