use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Error codes defined by OAI-PMH 2.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OaiErrorCode {
    #[serde(rename = "badArgument")]
    BadArgument,
    #[serde(rename = "badResumptionToken")]
    BadResumptionToken,
    #[serde(rename = "badVerb")]
    BadVerb,
    #[serde(rename = "cannotDisseminateFormat")]
    CannotDisseminateFormat,
    #[serde(rename = "idDoesNotExist")]
    IdDoesNotExist,
    #[serde(rename = "noRecordsMatch")]
    NoRecordsMatch,
    #[serde(rename = "noMetadataFormats")]
    NoMetadataFormats,
    #[serde(rename = "noSetHierarchy")]
    NoSetHierarchy,
}

impl OaiErrorCode {
    pub const ALL: [OaiErrorCode; 8] = [
        OaiErrorCode::BadArgument,
        OaiErrorCode::BadResumptionToken,
        OaiErrorCode::BadVerb,
        OaiErrorCode::CannotDisseminateFormat,
        OaiErrorCode::IdDoesNotExist,
        OaiErrorCode::NoRecordsMatch,
        OaiErrorCode::NoMetadataFormats,
        OaiErrorCode::NoSetHierarchy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OaiErrorCode::BadArgument => "badArgument",
            OaiErrorCode::BadResumptionToken => "badResumptionToken",
            OaiErrorCode::BadVerb => "badVerb",
            OaiErrorCode::CannotDisseminateFormat => "cannotDisseminateFormat",
            OaiErrorCode::IdDoesNotExist => "idDoesNotExist",
            OaiErrorCode::NoRecordsMatch => "noRecordsMatch",
            OaiErrorCode::NoMetadataFormats => "noMetadataFormats",
            OaiErrorCode::NoSetHierarchy => "noSetHierarchy",
        }
    }
}

impl fmt::Display for OaiErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OaiErrorCode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OaiErrorCode::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}

/// A protocol-level error as carried in an `<error>` element.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct OaiError {
    pub code: OaiErrorCode,
    pub message: String,
}

impl OaiError {
    pub fn new(code: OaiErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn bad_argument(message: impl Into<String>) -> Self {
        Self::new(OaiErrorCode::BadArgument, message)
    }

    pub fn bad_verb(message: impl Into<String>) -> Self {
        Self::new(OaiErrorCode::BadVerb, message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid datestamp {0:?}")]
pub struct DatestampError(pub String);
