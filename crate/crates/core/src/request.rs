use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datestamp::{Datestamp, Granularity};
use crate::error::OaiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verb {
    Identify,
    ListMetadataFormats,
    ListSets,
    ListIdentifiers,
    ListRecords,
    GetRecord,
}

impl Verb {
    pub const ALL: [Verb; 6] = [
        Verb::Identify,
        Verb::ListMetadataFormats,
        Verb::ListSets,
        Verb::ListIdentifiers,
        Verb::ListRecords,
        Verb::GetRecord,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Identify => "Identify",
            Verb::ListMetadataFormats => "ListMetadataFormats",
            Verb::ListSets => "ListSets",
            Verb::ListIdentifiers => "ListIdentifiers",
            Verb::ListRecords => "ListRecords",
            Verb::GetRecord => "GetRecord",
        }
    }

    /// Verbs whose responses may be split with resumption tokens.
    pub fn is_list(self) -> bool {
        matches!(
            self,
            Verb::ListSets | Verb::ListIdentifiers | Verb::ListRecords
        )
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verb::ALL.into_iter().find(|v| v.as_str() == s).ok_or(())
    }
}

/// Argument names recognised by the protocol, in canonical emission order.
pub const ARGUMENT_NAMES: [&str; 6] = [
    "identifier",
    "metadataPrefix",
    "from",
    "until",
    "set",
    "resumptionToken",
];

/// A validated OAI-PMH request.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OaiRequest {
    pub verb: Option<Verb>,
    pub identifier: Option<String>,
    pub metadata_prefix: Option<String>,
    pub from: Option<Datestamp>,
    pub until: Option<Datestamp>,
    pub set: Option<String>,
    pub resumption_token: Option<String>,
}

impl OaiRequest {
    pub fn new(verb: Verb) -> Self {
        Self {
            verb: Some(verb),
            ..Default::default()
        }
    }

    pub fn verb(&self) -> Verb {
        self.verb.expect("validated request has a verb")
    }

    pub fn identify() -> Self {
        Self::new(Verb::Identify)
    }

    pub fn list_metadata_formats() -> Self {
        Self::new(Verb::ListMetadataFormats)
    }

    pub fn get_record(identifier: impl Into<String>, prefix: impl Into<String>) -> Self {
        Self {
            identifier: Some(identifier.into()),
            metadata_prefix: Some(prefix.into()),
            ..Self::new(Verb::GetRecord)
        }
    }

    pub fn list(verb: Verb, prefix: impl Into<String>) -> Self {
        Self {
            metadata_prefix: Some(prefix.into()),
            ..Self::new(verb)
        }
    }

    pub fn resume(verb: Verb, token: impl Into<String>) -> Self {
        Self {
            resumption_token: Some(token.into()),
            ..Self::new(verb)
        }
    }

    pub fn with_from(mut self, from: Datestamp) -> Self {
        self.from = Some(from);
        self
    }

    pub fn with_until(mut self, until: Datestamp) -> Self {
        self.until = Some(until);
        self
    }

    pub fn with_set(mut self, set: impl Into<String>) -> Self {
        self.set = Some(set.into());
        self
    }

    /// Key/value pairs in canonical order, `verb` first.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = Vec::new();
        if let Some(verb) = self.verb {
            pairs.push(("verb", verb.as_str().to_owned()));
        }
        pairs.extend(self.argument_pairs());
        pairs
    }

    /// Arguments only, as echoed in the `<request>` element.
    pub fn argument_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = Vec::new();
        if let Some(v) = &self.identifier {
            pairs.push(("identifier", v.clone()));
        }
        if let Some(v) = &self.metadata_prefix {
            pairs.push(("metadataPrefix", v.clone()));
        }
        if let Some(v) = &self.from {
            pairs.push(("from", v.to_string()));
        }
        if let Some(v) = &self.until {
            pairs.push(("until", v.to_string()));
        }
        if let Some(v) = &self.set {
            pairs.push(("set", v.clone()));
        }
        if let Some(v) = &self.resumption_token {
            pairs.push(("resumptionToken", v.clone()));
        }
        pairs
    }

    /// URL-encoded query string.
    pub fn to_query(&self) -> String {
        let mut ser = url::form_urlencoded::Serializer::new(String::new());
        for (k, v) in self.to_pairs() {
            ser.append_pair(k, &v);
        }
        ser.finish()
    }

    /// Rejects `from`/`until` finer than what the repository supports.
    pub fn check_granularity(&self, supported: Granularity) -> Result<(), OaiError> {
        for d in [self.from, self.until].into_iter().flatten() {
            if d.granularity() > supported {
                return Err(OaiError::bad_argument(format!(
                    "datestamp {d} is finer than the repository granularity"
                )));
            }
        }
        Ok(())
    }
}

/// Parses an already URL-decoded query string.
pub fn parse_query(query: &str) -> Result<OaiRequest, OaiError> {
    let pairs: Vec<(String, String)> = url::form_urlencoded::parse(query.as_bytes())
        .into_owned()
        .collect();
    parse_request(pairs)
}

/// Validates a set of key/value pairs against the per-verb argument table.
///
/// Repeated keys are rejected, so callers should pass every pair they saw
/// rather than first collapsing them into a map.
pub fn parse_request<I, K, V>(params: I) -> Result<OaiRequest, OaiError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut verb: Option<String> = None;
    let mut args: Vec<(String, String)> = Vec::new();
    let mut verb_repeated = false;
    for (k, v) in params {
        let (k, v) = (k.as_ref(), v.as_ref());
        if k == "verb" {
            if verb.is_some() {
                verb_repeated = true;
            }
            verb = Some(v.to_owned());
        } else {
            args.push((k.to_owned(), v.to_owned()));
        }
    }
    if verb_repeated {
        return Err(OaiError::bad_verb("verb argument is repeated"));
    }
    let verb_name = verb.ok_or_else(|| OaiError::bad_verb("missing verb argument"))?;
    let verb: Verb = verb_name
        .parse()
        .map_err(|_| OaiError::bad_verb(format!("illegal verb {verb_name:?}")))?;

    let mut req = OaiRequest::new(verb);
    for (k, v) in &args {
        if !ARGUMENT_NAMES.contains(&k.as_str()) {
            return Err(OaiError::bad_argument(format!("illegal argument {k:?}")));
        }
        if args.iter().filter(|(k2, _)| k2 == k).count() > 1 {
            return Err(OaiError::bad_argument(format!("argument {k:?} is repeated")));
        }
        if v.is_empty() {
            return Err(OaiError::bad_argument(format!("argument {k:?} is empty")));
        }
        match k.as_str() {
            "identifier" => req.identifier = Some(v.clone()),
            "metadataPrefix" => req.metadata_prefix = Some(v.clone()),
            "set" => req.set = Some(v.clone()),
            "resumptionToken" => req.resumption_token = Some(v.clone()),
            "from" | "until" => {
                let d = Datestamp::parse(v).map_err(|_| {
                    OaiError::bad_argument(format!("argument {k:?} is not a valid datestamp"))
                })?;
                if k == "from" {
                    req.from = Some(d);
                } else {
                    req.until = Some(d);
                }
            }
            _ => unreachable!(),
        }
    }

    let present: Vec<&str> = args.iter().map(|(k, _)| k.as_str()).collect();
    let (required, optional, exclusive): (&[&str], &[&str], Option<&str>) = match verb {
        Verb::Identify => (&[], &[], None),
        Verb::ListMetadataFormats => (&[], &["identifier"], None),
        Verb::ListSets => (&[], &[], Some("resumptionToken")),
        Verb::ListIdentifiers | Verb::ListRecords => (
            &["metadataPrefix"],
            &["from", "until", "set"],
            Some("resumptionToken"),
        ),
        Verb::GetRecord => (&["identifier", "metadataPrefix"], &[], None),
    };

    if let Some(ex) = exclusive {
        if present.contains(&ex) {
            if let Some(other) = present.iter().find(|k| **k != ex) {
                return Err(OaiError::bad_argument(format!(
                    "{ex} is exclusive; {other:?} not allowed with it"
                )));
            }
            return Ok(req);
        }
    }
    if let Some(k) = present
        .iter()
        .find(|k| !required.contains(k) && !optional.contains(k))
    {
        return Err(OaiError::bad_argument(format!(
            "argument {k:?} is not allowed for {verb}"
        )));
    }
    if let Some(k) = required.iter().find(|k| !present.contains(k)) {
        return Err(OaiError::bad_argument(format!(
            "missing required argument {k:?} for {verb}"
        )));
    }
    if let (Some(from), Some(until)) = (req.from, req.until) {
        if from.granularity() != until.granularity() {
            return Err(OaiError::bad_argument(
                "from and until have different granularities",
            ));
        }
    }
    Ok(req)
}
