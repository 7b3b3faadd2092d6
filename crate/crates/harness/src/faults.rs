//! Fault injection. Which records or responses a fault touches is a pure
//! function of the spec and the corpus, so tests can enumerate it up front.

use std::collections::BTreeSet;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DcParts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FaultKind {
    /// A stray 0xFF byte in the creator.
    InvalidUtf8,
    /// An unescaped `&` in the title.
    BareAmpersand,
    /// An unescaped `<` in the description.
    BareLessThan,
    /// `xml:lang=en` without quotes on `dc:date`.
    UnquotedAttribute,
    /// oai_dc metadata in the wrong namespace. Not repairable.
    WrongSchemaUri,
    /// The whole response lacks `responseDate`. Not repairable.
    MissingResponseDate,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::InvalidUtf8,
        FaultKind::BareAmpersand,
        FaultKind::BareLessThan,
        FaultKind::UnquotedAttribute,
        FaultKind::WrongSchemaUri,
        FaultKind::MissingResponseDate,
    ];

    pub fn is_response_level(self) -> bool {
        self == FaultKind::MissingResponseDate
    }

    /// Whether a repairing proxy can fix it without dropping anything.
    pub fn is_repairable(self) -> bool {
        !matches!(self, FaultKind::WrongSchemaUri | FaultKind::MissingResponseDate)
    }

    fn salt(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Fraction of records (or responses) affected.
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl FaultSpec {
    pub fn new(kind: FaultKind, rate: f64, seed: u64) -> Self {
        Self { kind, rate, seed }
    }

    fn rng(&self, extra: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ self.kind.salt().wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ extra)
    }

    /// Exactly `round(rate * n)` identifiers out of `identifiers`.
    pub fn affected(&self, identifiers: &[String]) -> BTreeSet<String> {
        if self.kind.is_response_level() {
            return BTreeSet::new();
        }
        let n = (self.rate * identifiers.len() as f64).round() as usize;
        let mut sorted: Vec<&String> = identifiers.iter().collect();
        sorted.sort();
        sorted
            .into_iter()
            .choose_multiple(&mut self.rng(0), n)
            .into_iter()
            .cloned()
            .collect()
    }

    /// Whether the response to the request identified by `key` (its
    /// canonical query string) is hit.
    pub fn hits_response(&self, key: &str) -> bool {
        self.kind.is_response_level() && self.rng(fnv1a(key.as_bytes())).random::<f64>() < self.rate
    }

    /// Breaks `parts` in the way this fault describes.
    pub fn apply(&self, parts: &mut DcParts) {
        match self.kind {
            FaultKind::InvalidUtf8 => parts.creator.extend_from_slice(b" \xff"),
            FaultKind::BareAmpersand => parts.title.extend_from_slice(b" & friends"),
            FaultKind::BareLessThan => parts.description.extend_from_slice(b" Size < 5 units."),
            FaultKind::UnquotedAttribute => parts.date_attrs.extend_from_slice(b" xml:lang=en"),
            FaultKind::WrongSchemaUri => {
                parts.namespace = "http://www.openarchives.org/OAI/2.0/oai_dc".into()
            }
            FaultKind::MissingResponseDate => {}
        }
    }
}

/// Removes the `responseDate` element from a serialized response.
pub fn strip_response_date(body: &[u8]) -> Vec<u8> {
    let find = |needle: &[u8]| body.windows(needle.len()).position(|w| w == needle);
    match (find(b"<responseDate>"), find(b"</responseDate>")) {
        (Some(a), Some(b)) if a < b => {
            let mut out = body[..a].to_vec();
            out.extend_from_slice(&body[b + "</responseDate>".len()..]);
            out
        }
        _ => body.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::identifier;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| identifier("x", i)).collect()
    }

    #[test]
    fn exact_count_and_deterministic() {
        let spec = FaultSpec::new(FaultKind::BareAmpersand, 0.1, 42);
        let a = spec.affected(&ids(100));
        assert_eq!(a.len(), 10);
        assert_eq!(a, spec.affected(&ids(100)));
        let other = FaultSpec::new(FaultKind::BareLessThan, 0.1, 42).affected(&ids(100));
        assert_ne!(a, other);
    }

    #[test]
    fn response_hits_follow_rate() {
        let spec = FaultSpec::new(FaultKind::MissingResponseDate, 0.1, 3);
        let hits = (0..2000)
            .filter(|i| spec.hits_response(&format!("verb=GetRecord&identifier={i}")))
            .count();
        assert!((120..=280).contains(&hits), "{hits}");
        assert!(!FaultSpec::new(FaultKind::BareAmpersand, 1.0, 3).hits_response("x"));
    }

    #[test]
    fn strip_removes_only_response_date() {
        let body = b"<OAI-PMH><responseDate>2002-01-01T00:00:00Z</responseDate><request/></OAI-PMH>";
        assert_eq!(strip_response_date(body), b"<OAI-PMH><request/></OAI-PMH>");
    }
}
