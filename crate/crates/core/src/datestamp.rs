use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SubsecRound, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::DatestampError;

/// Resolution of a datestamp as exposed on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Day,
    Second,
}

impl Granularity {
    /// Wire form used in the Identify `granularity` element.
    pub fn as_wire(self) -> &'static str {
        match self {
            Granularity::Day => "YYYY-MM-DD",
            Granularity::Second => "YYYY-MM-DDThh:mm:ssZ",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "YYYY-MM-DD" => Some(Granularity::Day),
            "YYYY-MM-DDThh:mm:ssZ" => Some(Granularity::Second),
            _ => None,
        }
    }

    pub fn coarser(self, other: Granularity) -> Granularity {
        self.min(other)
    }
}

/// A UTC instant together with the granularity it was expressed in.
///
/// Equality is structural. Ordering across granularities is not transitive
/// (a day value equals every second inside it), so `Ord` is deliberately
/// not implemented; use [`compare_datestamps`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Datestamp {
    instant: DateTime<Utc>,
    granularity: Granularity,
}

impl Datestamp {
    /// Second-granularity datestamp; sub-second precision is truncated.
    pub fn seconds(instant: DateTime<Utc>) -> Self {
        Self {
            instant: instant.trunc_subsecs(0),
            granularity: Granularity::Second,
        }
    }

    pub fn day(date: NaiveDate) -> Self {
        Self {
            instant: Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight")),
            granularity: Granularity::Day,
        }
    }

    pub fn with_granularity(instant: DateTime<Utc>, granularity: Granularity) -> Self {
        match granularity {
            Granularity::Second => Self::seconds(instant),
            Granularity::Day => Self::day(instant.date_naive()),
        }
    }

    pub fn instant(&self) -> DateTime<Utc> {
        self.instant
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn date(&self) -> NaiveDate {
        self.instant.date_naive()
    }

    /// Re-express at `granularity`, truncating when going coarser.
    pub fn truncate_to(&self, granularity: Granularity) -> Self {
        match granularity {
            Granularity::Day => Self::day(self.date()),
            Granularity::Second => Self {
                instant: self.instant,
                granularity: self.granularity.min(Granularity::Second),
            },
        }
    }

    pub fn parse(s: &str) -> Result<Self, DatestampError> {
        let bad = || DatestampError(s.to_owned());
        match s.len() {
            10 => {
                if !shape_matches(s, "dddd-dd-dd") {
                    return Err(bad());
                }
                let date = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad())?;
                Ok(Self::day(date))
            }
            20 => {
                if !shape_matches(s, "dddd-dd-ddTdd:dd:ddZ") {
                    return Err(bad());
                }
                let naive =
                    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ").map_err(|_| bad())?;
                Ok(Self::seconds(Utc.from_utc_datetime(&naive)))
            }
            _ => Err(bad()),
        }
    }
}

fn shape_matches(s: &str, shape: &str) -> bool {
    s.len() == shape.len()
        && s.bytes().zip(shape.bytes()).all(|(c, p)| match p {
            b'd' => c.is_ascii_digit(),
            _ => c == p,
        })
}

/// Orders two datestamps at the coarser of their granularities.
pub fn compare_datestamps(a: &Datestamp, b: &Datestamp) -> Ordering {
    match a.granularity.coarser(b.granularity) {
        Granularity::Day => a.date().cmp(&b.date()),
        Granularity::Second => a.instant.cmp(&b.instant),
    }
}

impl fmt::Display for Datestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.granularity {
            Granularity::Day => write!(f, "{}", self.instant.format("%Y-%m-%d")),
            Granularity::Second => write!(f, "{}", self.instant.format("%Y-%m-%dT%H:%M:%SZ")),
        }
    }
}

impl FromStr for Datestamp {
    type Err = DatestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Datestamp::parse(s)
    }
}

impl Serialize for Datestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Datestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Datestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(s: &str) -> Datestamp {
        Datestamp::parse(s).unwrap()
    }

    #[test]
    fn day_equals_second_inside_it() {
        assert_eq!(
            compare_datestamps(&ds("2002-06-01"), &ds("2002-06-01T10:00:00Z")),
            Ordering::Equal
        );
    }

    #[test]
    fn day_ordering() {
        assert_eq!(
            compare_datestamps(&ds("2002-01-01"), &ds("2002-06-01")),
            Ordering::Less
        );
    }

    #[test]
    fn second_ordering() {
        assert_eq!(
            compare_datestamps(&ds("2002-06-01T09:00:00Z"), &ds("2002-06-01T10:00:00Z")),
            Ordering::Less
        );
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "2002-6-01",
            "2002-06-01T10:00:00",
            "2002-06-01T10:00:00+01:00",
            "2002-13-01",
            "2002-06-01T25:00:00Z",
            "",
            "20020601",
            "2002-06-01T10:00:00.5Z",
        ] {
            assert!(Datestamp::parse(bad).is_err(), "{bad} accepted");
        }
    }

    #[test]
    fn display_round_trips() {
        for s in ["2002-06-01", "1999-12-31T23:59:59Z"] {
            assert_eq!(ds(s).to_string(), s);
        }
    }

    fn arb_datestamp() -> impl Strategy<Value = Datestamp> {
        (0i64..2_000_000_000, any::<bool>()).prop_map(|(secs, day)| {
            let instant = DateTime::from_timestamp(secs, 0).unwrap();
            if day {
                Datestamp::with_granularity(instant, Granularity::Day)
            } else {
                Datestamp::seconds(instant)
            }
        })
    }

    proptest! {
        #[test]
        fn comparison_is_antisymmetric(a in arb_datestamp(), b in arb_datestamp()) {
            prop_assert_eq!(compare_datestamps(&a, &b), compare_datestamps(&b, &a).reverse());
        }

        #[test]
        fn comparison_matches_truncated_values(a in arb_datestamp(), b in arb_datestamp()) {
            let g = a.granularity().coarser(b.granularity());
            let (ta, tb) = (a.truncate_to(g), b.truncate_to(g));
            prop_assert_eq!(compare_datestamps(&a, &b), ta.instant().cmp(&tb.instant()));
        }

        #[test]
        fn total_order_within_one_granularity(
            a in arb_datestamp(), b in arb_datestamp(), c in arb_datestamp()
        ) {
            let g = Granularity::Second;
            let (a, b, c) = (a.truncate_to(g), b.truncate_to(g), c.truncate_to(g));
            if compare_datestamps(&a, &b) != Ordering::Greater
                && compare_datestamps(&b, &c) != Ordering::Greater
            {
                prop_assert_ne!(compare_datestamps(&a, &c), Ordering::Greater);
            }
        }

        #[test]
        fn wire_form_round_trips(a in arb_datestamp()) {
            prop_assert_eq!(Datestamp::parse(&a.to_string()).unwrap(), a);
        }
    }
}
