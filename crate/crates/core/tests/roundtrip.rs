//! Serializer/parser agreement, checked against an independent strict XML
//! parser.

use chrono::{DateTime, Utc};
use oairelay_core::model::{OAI_DC_NS, OAI_NS};
use oairelay_core::provenance::PROVENANCE_NS;
use oairelay_core::xml::escape_text;
use oairelay_core::{
    parse_response, serialize_response, Datestamp, DeletedRecordPolicy, Granularity, Identify,
    MetadataFormat, OaiRecord, OaiResponse, Payload, ProvenanceEntry, RecordHeader, RequestEcho,
    ResumptionToken, SetInfo, XmlFragment,
};
use proptest::prelude::*;

fn strict(body: &[u8]) -> roxmltree::Document<'_> {
    let text = std::str::from_utf8(body).expect("utf-8");
    let doc = roxmltree::Document::parse(text).expect("strict parser rejected output");
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "OAI-PMH");
    assert_eq!(root.tag_name().namespace(), Some(OAI_NS));
    doc
}

fn datestamp() -> impl Strategy<Value = Datestamp> {
    (946_684_800i64..1_893_456_000, any::<bool>()).prop_map(|(secs, day)| {
        let t: DateTime<Utc> = DateTime::from_timestamp(secs, 0).unwrap();
        if day {
            Datestamp::day(t.date_naive())
        } else {
            Datestamp::seconds(t)
        }
    })
}

fn record() -> impl Strategy<Value = OaiRecord> {
    (
        "[a-z0-9]{1,6}",
        "[0-9a-zA-Z._/-]{1,12}",
        datestamp(),
        prop::option::of("[ -~\u{e9}\u{4e2d}]{0,24}"),
        prop::collection::vec("[a-z]{1,6}", 0..3),
        any::<bool>(),
    )
        .prop_map(|(ns, local, ds, title, sets, with_prov)| {
            let identifier = format!("oai:{ns}.example.org:{local}");
            let mut header = RecordHeader::new(identifier.clone(), ds);
            header.set_specs = sets;
            let Some(title) = title else {
                let mut r = OaiRecord::deleted(identifier, ds);
                r.header.set_specs = header.set_specs;
                return r;
            };
            let metadata = format!(
                "<oai_dc:dc xmlns:oai_dc=\"{OAI_DC_NS}\" \
                 xmlns:dc=\"http://purl.org/dc/elements/1.1/\">\n  \
                 <dc:title>{}</dc:title>\n</oai_dc:dc>",
                escape_text(&title)
            );
            let abouts = if with_prov {
                vec![ProvenanceEntry {
                    base_url: "http://up.example.org/oai".into(),
                    origin_identifier: identifier,
                    origin_datestamp: ds,
                    metadata_namespace: OAI_DC_NS.into(),
                    harvest_date: Datestamp::parse("2031-01-01T00:00:00Z").unwrap(),
                    altered: false,
                    parent: None,
                }
                .to_about()]
            } else {
                Vec::new()
            };
            OaiRecord {
                header,
                metadata: Some(XmlFragment::from(metadata)),
                abouts,
            }
        })
}

fn echo(verb: &str) -> RequestEcho {
    let mut e = RequestEcho::bare("http://relay.example.org/oai");
    e.attributes = vec![("verb".into(), verb.into())];
    if verb.starts_with("List") && verb != "ListSets" && verb != "ListMetadataFormats" {
        e.attributes.push(("metadataPrefix".into(), "oai_dc".into()));
    }
    e
}

fn response_date() -> Datestamp {
    Datestamp::parse("2031-06-01T12:00:00Z").unwrap()
}

fn token() -> impl Strategy<Value = Option<ResumptionToken>> {
    prop::option::of(("[A-Za-z0-9|=]{0,16}", 0u64..1000).prop_map(|(t, n)| ResumptionToken {
        token: t,
        complete_list_size: Some(n + 10),
        cursor: Some(n),
        expiration_date: None,
    }))
}

fn assert_round_trip(resp: &OaiResponse) {
    let bytes = serialize_response(resp);
    strict(&bytes);
    let parsed = parse_response(&bytes);
    assert!(parsed.violations.is_empty(), "{:?}", parsed.violations);
    let again = parsed.response.expect("parsed");
    assert_eq!(&again, resp);
    assert_eq!(serialize_response(&again), bytes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn list_records_round_trip(records in prop::collection::vec(record(), 1..8), token in token()) {
        let resp = OaiResponse {
            response_date: response_date(),
            request: echo("ListRecords"),
            payload: Payload::ListRecords { records, token },
        };
        assert_round_trip(&resp);
    }

    #[test]
    fn list_identifiers_round_trip(records in prop::collection::vec(record(), 1..8), token in token()) {
        let headers = records.into_iter().map(|r| r.header).collect();
        let resp = OaiResponse {
            response_date: response_date(),
            request: echo("ListIdentifiers"),
            payload: Payload::ListIdentifiers { headers, token },
        };
        assert_round_trip(&resp);
    }

    #[test]
    fn fragments_survive_byte_for_byte(rec in record()) {
        prop_assume!(rec.metadata.is_some());
        let resp = OaiResponse {
            response_date: response_date(),
            request: echo("GetRecord"),
            payload: Payload::GetRecord(rec.clone()),
        };
        let bytes = serialize_response(&resp);
        let md = rec.metadata.unwrap();
        prop_assert!(bytes.windows(md.as_bytes().len()).any(|w| w == md.as_bytes()));
        let parsed = parse_response(&bytes).response.unwrap();
        prop_assert_eq!(parsed.records()[0].metadata.as_ref().unwrap().as_bytes(), md.as_bytes());
    }
}

#[test]
fn identify_has_required_fields() {
    let resp = OaiResponse {
        response_date: response_date(),
        request: echo("Identify"),
        payload: Payload::Identify(Identify {
            repository_name: "Relay & Co".into(),
            base_url: "http://relay.example.org/oai".into(),
            protocol_version: "2.0".into(),
            earliest_datestamp: Datestamp::parse("2000-01-01T00:00:00Z").unwrap(),
            deleted_record: DeletedRecordPolicy::Persistent,
            granularity: Granularity::Second,
            admin_emails: vec!["admin@example.org".into()],
            compressions: Vec::new(),
            descriptions: Vec::new(),
        }),
    };
    assert_round_trip(&resp);
    let bytes = serialize_response(&resp);
    let doc = strict(&bytes);
    let identify = doc
        .descendants()
        .find(|n| n.has_tag_name("Identify"))
        .unwrap();
    let field = |name: &str| {
        identify
            .children()
            .find(|n| n.has_tag_name(name))
            .and_then(|n| n.text())
            .map(str::to_owned)
    };
    assert_eq!(field("baseURL").as_deref(), Some("http://relay.example.org/oai"));
    assert_eq!(field("protocolVersion").as_deref(), Some("2.0"));
    assert_eq!(field("granularity").as_deref(), Some("YYYY-MM-DDThh:mm:ssZ"));
}

#[test]
fn formats_and_sets_round_trip() {
    assert_round_trip(&OaiResponse {
        response_date: response_date(),
        request: echo("ListMetadataFormats"),
        payload: Payload::ListMetadataFormats(vec![
            MetadataFormat::oai_dc(),
            MetadataFormat {
                prefix: "mods".into(),
                schema: "http://www.loc.gov/standards/mods/v3/mods-3-7.xsd".into(),
                namespace: "http://www.loc.gov/mods/v3".into(),
            },
        ]),
    });
    assert_round_trip(&OaiResponse {
        response_date: response_date(),
        request: echo("ListSets"),
        payload: Payload::ListSets {
            sets: vec![SetInfo {
                spec: "physics".into(),
                name: "Physics".into(),
            }],
            token: None,
        },
    });
}

/// Structural check of the provenance container written against the
/// published schema layout, independent of the crate's own parser.
fn check_origin(node: roxmltree::Node, depth: usize) -> usize {
    assert!(node.has_tag_name((PROVENANCE_NS, "originDescription")));
    for attr in ["harvestDate", "altered"] {
        assert!(node.attribute(attr).is_some(), "missing @{attr}");
    }
    assert!(matches!(node.attribute("altered"), Some("true" | "false")));
    let kids: Vec<_> = node.children().filter(|n| n.is_element()).collect();
    let names: Vec<&str> = kids.iter().map(|n| n.tag_name().name()).collect();
    assert_eq!(
        &names[..4],
        ["baseURL", "identifier", "datestamp", "metadataNamespace"]
    );
    match kids.get(4) {
        Some(parent) => {
            assert_eq!(kids.len(), 5);
            check_origin(*parent, depth + 1)
        }
        None => depth,
    }
}

#[test]
fn nested_provenance_matches_schema_layout() {
    let inner = ProvenanceEntry {
        base_url: "http://x.example.org/oai".into(),
        origin_identifier: "oai:x:1".into(),
        origin_datestamp: Datestamp::parse("2002-01-01").unwrap(),
        metadata_namespace: OAI_DC_NS.into(),
        harvest_date: Datestamp::parse("2002-03-01T00:00:00Z").unwrap(),
        altered: false,
        parent: None,
    };
    let outer = ProvenanceEntry {
        base_url: "http://ax.example.org/oai".into(),
        origin_identifier: "oai:x:1".into(),
        origin_datestamp: Datestamp::parse("2002-03-01T00:00:00Z").unwrap(),
        metadata_namespace: OAI_DC_NS.into(),
        harvest_date: Datestamp::parse("2002-06-01T00:00:00Z").unwrap(),
        altered: true,
        parent: Some(Box::new(inner)),
    };
    let rec = OaiRecord {
        header: RecordHeader::new("oai:x:1", Datestamp::parse("2002-06-01T00:00:00Z").unwrap()),
        metadata: Some(XmlFragment::from(format!(
            "<oai_dc:dc xmlns:oai_dc=\"{OAI_DC_NS}\"/>"
        ))),
        abouts: vec![outer.to_about()],
    };
    let resp = OaiResponse {
        response_date: response_date(),
        request: echo("GetRecord"),
        payload: Payload::GetRecord(rec),
    };
    assert_round_trip(&resp);
    let bytes = serialize_response(&resp);
    let doc = strict(&bytes);
    let prov = doc
        .descendants()
        .find(|n| n.has_tag_name((PROVENANCE_NS, "provenance")))
        .expect("provenance container");
    let origin = prov.children().find(|n| n.is_element()).unwrap();
    assert_eq!(check_origin(origin, 1), 2);
}

#[test]
fn empty_list_is_no_records_match() {
    let resp = OaiResponse::error(
        response_date(),
        echo("ListRecords"),
        oairelay_core::OaiError::new(oairelay_core::OaiErrorCode::NoRecordsMatch, "empty"),
    );
    let bytes = serialize_response(&resp);
    let doc = strict(&bytes);
    let err = doc.descendants().find(|n| n.has_tag_name("error")).unwrap();
    assert_eq!(err.attribute("code"), Some("noRecordsMatch"));
    assert!(doc.descendants().all(|n| !n.has_tag_name("record")));
}
