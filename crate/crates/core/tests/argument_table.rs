//! Exhaustive check of request legality against a table written out
//! independently of the parser.

use oairelay_core::{parse_request, OaiErrorCode, Verb};

const ARGS: [(&str, &str); 6] = [
    ("identifier", "oai:x:1"),
    ("metadataPrefix", "oai_dc"),
    ("from", "2002-01-01"),
    ("until", "2002-02-01"),
    ("set", "physics"),
    ("resumptionToken", "t1"),
];

/// Legal argument sets per verb, as lists of names.
fn legal_sets(verb: &str) -> Vec<Vec<&'static str>> {
    let list_forms = || {
        let mut forms = vec![vec!["resumptionToken"]];
        for mask in 0..8u8 {
            let mut f = vec!["metadataPrefix"];
            if mask & 1 != 0 {
                f.push("from");
            }
            if mask & 2 != 0 {
                f.push("until");
            }
            if mask & 4 != 0 {
                f.push("set");
            }
            forms.push(f);
        }
        forms
    };
    match verb {
        "Identify" => vec![vec![]],
        "ListMetadataFormats" => vec![vec![], vec!["identifier"]],
        "ListSets" => vec![vec![], vec!["resumptionToken"]],
        "ListIdentifiers" | "ListRecords" => list_forms(),
        "GetRecord" => vec![vec!["identifier", "metadataPrefix"]],
        _ => vec![],
    }
}

fn is_legal(verb: &str, present: &[&str]) -> bool {
    legal_sets(verb).iter().any(|set| {
        set.len() == present.len() && set.iter().all(|a| present.contains(a))
    })
}

#[test]
fn every_combination_matches_the_table() {
    let verbs = [
        "Identify",
        "ListMetadataFormats",
        "ListSets",
        "ListIdentifiers",
        "ListRecords",
        "GetRecord",
    ];
    let mut checked = 0;
    for verb in verbs {
        for mask in 0..(1u32 << ARGS.len()) {
            let chosen: Vec<(&str, &str)> = ARGS
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, a)| *a)
                .collect();
            let names: Vec<&str> = chosen.iter().map(|(k, _)| *k).collect();
            let mut pairs = vec![("verb", verb)];
            pairs.extend(chosen.iter().copied());
            let result = parse_request(pairs.iter().copied());
            if is_legal(verb, &names) {
                let req = result.unwrap_or_else(|e| panic!("{verb} {names:?}: {e}"));
                assert_eq!(req.verb().as_str(), verb);
                assert_eq!(req.identifier.is_some(), names.contains(&"identifier"));
                assert_eq!(req.resumption_token.is_some(), names.contains(&"resumptionToken"));
            } else {
                let err = result.expect_err(&format!("{verb} {names:?} accepted"));
                assert_eq!(err.code, OaiErrorCode::BadArgument, "{verb} {names:?}");
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 6 * 64);
}

#[test]
fn verb_errors() {
    let bad = |pairs: &[(&str, &str)]| parse_request(pairs.iter().copied()).unwrap_err().code;
    assert_eq!(bad(&[]), OaiErrorCode::BadVerb);
    assert_eq!(bad(&[("verb", "Frobnicate")]), OaiErrorCode::BadVerb);
    assert_eq!(bad(&[("verb", "identify")]), OaiErrorCode::BadVerb);
    assert_eq!(
        bad(&[("verb", "Identify"), ("verb", "Identify")]),
        OaiErrorCode::BadVerb
    );
}

#[test]
fn repeated_and_unknown_arguments() {
    let bad = |pairs: &[(&str, &str)]| parse_request(pairs.iter().copied()).unwrap_err().code;
    assert_eq!(
        bad(&[("verb", "ListRecords"), ("metadataPrefix", "oai_dc"), ("metadataPrefix", "x")]),
        OaiErrorCode::BadArgument
    );
    assert_eq!(bad(&[("verb", "Identify"), ("foo", "1")]), OaiErrorCode::BadArgument);
    assert_eq!(
        bad(&[("verb", "ListRecords"), ("metadataPrefix", "oai_dc"), ("from", "2002-13-01")]),
        OaiErrorCode::BadArgument
    );
    assert_eq!(
        bad(&[
            ("verb", "ListRecords"),
            ("metadataPrefix", "oai_dc"),
            ("from", "2002-01-01"),
            ("until", "2002-02-01T00:00:00Z")
        ]),
        OaiErrorCode::BadArgument
    );
}

#[test]
fn exclusive_token_example() {
    let err = parse_request([
        ("verb", "ListRecords"),
        ("resumptionToken", "t1"),
        ("metadataPrefix", "oai_dc"),
    ])
    .unwrap_err();
    assert_eq!(err.code, OaiErrorCode::BadArgument);
    assert!(Verb::ListRecords.is_list());
}
