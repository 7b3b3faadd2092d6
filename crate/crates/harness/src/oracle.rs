//! Independent oracles. Everything here parses with roxmltree rather than
//! the relay's own parser, so a bug shared by the components under test
//! and their checks cannot hide itself.

use std::collections::BTreeMap;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use oairelay_core::model::{DC_NS, OAI_DC_NS, OAI_NS};
use oairelay_core::{OaiClient, OaiRequest, Verb};
use roxmltree::{Document, Node};

const VERBS: [&str; 6] = [
    "Identify",
    "ListMetadataFormats",
    "ListSets",
    "ListIdentifiers",
    "ListRecords",
    "GetRecord",
];

const ERROR_CODES: [&str; 8] = [
    "badArgument",
    "badResumptionToken",
    "badVerb",
    "cannotDisseminateFormat",
    "idDoesNotExist",
    "noRecordsMatch",
    "noMetadataFormats",
    "noSetHierarchy",
];

fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

fn is_oai(node: Node, name: &str) -> bool {
    node.tag_name().namespace() == Some(OAI_NS) && node.tag_name().name() == name
}

fn no_stray_text(node: Node) -> Result<(), String> {
    for c in node.children() {
        if c.is_text() && !c.text().unwrap_or_default().trim().is_empty() {
            return Err(format!("text content inside <{}>", node.tag_name().name()));
        }
    }
    Ok(())
}

fn check_datestamp(s: &str) -> Result<(), String> {
    let ok_day = s.len() == 10 && chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok();
    let ok_sec = s.len() == 20
        && chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ").is_ok();
    if ok_day || ok_sec {
        Ok(())
    } else {
        Err(format!("{s:?} is not a UTC datestamp"))
    }
}

/// Sequence of OAI children with the given names, in order. Returns them
/// grouped by name.
fn sequence<'a, 'i>(
    parent: Node<'a, 'i>,
    spec: &[(&str, usize, usize)],
) -> Result<BTreeMap<String, Vec<Node<'a, 'i>>>, String> {
    no_stray_text(parent)?;
    let kids: Vec<Node> = elements(parent).collect();
    let mut i = 0;
    let mut out = BTreeMap::new();
    for &(name, min, max) in spec {
        let mut got = Vec::new();
        while i < kids.len() && is_oai(kids[i], name) && got.len() < max {
            got.push(kids[i]);
            i += 1;
        }
        if got.len() < min {
            return Err(format!(
                "<{}> needs at least {min} <{name}>",
                parent.tag_name().name()
            ));
        }
        out.insert(name.to_owned(), got);
    }
    if let Some(extra) = kids.get(i) {
        return Err(format!(
            "unexpected <{}> inside <{}>",
            extra.tag_name().name(),
            parent.tag_name().name()
        ));
    }
    Ok(out)
}

fn text_of(node: Node) -> String {
    node.text().unwrap_or_default().to_owned()
}

fn check_header(h: Node) -> Result<(), String> {
    if let Some(status) = h.attribute("status") {
        if status != "deleted" {
            return Err(format!("header status {status:?}"));
        }
    }
    let parts = sequence(h, &[("identifier", 1, 1), ("datestamp", 1, 1), ("setSpec", 0, usize::MAX)])?;
    let id = text_of(parts["identifier"][0]);
    if id.is_empty() || url::Url::parse(&id).is_err() {
        return Err(format!("identifier {id:?} is not a URI"));
    }
    check_datestamp(&text_of(parts["datestamp"][0]))
}

fn check_oai_dc(root: Node) -> Result<(), String> {
    if root.tag_name().namespace() != Some(OAI_DC_NS) || root.tag_name().name() != "dc" {
        return Err(format!(
            "oai_dc metadata root is {{{}}}{}",
            root.tag_name().namespace().unwrap_or_default(),
            root.tag_name().name()
        ));
    }
    for el in elements(root) {
        if el.tag_name().namespace() != Some(DC_NS) {
            return Err(format!("<{}> is not a Dublin Core element", el.tag_name().name()));
        }
        if elements(el).next().is_some() {
            return Err(format!("<dc:{}> has element content", el.tag_name().name()));
        }
    }
    Ok(())
}

fn check_record(r: Node, prefix: Option<&str>) -> Result<(), String> {
    let parts = sequence(r, &[("header", 1, 1), ("metadata", 0, 1), ("about", 0, usize::MAX)])?;
    let header = parts["header"][0];
    check_header(header)?;
    let deleted = header.attribute("status") == Some("deleted");
    match parts["metadata"].first() {
        Some(_) if deleted => return Err("deleted record carries metadata".into()),
        None if !deleted => return Err("record without metadata".into()),
        Some(m) => {
            no_stray_text(*m)?;
            let kids: Vec<Node> = elements(*m).collect();
            if kids.len() != 1 {
                return Err("<metadata> must hold exactly one element".into());
            }
            if prefix == Some("oai_dc") {
                check_oai_dc(kids[0])?;
            }
        }
        None => {}
    }
    for a in &parts["about"] {
        if elements(*a).count() != 1 {
            return Err("<about> must hold exactly one element".into());
        }
    }
    Ok(())
}

fn check_token(t: Option<&Node>) -> Result<(), String> {
    if let Some(t) = t {
        for attr in ["completeListSize", "cursor"] {
            if let Some(v) = t.attribute(attr) {
                v.parse::<u64>().map_err(|_| format!("{attr}={v:?}"))?;
            }
        }
        if let Some(v) = t.attribute("expirationDate") {
            check_datestamp(v)?;
        }
    }
    Ok(())
}

/// Checks `body` against XML 1.0 well-formedness and the structural rules
/// of the OAI-PMH 2.0 response schema, including oai_dc record payloads.
pub fn validate_response(body: &[u8]) -> Result<(), String> {
    let text = std::str::from_utf8(body).map_err(|e| format!("not UTF-8: {e}"))?;
    let doc = Document::parse(text).map_err(|e| format!("not well-formed: {e}"))?;
    let root = doc.root_element();
    if !is_oai(root, "OAI-PMH") {
        return Err("root is not {OAI}OAI-PMH".into());
    }
    no_stray_text(root)?;
    let kids: Vec<Node> = elements(root).collect();
    if kids.len() < 3 {
        return Err("OAI-PMH needs responseDate, request and a payload".into());
    }
    if !is_oai(kids[0], "responseDate") {
        return Err("first child is not responseDate".into());
    }
    let date = text_of(kids[0]);
    if date.len() != 20 {
        return Err(format!("responseDate {date:?} lacks second granularity"));
    }
    check_datestamp(&date)?;
    if !is_oai(kids[1], "request") {
        return Err("second child is not request".into());
    }
    let request = kids[1];
    url::Url::parse(request.text().unwrap_or_default().trim())
        .map_err(|e| format!("request base URL: {e}"))?;
    let payload = &kids[2..];
    if is_oai(payload[0], "error") {
        for e in payload {
            if !is_oai(*e, "error") {
                return Err("error mixed with a payload".into());
            }
            let code = e.attribute("code").unwrap_or_default();
            if !ERROR_CODES.contains(&code) {
                return Err(format!("unknown error code {code:?}"));
            }
        }
        return Ok(());
    }
    if payload.len() != 1 {
        return Err("more than one payload element".into());
    }
    let body = payload[0];
    let verb = body.tag_name().name();
    if body.tag_name().namespace() != Some(OAI_NS) || !VERBS.contains(&verb) {
        return Err(format!("unknown payload <{verb}>"));
    }
    if request.attribute("verb") != Some(verb) {
        return Err(format!("request verb does not match <{verb}>"));
    }
    let prefix = request.attribute("metadataPrefix");
    match verb {
        "Identify" => {
            let parts = sequence(
                body,
                &[
                    ("repositoryName", 1, 1),
                    ("baseURL", 1, 1),
                    ("protocolVersion", 1, 1),
                    ("adminEmail", 1, usize::MAX),
                    ("earliestDatestamp", 1, 1),
                    ("deletedRecord", 1, 1),
                    ("granularity", 1, 1),
                    ("compression", 0, usize::MAX),
                    ("description", 0, usize::MAX),
                ],
            )?;
            if text_of(parts["protocolVersion"][0]) != "2.0" {
                return Err("protocolVersion is not 2.0".into());
            }
            check_datestamp(&text_of(parts["earliestDatestamp"][0]))?;
            let policy = text_of(parts["deletedRecord"][0]);
            if !["no", "persistent", "transient"].contains(&policy.as_str()) {
                return Err(format!("deletedRecord {policy:?}"));
            }
            let g = text_of(parts["granularity"][0]);
            if g != "YYYY-MM-DD" && g != "YYYY-MM-DDThh:mm:ssZ" {
                return Err(format!("granularity {g:?}"));
            }
        }
        "ListMetadataFormats" => {
            let parts = sequence(body, &[("metadataFormat", 1, usize::MAX)])?;
            for f in &parts["metadataFormat"] {
                sequence(
                    *f,
                    &[("metadataPrefix", 1, 1), ("schema", 1, 1), ("metadataNamespace", 1, 1)],
                )?;
            }
        }
        "ListSets" => {
            let parts = sequence(body, &[("set", 0, usize::MAX), ("resumptionToken", 0, 1)])?;
            check_token(parts["resumptionToken"].first())?;
        }
        "ListIdentifiers" => {
            let parts = sequence(body, &[("header", 0, usize::MAX), ("resumptionToken", 0, 1)])?;
            for h in &parts["header"] {
                check_header(*h)?;
            }
            check_token(parts["resumptionToken"].first())?;
        }
        "ListRecords" => {
            let parts = sequence(body, &[("record", 0, usize::MAX), ("resumptionToken", 0, 1)])?;
            for r in &parts["record"] {
                check_record(*r, prefix)?;
            }
            check_token(parts["resumptionToken"].first())?;
        }
        _ => {
            let parts = sequence(body, &[("record", 1, 1)])?;
            check_record(parts["record"][0], prefix)?;
        }
    }
    Ok(())
}

/// One record as the oracle sees it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleRecord {
    pub base_url: String,
    pub identifier: String,
    pub datestamp: String,
    pub deleted: bool,
    /// Exact bytes of the element inside `<metadata>`.
    pub metadata: Option<Vec<u8>>,
    pub abouts: Vec<Vec<u8>>,
}

/// A full ListRecords walk of one endpoint.
#[derive(Debug, Clone, Default)]
pub struct OracleListing {
    pub records: Vec<OracleRecord>,
    pub pages: usize,
}

fn parse_list_page(
    base_url: &str,
    body: &[u8],
) -> anyhow::Result<(Vec<OracleRecord>, Option<String>)> {
    let text = std::str::from_utf8(body).context("page is not UTF-8")?;
    let doc = Document::parse(text).context("page is not well-formed")?;
    let root = doc.root_element();
    let mut records = Vec::new();
    let mut token = None;
    for child in elements(root) {
        if is_oai(child, "error") {
            if child.attribute("code") == Some("noRecordsMatch") {
                return Ok((records, None));
            }
            bail!("{base_url} answered error {:?}", child.attribute("code"));
        }
        if !is_oai(child, "ListRecords") {
            continue;
        }
        for r in elements(child) {
            if is_oai(r, "resumptionToken") {
                token = r.text().map(str::to_owned).filter(|t| !t.is_empty());
                continue;
            }
            let header = elements(r)
                .find(|n| is_oai(*n, "header"))
                .ok_or_else(|| anyhow!("record without header"))?;
            let field = |name: &str| {
                elements(header)
                    .find(|n| is_oai(*n, name))
                    .map(text_of)
                    .unwrap_or_default()
            };
            let slice = |n: Node| text.as_bytes()[n.range()].to_vec();
            let metadata = elements(r)
                .find(|n| is_oai(*n, "metadata"))
                .and_then(|m| elements(m).next())
                .map(slice);
            let abouts = elements(r)
                .filter(|n| is_oai(*n, "about"))
                .filter_map(|a| elements(a).next())
                .map(slice)
                .collect();
            records.push(OracleRecord {
                base_url: base_url.to_owned(),
                identifier: field("identifier"),
                datestamp: field("datestamp"),
                deleted: header.attribute("status") == Some("deleted"),
                metadata,
                abouts,
            });
        }
    }
    Ok((records, token))
}

/// Error codes in a response body, empty when it carries a payload.
pub fn error_codes(body: &[u8]) -> Vec<String> {
    let Ok(text) = std::str::from_utf8(body) else {
        return Vec::new();
    };
    let Ok(doc) = Document::parse(text) else {
        return Vec::new();
    };
    elements(doc.root_element())
        .filter(|n| is_oai(*n, "error"))
        .map(|n| n.attribute("code").unwrap_or_default().to_owned())
        .collect()
}

async fn get_page(client: &OaiClient, url: &str, strict: bool) -> anyhow::Result<Vec<u8>> {
    let raw = client.get_raw(url).await?;
    if raw.status != 200 {
        bail!("{url} answered HTTP {}", raw.status);
    }
    if strict {
        validate_response(&raw.body).map_err(|e| anyhow!("{url}: {e}"))?;
    }
    Ok(raw.body)
}

/// Walks ListRecords on one endpoint, optionally from a datestamp. With
/// `strict` every page must pass [`validate_response`].
pub async fn list_records(
    base_url: &str,
    prefix: &str,
    from: Option<&str>,
    strict: bool,
) -> anyhow::Result<OracleListing> {
    let client = OaiClient::new(Duration::from_secs(30));
    let mut out = OracleListing::default();
    let mut url = format!("{base_url}?verb=ListRecords&metadataPrefix={prefix}");
    if let Some(from) = from {
        url.push_str(&format!("&from={from}"));
    }
    loop {
        let body = get_page(&client, &url, strict).await?;
        out.pages += 1;
        let (records, token) = parse_list_page(base_url, &body)?;
        out.records.extend(records);
        match token {
            Some(t) => {
                url = OaiClient::request_url(base_url, &OaiRequest::resume(Verb::ListRecords, t))
            }
            None => break,
        }
    }
    Ok(out)
}

/// Issues all six verbs against `base_url` and checks every answer is a
/// valid response without unexpected errors. Returns the number of
/// records listed.
pub async fn exercise_verbs(base_url: &str, prefix: &str) -> anyhow::Result<usize> {
    let client = OaiClient::new(Duration::from_secs(30));
    let url = |q: &str| format!("{base_url}?{q}");
    let expect_clean = |verb: &str, body: &[u8]| -> anyhow::Result<()> {
        let codes = error_codes(body);
        if !codes.is_empty() {
            bail!("{verb} at {base_url} answered {codes:?}");
        }
        Ok(())
    };
    expect_clean("Identify", &get_page(&client, &url("verb=Identify"), true).await?)?;
    let formats = get_page(&client, &url("verb=ListMetadataFormats"), true).await?;
    expect_clean("ListMetadataFormats", &formats)?;
    if !String::from_utf8_lossy(&formats).contains(&format!("<metadataPrefix>{prefix}<")) {
        bail!("{base_url} does not list {prefix}");
    }
    let sets = get_page(&client, &url("verb=ListSets"), true).await?;
    let codes = error_codes(&sets);
    if !(codes.is_empty() || codes == ["noSetHierarchy"]) {
        bail!("ListSets at {base_url} answered {codes:?}");
    }
    let mut q = format!("verb=ListIdentifiers&metadataPrefix={prefix}");
    let mut identifiers = 0;
    loop {
        let body = get_page(&client, &url(&q), true).await?;
        let text = String::from_utf8_lossy(&body).into_owned();
        let doc = Document::parse(&text)?;
        let codes = error_codes(&body);
        if codes == ["noRecordsMatch"] {
            break;
        }
        expect_clean("ListIdentifiers", &body)?;
        let list = elements(doc.root_element())
            .find(|n| is_oai(*n, "ListIdentifiers"))
            .ok_or_else(|| anyhow!("ListIdentifiers payload missing"))?;
        identifiers += elements(list).filter(|n| is_oai(*n, "header")).count();
        let token = elements(list)
            .find(|n| is_oai(*n, "resumptionToken"))
            .and_then(|t| t.text())
            .filter(|t| !t.is_empty())
            .map(str::to_owned);
        match token {
            Some(t) => {
                q = OaiRequest::resume(Verb::ListIdentifiers, t).to_query();
            }
            None => break,
        }
    }
    let records = list_records(base_url, prefix, None, true).await?.records;
    if records.len() != identifiers {
        bail!(
            "{base_url} lists {identifiers} identifiers but {} records",
            records.len()
        );
    }
    if let Some(first) = records.first() {
        let q = OaiRequest::get_record(&first.identifier, prefix).to_query();
        expect_clean("GetRecord", &get_page(&client, &url(&q), true).await?)?;
    }
    Ok(records.len())
}

/// Harvests every endpoint directly, with no hierarchy in between, and
/// returns the combined record multiset sorted by (identifier, base URL).
pub async fn oracle_direct_harvest(
    base_urls: &[String],
    prefix: &str,
) -> anyhow::Result<Vec<OracleRecord>> {
    let mut all = Vec::new();
    for base in base_urls {
        all.extend(list_records(base, prefix, None, false).await?.records);
    }
    all.sort_by(|a, b| (&a.identifier, &a.base_url).cmp(&(&b.identifier, &b.base_url)));
    Ok(all)
}
