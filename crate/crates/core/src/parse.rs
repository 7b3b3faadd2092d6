//! Best-effort parsing of OAI-PMH responses with a classified violation list.

use std::ops::Range;

use chrono::DateTime;

use crate::datestamp::{Datestamp, Granularity};
use crate::error::{OaiError, OaiErrorCode};
use crate::identifier::validate_identifier;
use crate::model::{
    DeletedRecordPolicy, Identify, MetadataFormat, OaiRecord, RecordHeader, ResumptionToken,
    SetInfo, XmlFragment, OAI_DC_NS, OAI_NS,
};
use crate::provenance::PROVENANCE_NS;
use crate::request::{Verb, ARGUMENT_NAMES};
use crate::response::{OaiResponse, Payload, RequestEcho};
use crate::utf8::invalid_sequences;
use crate::violation::{Violation, ViolationClass};
use crate::xml::{parse_document, Element, NamespaceScope};

/// Namespaces published by the Open Archives Initiative for 2.0. Any other
/// namespace under the same root is a stale (1.x) or mistyped schema.
const OAI_2_NAMESPACES: [&str; 9] = [
    OAI_NS,
    OAI_DC_NS,
    PROVENANCE_NS,
    "http://www.openarchives.org/OAI/2.0/oai-identifier",
    "http://www.openarchives.org/OAI/2.0/rights/",
    "http://www.openarchives.org/OAI/2.0/friends/",
    "http://www.openarchives.org/OAI/2.0/branding/",
    "http://www.openarchives.org/OAI/2.0/gateway/",
    "http://www.openarchives.org/OAI/2.0/eprints",
];
const OAI_NS_ROOT: &str = "http://www.openarchives.org/OAI/";

/// A unit the proxy may delete whole: a `record` element, or a `header`
/// listed directly by ListIdentifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordUnit {
    pub span: Range<usize>,
    pub identifier: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedResponse {
    /// `None` when no usable response could be recovered.
    pub response: Option<OaiResponse>,
    /// Sorted by offset.
    pub violations: Vec<Violation>,
    pub units: Vec<RecordUnit>,
}

impl ParsedResponse {
    pub fn is_fatal(&self) -> bool {
        self.response.is_none() || self.violations.iter().any(|v| v.fatal)
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// Violations that fall inside `span`.
    pub fn violations_in(&self, span: &Range<usize>) -> impl Iterator<Item = &Violation> {
        let span = span.clone();
        self.violations
            .iter()
            .filter(move |v| span.contains(&v.offset))
    }

    /// Violations not inside any record unit.
    pub fn envelope_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| !self.units.iter().any(|u| u.span.contains(&v.offset)))
    }
}

/// Parses a response body, reporting every deviation from well-formedness
/// and from the OAI-PMH 2.0 schema with its byte offset.
pub fn parse_response(body: &[u8]) -> ParsedResponse {
    let mut violations: Vec<Violation> = invalid_sequences(body)
        .into_iter()
        .map(|r| Violation::new(r.start, ViolationClass::Utf8, "invalid UTF-8 sequence"))
        .collect();
    let doc = parse_document(body);
    violations.extend(doc.violations);

    let Some(root) = doc.root else {
        violations.push(Violation::fatal(0, ViolationClass::Markup, "no root element"));
        return finish(None, violations, Vec::new());
    };

    let mut ctx = Ctx {
        body,
        violations,
        units: Vec::new(),
        metadata_prefix: None,
    };
    let scope = NamespaceScope::new();
    ctx.check_prefixes(&root, &scope);

    let root_ns = scope.element_namespace(&root);
    if root.local_name() != "OAI-PMH" || root_ns.as_deref() != Some(OAI_NS) {
        let message = match root_ns.as_deref() {
            Some(ns) if ns.starts_with("http://www.openarchives.org/OAI/1.") => {
                "OAI-PMH 1.x response; only protocol version 2.0 is supported".to_owned()
            }
            _ => format!("root element <{}> is not an OAI-PMH 2.0 envelope", root.name),
        };
        ctx.violations
            .push(Violation::fatal(root.span.start, ViolationClass::Protocol, message));
        return finish(None, ctx.violations, ctx.units);
    }

    let response = ctx.envelope(&root, &scope.enter(&root));
    finish(response, ctx.violations, ctx.units)
}

fn finish(
    response: Option<OaiResponse>,
    mut violations: Vec<Violation>,
    units: Vec<RecordUnit>,
) -> ParsedResponse {
    violations.sort_by_key(|v| v.offset);
    violations.dedup();
    ParsedResponse {
        response,
        violations,
        units,
    }
}

struct Ctx<'a> {
    body: &'a [u8],
    violations: Vec<Violation>,
    units: Vec<RecordUnit>,
    metadata_prefix: Option<String>,
}

impl Ctx<'_> {
    fn schema(&mut self, offset: usize, message: impl Into<String>) {
        self.violations
            .push(Violation::new(offset, ViolationClass::Schema, message));
    }

    fn protocol(&mut self, offset: usize, message: impl Into<String>) {
        self.violations
            .push(Violation::new(offset, ViolationClass::Protocol, message));
    }

    fn fragment(&self, el: &Element) -> XmlFragment {
        XmlFragment::new(self.body[el.span.clone()].to_vec())
    }

    /// Undeclared prefixes make a document namespace-ill-formed.
    fn check_prefixes(&mut self, el: &Element, parent: &NamespaceScope) {
        let scope = parent.enter(el);
        if let Some(p) = el.prefix() {
            if scope.resolve(p).is_none() {
                self.violations.push(Violation::new(
                    el.span.start,
                    ViolationClass::Markup,
                    format!("undeclared namespace prefix {p:?}"),
                ));
            }
        }
        for a in &el.attrs {
            if let Some((p, _)) = a.name.split_once(':') {
                if p != "xmlns" && scope.resolve(p).is_none() {
                    self.violations.push(Violation::new(
                        a.offset,
                        ViolationClass::Markup,
                        format!("undeclared namespace prefix {p:?}"),
                    ));
                }
            }
        }
        for child in el.elements() {
            self.check_prefixes(child, &scope);
        }
    }

    /// Reports text and any element in a namespace other than the OAI one.
    fn check_container(&mut self, el: &Element, scope: &NamespaceScope) {
        if let Some(off) = el.stray_text() {
            self.schema(off, format!("unexpected text in <{}>", el.local_name()));
        }
        for child in el.elements() {
            if scope.element_namespace(child).as_deref() != Some(OAI_NS) {
                self.schema(
                    child.span.start,
                    format!("element <{}> is not in the OAI-PMH namespace", child.name),
                );
            }
        }
    }

    fn text_of(&mut self, el: &Element) -> String {
        if el.elements().next().is_some() {
            self.schema(el.span.start, format!("<{}> must contain text only", el.name));
        }
        el.text().trim().to_owned()
    }

    fn envelope(&mut self, root: &Element, scope: &NamespaceScope) -> Option<OaiResponse> {
        self.check_container(root, scope);
        let children: Vec<&Element> = root.elements().collect();

        let mut idx = 0;
        let response_date = match children.first() {
            Some(el) if el.local_name() == "responseDate" => {
                idx += 1;
                let text = self.text_of(el);
                match Datestamp::parse(&text) {
                    Ok(d) if d.granularity() == Granularity::Second => d,
                    _ => {
                        self.schema(el.span.start, format!("invalid responseDate {text:?}"));
                        epoch()
                    }
                }
            }
            _ => {
                let at = children.first().map_or(root.content.start, |c| c.span.start);
                self.protocol(at, "missing responseDate");
                if let Some(misplaced) = root.child("responseDate") {
                    self.schema(misplaced.span.start, "responseDate is out of order");
                }
                epoch()
            }
        };

        let request = match children.get(idx) {
            Some(el) if el.local_name() == "request" => {
                idx += 1;
                self.request_echo(el)
            }
            other => {
                let at = other.map_or(root.content.end, |c| c.span.start);
                self.protocol(at, "missing request element");
                RequestEcho::default()
            }
        };
        self.metadata_prefix = request.attribute("metadataPrefix").map(str::to_owned);

        let rest = &children[idx..];
        if rest.is_empty() {
            self.protocol(root.content.end, "response has neither a payload nor an error");
            return Some(OaiResponse {
                response_date,
                request,
                payload: Payload::Errors(Vec::new()),
            });
        }

        let payload = if rest.iter().any(|e| e.local_name() == "error") {
            let mut errors = Vec::new();
            for el in rest {
                if el.local_name() != "error" {
                    self.schema(el.span.start, "errors cannot be mixed with a payload");
                    continue;
                }
                let code_raw = el.attr("code").unwrap_or_default().to_owned();
                let message = self.text_of(el);
                match code_raw.parse::<OaiErrorCode>() {
                    Ok(code) => errors.push(OaiError::new(code, message)),
                    Err(()) => self.schema(el.span.start, format!("unknown error code {code_raw:?}")),
                }
            }
            Payload::Errors(errors)
        } else {
            for extra in &rest[1..] {
                self.schema(extra.span.start, format!("unexpected element <{}>", extra.name));
            }
            let el = rest[0];
            let Ok(verb) = el.local_name().parse::<Verb>() else {
                self.schema(el.span.start, format!("unexpected element <{}>", el.name));
                return Some(OaiResponse {
                    response_date,
                    request,
                    payload: Payload::Errors(Vec::new()),
                });
            };
            if let Some(asked) = request.attribute("verb") {
                if asked != verb.as_str() {
                    self.protocol(
                        el.span.start,
                        format!("payload <{verb}> does not answer verb {asked:?}"),
                    );
                }
            }
            let inner = scope.enter(el);
            self.check_container(el, &inner);
            match verb {
                Verb::Identify => Payload::Identify(self.identify(el, &inner)),
                Verb::ListMetadataFormats => Payload::ListMetadataFormats(self.formats(el)),
                Verb::ListSets => self.sets(el),
                Verb::ListIdentifiers => self.identifiers(el, &inner),
                Verb::ListRecords => self.list_records(el, &inner),
                Verb::GetRecord => self.get_record(el, &inner),
            }
        };
        Some(OaiResponse {
            response_date,
            request,
            payload,
        })
    }

    fn request_echo(&mut self, el: &Element) -> RequestEcho {
        let mut attributes = Vec::new();
        for a in &el.attrs {
            if a.name == "verb" {
                if a.value.parse::<Verb>().is_err() {
                    self.schema(a.offset, format!("invalid verb attribute {:?}", a.value));
                }
            } else if !ARGUMENT_NAMES.contains(&a.name.as_str()) {
                self.schema(a.offset, format!("unexpected request attribute {:?}", a.name));
            }
            attributes.push((a.name.clone(), a.value.clone()));
        }
        RequestEcho {
            base_url: self.text_of(el),
            attributes,
        }
    }

    /// Children with the expected local names in order: `(name, min, max)`.
    fn sequence<'e>(
        &mut self,
        el: &'e Element,
        layout: &[(&'static str, usize, usize)],
    ) -> Vec<Vec<&'e Element>> {
        let children: Vec<&Element> = el.elements().collect();
        let mut out = vec![Vec::new(); layout.len()];
        let mut slot = 0;
        for child in children {
            let name = child.local_name();
            while slot < layout.len() && layout[slot].0 != name {
                slot += 1;
            }
            if slot == layout.len() {
                let known = layout.iter().any(|(n, _, _)| *n == name);
                let msg = if known {
                    format!("<{name}> is out of order in <{}>", el.local_name())
                } else {
                    format!("unexpected element <{name}> in <{}>", el.local_name())
                };
                self.schema(child.span.start, msg);
                // Restart matching so later siblings are still classified.
                slot = layout.iter().position(|(n, _, _)| *n == name).unwrap_or(0);
                if layout[slot].0 != name {
                    continue;
                }
            }
            out[slot].push(child);
        }
        for (i, (name, min, max)) in layout.iter().enumerate() {
            if out[i].len() < *min {
                self.schema(
                    el.span.start,
                    format!("<{}> is missing <{name}>", el.local_name()),
                );
            }
            if out[i].len() > *max {
                self.schema(
                    out[i][*max].span.start,
                    format!("too many <{name}> elements in <{}>", el.local_name()),
                );
            }
        }
        out
    }

    fn identify(&mut self, el: &Element, scope: &NamespaceScope) -> Identify {
        let parts = self.sequence(
            el,
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
        );
        let text = |ctx: &mut Self, i: usize| parts[i].first().map(|e| ctx.text_of(e));
        let protocol_version = text(self, 2).unwrap_or_default();
        if protocol_version != "2.0" && !parts[2].is_empty() {
            self.violations.push(Violation::fatal(
                parts[2][0].span.start,
                ViolationClass::Protocol,
                format!("unsupported protocolVersion {protocol_version:?}"),
            ));
        }
        let granularity = match text(self, 6) {
            Some(g) => Granularity::from_wire(&g).unwrap_or_else(|| {
                self.schema(parts[6][0].span.start, format!("invalid granularity {g:?}"));
                Granularity::Second
            }),
            None => Granularity::Second,
        };
        let earliest = match text(self, 4) {
            Some(d) => Datestamp::parse(&d).unwrap_or_else(|_| {
                self.schema(parts[4][0].span.start, format!("invalid earliestDatestamp {d:?}"));
                epoch()
            }),
            None => epoch(),
        };
        let deleted_record = match text(self, 5) {
            Some(d) => DeletedRecordPolicy::parse(&d).unwrap_or_else(|| {
                self.schema(parts[5][0].span.start, format!("invalid deletedRecord {d:?}"));
                DeletedRecordPolicy::No
            }),
            None => DeletedRecordPolicy::No,
        };
        let admin_emails = parts[3].iter().map(|e| self.text_of(e)).collect();
        let compressions = parts[7].iter().map(|e| self.text_of(e)).collect();
        let descriptions = parts[8]
            .iter()
            .filter_map(|d| self.single_child(d, scope))
            .collect();
        Identify {
            repository_name: text(self, 0).unwrap_or_default(),
            base_url: text(self, 1).unwrap_or_default(),
            protocol_version,
            earliest_datestamp: earliest,
            deleted_record,
            granularity,
            admin_emails,
            compressions,
            descriptions,
        }
    }

    /// Fragment of the single element child of a wrapper (`metadata`,
    /// `about`, `description`).
    fn single_child(&mut self, wrapper: &Element, scope: &NamespaceScope) -> Option<XmlFragment> {
        if let Some(off) = wrapper.stray_text() {
            self.schema(off, format!("unexpected text in <{}>", wrapper.local_name()));
        }
        let mut kids = wrapper.elements();
        let Some(first) = kids.next() else {
            self.schema(
                wrapper.span.start,
                format!("<{}> must contain exactly one element", wrapper.local_name()),
            );
            return None;
        };
        if let Some(extra) = kids.next() {
            self.schema(
                extra.span.start,
                format!("<{}> must contain exactly one element", wrapper.local_name()),
            );
        }
        self.check_foreign_namespaces(first, &scope.enter(wrapper));
        Some(self.fragment(first))
    }

    /// Flags stale or mistyped OAI schema namespaces inside a fragment.
    fn check_foreign_namespaces(&mut self, el: &Element, scope: &NamespaceScope) {
        for (_, uri) in el.namespace_decls() {
            if uri.starts_with(OAI_NS_ROOT) && !OAI_2_NAMESPACES.contains(&uri) {
                self.schema(
                    el.span.start,
                    format!("namespace {uri:?} is not an OAI-PMH 2.0 schema"),
                );
            }
        }
        if let Some(loc) = el.attrs.iter().find(|a| a.name.ends_with(":schemaLocation")) {
            if loc.value.contains("openarchives.org/OAI/1.") {
                self.schema(loc.offset, "schemaLocation refers to an OAI-PMH 1.x schema");
            }
        }
        let inner = scope.enter(el);
        for child in el.elements() {
            self.check_foreign_namespaces(child, &inner);
        }
    }

    fn formats(&mut self, el: &Element) -> Vec<MetadataFormat> {
        let items = self.sequence(el, &[("metadataFormat", 1, usize::MAX)]);
        let mut formats: Vec<MetadataFormat> = Vec::new();
        for item in &items[0] {
            let parts = self.sequence(
                item,
                &[("metadataPrefix", 1, 1), ("schema", 1, 1), ("metadataNamespace", 1, 1)],
            );
            let mut get = |i: usize| {
                parts[i]
                    .first()
                    .map(|e| self.text_of(e))
                    .unwrap_or_default()
            };
            let format = MetadataFormat {
                prefix: get(0),
                schema: get(1),
                namespace: get(2),
            };
            if formats.iter().any(|f| f.prefix == format.prefix) {
                self.schema(
                    item.span.start,
                    format!("duplicate metadataPrefix {:?}", format.prefix),
                );
            }
            formats.push(format);
        }
        formats
    }

    fn sets(&mut self, el: &Element) -> Payload {
        let items = self.sequence(el, &[("set", 1, usize::MAX), ("resumptionToken", 0, 1)]);
        let mut sets = Vec::new();
        for item in &items[0] {
            let parts = self.sequence(
                item,
                &[("setSpec", 1, 1), ("setName", 1, 1), ("setDescription", 0, usize::MAX)],
            );
            let spec = parts[0].first().map(|e| self.text_of(e)).unwrap_or_default();
            let name = parts[1].first().map(|e| self.text_of(e)).unwrap_or_default();
            sets.push(SetInfo { spec, name });
        }
        let token = items[1].first().map(|t| self.token(t));
        Payload::ListSets { sets, token }
    }

    fn identifiers(&mut self, el: &Element, _scope: &NamespaceScope) -> Payload {
        let items = self.sequence(el, &[("header", 1, usize::MAX), ("resumptionToken", 0, 1)]);
        let mut headers = Vec::new();
        for item in &items[0] {
            let header = self.header(item);
            self.units.push(RecordUnit {
                span: item.span.clone(),
                identifier: header.as_ref().map(|h| h.identifier.clone()),
            });
            if let Some(h) = header {
                headers.push(h);
            }
        }
        let token = items[1].first().map(|t| self.token(t));
        Payload::ListIdentifiers { headers, token }
    }

    fn list_records(&mut self, el: &Element, scope: &NamespaceScope) -> Payload {
        let items = self.sequence(el, &[("record", 1, usize::MAX), ("resumptionToken", 0, 1)]);
        let records = items[0]
            .iter()
            .filter_map(|item| self.record(item, scope))
            .collect();
        let token = items[1].first().map(|t| self.token(t));
        Payload::ListRecords { records, token }
    }

    fn get_record(&mut self, el: &Element, scope: &NamespaceScope) -> Payload {
        let items = self.sequence(el, &[("record", 1, 1)]);
        match items[0].first().and_then(|item| self.record(item, scope)) {
            Some(record) => Payload::GetRecord(record),
            None => Payload::Errors(Vec::new()),
        }
    }

    fn header(&mut self, el: &Element) -> Option<RecordHeader> {
        let parts = self.sequence(
            el,
            &[("identifier", 1, 1), ("datestamp", 1, 1), ("setSpec", 0, usize::MAX)],
        );
        let deleted = match el.attr("status") {
            None => false,
            Some("deleted") => true,
            Some(other) => {
                self.schema(el.span.start, format!("invalid header status {other:?}"));
                false
            }
        };
        for a in &el.attrs {
            if a.name != "status" && !a.name.starts_with("xmlns") {
                self.schema(a.offset, format!("unexpected header attribute {:?}", a.name));
            }
        }
        let identifier = parts[0].first().map(|e| (self.text_of(e), e.span.start));
        let datestamp = parts[1].first().map(|e| (self.text_of(e), e.span.start));
        let set_specs = parts[2].iter().map(|e| self.text_of(e)).collect();
        let (identifier, id_at) = identifier?;
        let check = validate_identifier(&identifier);
        if !check.valid {
            self.schema(
                id_at,
                format!(
                    "identifier {identifier:?} is not a URI: {}",
                    check.reason.unwrap_or_default()
                ),
            );
        }
        let (datestamp_raw, ds_at) = datestamp?;
        let datestamp = match Datestamp::parse(&datestamp_raw) {
            Ok(d) => d,
            Err(_) => {
                self.schema(ds_at, format!("invalid datestamp {datestamp_raw:?}"));
                return None;
            }
        };
        Some(RecordHeader {
            identifier,
            datestamp,
            set_specs,
            deleted,
        })
    }

    fn record(&mut self, el: &Element, scope: &NamespaceScope) -> Option<OaiRecord> {
        let unit_idx = self.units.len();
        self.units.push(RecordUnit {
            span: el.span.clone(),
            identifier: None,
        });
        let inner = scope.enter(el);
        let parts = self.sequence(
            el,
            &[("header", 1, 1), ("metadata", 0, 1), ("about", 0, usize::MAX)],
        );
        let header = parts[0].first().and_then(|h| self.header(h));
        let metadata = parts[1].first().and_then(|m| {
            let fragment = self.single_child(m, &inner)?;
            self.check_metadata_namespace(m, &inner);
            Some(fragment)
        });
        let abouts = parts[2]
            .iter()
            .filter_map(|a| self.single_child(a, &inner))
            .collect();
        let header = header?;
        self.units[unit_idx].identifier = Some(header.identifier.clone());
        if header.deleted && metadata.is_some() {
            self.protocol(el.span.start, "deleted record carries metadata");
        }
        if !header.deleted && metadata.is_none() && parts[1].is_empty() {
            self.protocol(el.span.start, "record has no metadata and is not deleted");
        }
        Some(OaiRecord {
            header,
            metadata,
            abouts,
        })
    }

    fn check_metadata_namespace(&mut self, wrapper: &Element, scope: &NamespaceScope) {
        if self.metadata_prefix.as_deref() != Some("oai_dc") {
            return;
        }
        let inner = scope.enter(wrapper);
        if let Some(root) = wrapper.elements().next() {
            let ns = inner.element_namespace(root);
            if ns.as_deref() != Some(OAI_DC_NS) {
                self.schema(
                    root.span.start,
                    format!("oai_dc metadata in namespace {:?}", ns.unwrap_or_default()),
                );
            }
        }
    }

    fn token(&mut self, el: &Element) -> ResumptionToken {
        let number = |ctx: &mut Self, name: &str| {
            el.attr(name).and_then(|v| match v.parse::<u64>() {
                Ok(n) => Some(n),
                Err(_) => {
                    ctx.schema(el.span.start, format!("invalid {name} {v:?}"));
                    None
                }
            })
        };
        let complete_list_size = number(self, "completeListSize");
        let cursor = number(self, "cursor");
        let expiration_date = el.attr("expirationDate").and_then(|v| {
            match Datestamp::parse(v) {
                Ok(d) if d.granularity() == Granularity::Second => Some(d),
                _ => {
                    self.schema(el.span.start, format!("invalid expirationDate {v:?}"));
                    None
                }
            }
        });
        ResumptionToken {
            token: self.text_of(el),
            complete_list_size,
            cursor,
            expiration_date,
        }
    }
}

fn epoch() -> Datestamp {
    Datestamp::seconds(DateTime::UNIX_EPOCH)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OaiRecord;
    use crate::serialize::serialize_response;

    fn dc(title: &str) -> String {
        format!(
            "<oai_dc:dc xmlns:oai_dc=\"{OAI_DC_NS}\" xmlns:dc=\"http://purl.org/dc/elements/1.1/\">\
             <dc:title>{title}</dc:title></oai_dc:dc>"
        )
    }

    fn list_records(titles: &[&str]) -> Vec<u8> {
        let records = titles
            .iter()
            .enumerate()
            .map(|(i, t)| OaiRecord {
                header: RecordHeader::new(
                    format!("oai:t:{i}"),
                    Datestamp::parse("2002-01-01").unwrap(),
                ),
                metadata: Some(XmlFragment::from(dc(t))),
                abouts: Vec::new(),
            })
            .collect();
        let mut echo = RequestEcho::bare("http://t/oai");
        echo.attributes = vec![
            ("verb".into(), "ListRecords".into()),
            ("metadataPrefix".into(), "oai_dc".into()),
        ];
        serialize_response(&OaiResponse {
            response_date: Datestamp::parse("2002-06-01T00:00:00Z").unwrap(),
            request: echo,
            payload: Payload::ListRecords {
                records,
                token: None,
            },
        })
    }

    #[test]
    fn serialized_list_is_clean() {
        let body = list_records(&["one", "two"]);
        let parsed = parse_response(&body);
        assert!(parsed.is_clean(), "{:?}", parsed.violations);
        assert_eq!(parsed.units.len(), 2);
        assert_eq!(parsed.response.unwrap().records().len(), 2);
    }

    #[test]
    fn bare_ampersand_is_one_entity_violation_at_its_offset() {
        let body = list_records(&["A & B"]);
        let at = body.windows(3).position(|w| w == b"& B").unwrap();
        let parsed = parse_response(&body);
        assert_eq!(parsed.violations.len(), 1, "{:?}", parsed.violations);
        assert_eq!(parsed.violations[0].class, ViolationClass::Entity);
        assert_eq!(parsed.violations[0].offset, at);
        assert!(parsed.units[0].span.contains(&at));
    }

    #[test]
    fn missing_response_date_is_protocol_violation() {
        let body = String::from_utf8(list_records(&["x"])).unwrap();
        let start = body.find("<responseDate>").unwrap();
        let end = body.find("</responseDate>").unwrap() + "</responseDate>\n".len();
        let body = format!("{}{}", &body[..start], &body[end..]);
        let parsed = parse_response(body.as_bytes());
        assert!(!parsed.is_fatal());
        let v: Vec<_> = parsed.envelope_violations().collect();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].class, ViolationClass::Protocol);
        assert_eq!(v[0].message, "missing responseDate");
    }

    #[test]
    fn no_root_is_fatal() {
        let parsed = parse_response(b"   ");
        assert!(parsed.response.is_none());
        assert!(parsed.is_fatal());
    }

    #[test]
    fn version_one_envelope_is_fatal() {
        let body = br#"<Identify xmlns="http://www.openarchives.org/OAI/1.1/OAI_Identify"><protocolVersion>1.1</protocolVersion></Identify>"#;
        let parsed = parse_response(body);
        assert!(parsed.response.is_none());
        assert_eq!(parsed.violations[0].class, ViolationClass::Protocol);
    }

    #[test]
    fn stale_dc_namespace_is_schema_violation_inside_record() {
        let body = String::from_utf8(list_records(&["x"]))
            .unwrap()
            .replace(OAI_DC_NS, "http://www.openarchives.org/OAI/1.1/dc.xsd");
        let parsed = parse_response(body.as_bytes());
        assert!(!parsed.violations.is_empty());
        assert!(parsed
            .violations
            .iter()
            .all(|v| v.class == ViolationClass::Schema && parsed.units[0].span.contains(&v.offset)));
    }

    #[test]
    fn deleted_record_with_metadata_is_flagged() {
        let body = String::from_utf8(list_records(&["x"]))
            .unwrap()
            .replace("<header>", "<header status=\"deleted\">");
        let parsed = parse_response(body.as_bytes());
        assert_eq!(parsed.violations.len(), 1);
        assert_eq!(parsed.violations[0].class, ViolationClass::Protocol);
    }

    #[test]
    fn error_response_parses_codes() {
        let body = serialize_response(&OaiResponse::error(
            Datestamp::parse("2002-06-01T00:00:00Z").unwrap(),
            RequestEcho::bare("http://t/oai"),
            OaiError::new(OaiErrorCode::NoRecordsMatch, "none"),
        ));
        let parsed = parse_response(&body);
        assert!(parsed.is_clean(), "{:?}", parsed.violations);
        assert!(parsed.response.unwrap().has_error(OaiErrorCode::NoRecordsMatch));
    }

    #[test]
    fn identify_with_old_protocol_version_is_fatal() {
        let body = format!(
            "<OAI-PMH xmlns=\"{OAI_NS}\"><responseDate>2002-06-01T00:00:00Z</responseDate>\
             <request verb=\"Identify\">http://t/oai</request><Identify>\
             <repositoryName>t</repositoryName><baseURL>http://t/oai</baseURL>\
             <protocolVersion>1.1</protocolVersion><adminEmail>a@t</adminEmail>\
             <earliestDatestamp>2002-01-01</earliestDatestamp><deletedRecord>no</deletedRecord>\
             <granularity>YYYY-MM-DD</granularity></Identify></OAI-PMH>"
        );
        let parsed = parse_response(body.as_bytes());
        assert!(parsed.is_fatal());
    }

    #[test]
    fn unquoted_attribute_is_markup_violation() {
        let body = String::from_utf8(list_records(&["x"]))
            .unwrap()
            .replace("<dc:title>", "<dc:title xml:lang=en>");
        let parsed = parse_response(body.as_bytes());
        assert_eq!(parsed.violations.len(), 1, "{:?}", parsed.violations);
        assert_eq!(parsed.violations[0].class, ViolationClass::Markup);
    }
}
