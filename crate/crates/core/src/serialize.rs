use std::fmt::Write as _;

use crate::model::{
    Identify, MetadataFormat, OaiRecord, RecordHeader, ResumptionToken, SetInfo, OAI_NS,
    OAI_SCHEMA, XSI_NS,
};
use crate::response::{OaiResponse, Payload};
use crate::xml::{escape_attr, escape_text};

/// Content type for every OAI-PMH response.
pub const CONTENT_TYPE: &str = "text/xml; charset=utf-8";

/// Renders a response as an OAI-PMH 2.0 document. Metadata, about and
/// description fragments are copied through byte for byte.
pub fn serialize_response(response: &OaiResponse) -> Vec<u8> {
    let mut w = Writer::default();
    w.text("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    w.text(&format!(
        "<OAI-PMH xmlns=\"{OAI_NS}\" xmlns:xsi=\"{XSI_NS}\" \
         xsi:schemaLocation=\"{OAI_NS} {OAI_SCHEMA}\">\n"
    ));
    w.element("responseDate", &response.response_date.to_string());
    w.text("<request");
    for (k, v) in &response.request.attributes {
        w.text(&format!(" {k}=\"{}\"", escape_attr(v)));
    }
    w.text(&format!(">{}</request>\n", escape_text(&response.request.base_url)));

    match &response.payload {
        Payload::Errors(errors) => {
            for e in errors {
                w.text(&format!(
                    "<error code=\"{}\">{}</error>\n",
                    e.code,
                    escape_text(&e.message)
                ));
            }
        }
        Payload::Identify(identify) => write_identify(&mut w, identify),
        Payload::ListMetadataFormats(formats) => {
            w.text("<ListMetadataFormats>\n");
            for f in formats {
                write_format(&mut w, f);
            }
            w.text("</ListMetadataFormats>\n");
        }
        Payload::ListSets { sets, token } => {
            w.text("<ListSets>\n");
            for s in sets {
                write_set(&mut w, s);
            }
            write_token(&mut w, token.as_ref());
            w.text("</ListSets>\n");
        }
        Payload::ListIdentifiers { headers, token } => {
            w.text("<ListIdentifiers>\n");
            for h in headers {
                write_header(&mut w, h);
                w.text("\n");
            }
            write_token(&mut w, token.as_ref());
            w.text("</ListIdentifiers>\n");
        }
        Payload::ListRecords { records, token } => {
            w.text("<ListRecords>\n");
            for r in records {
                write_record(&mut w, r);
            }
            write_token(&mut w, token.as_ref());
            w.text("</ListRecords>\n");
        }
        Payload::GetRecord(record) => {
            w.text("<GetRecord>\n");
            write_record(&mut w, record);
            w.text("</GetRecord>\n");
        }
    }
    w.text("</OAI-PMH>\n");
    w.buf
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn text(&mut self, s: &str) {
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    fn element(&mut self, name: &str, value: &str) {
        self.text(&format!("<{name}>{}</{name}>\n", escape_text(value)));
    }
}

fn write_identify(w: &mut Writer, id: &Identify) {
    w.text("<Identify>\n");
    w.element("repositoryName", &id.repository_name);
    w.element("baseURL", &id.base_url);
    w.element("protocolVersion", &id.protocol_version);
    for email in &id.admin_emails {
        w.element("adminEmail", email);
    }
    w.element("earliestDatestamp", &id.earliest_datestamp.to_string());
    w.element("deletedRecord", id.deleted_record.as_str());
    w.element("granularity", id.granularity.as_wire());
    for c in &id.compressions {
        w.element("compression", c);
    }
    for d in &id.descriptions {
        w.text("<description>");
        w.raw(d.as_bytes());
        w.text("</description>\n");
    }
    w.text("</Identify>\n");
}

fn write_format(w: &mut Writer, f: &MetadataFormat) {
    let mut s = String::from("<metadataFormat>");
    let _ = write!(
        s,
        "<metadataPrefix>{}</metadataPrefix><schema>{}</schema>\
         <metadataNamespace>{}</metadataNamespace></metadataFormat>\n",
        escape_text(&f.prefix),
        escape_text(&f.schema),
        escape_text(&f.namespace)
    );
    w.text(&s);
}

fn write_set(w: &mut Writer, s: &SetInfo) {
    w.text(&format!(
        "<set><setSpec>{}</setSpec><setName>{}</setName></set>\n",
        escape_text(&s.spec),
        escape_text(&s.name)
    ));
}

fn write_header(w: &mut Writer, h: &RecordHeader) {
    if h.deleted {
        w.text("<header status=\"deleted\">");
    } else {
        w.text("<header>");
    }
    w.text(&format!(
        "<identifier>{}</identifier><datestamp>{}</datestamp>",
        escape_text(&h.identifier),
        h.datestamp
    ));
    for spec in &h.set_specs {
        w.text(&format!("<setSpec>{}</setSpec>", escape_text(spec)));
    }
    w.text("</header>");
}

fn write_record(w: &mut Writer, r: &OaiRecord) {
    w.text("<record>");
    write_header(w, &r.header);
    if let Some(metadata) = &r.metadata {
        w.text("<metadata>");
        w.raw(metadata.as_bytes());
        w.text("</metadata>");
    }
    for about in &r.abouts {
        w.text("<about>");
        w.raw(about.as_bytes());
        w.text("</about>");
    }
    w.text("</record>\n");
}

fn write_token(w: &mut Writer, token: Option<&ResumptionToken>) {
    let Some(t) = token else { return };
    w.text("<resumptionToken");
    if let Some(d) = &t.expiration_date {
        w.text(&format!(" expirationDate=\"{d}\""));
    }
    if let Some(n) = t.complete_list_size {
        w.text(&format!(" completeListSize=\"{n}\""));
    }
    if let Some(c) = t.cursor {
        w.text(&format!(" cursor=\"{c}\""));
    }
    w.text(&format!(">{}</resumptionToken>\n", escape_text(&t.token)));
}
