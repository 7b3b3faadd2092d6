//! HTML, robots.txt and sitemap rendering. Pure functions over data the
//! server has already fetched.

use oairelay_core::xml::{escape_attr, escape_text, parse_document, Element};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

/// Everything except RFC 3986 unreserved characters is encoded, so any
/// identifier becomes a single safe path segment.
const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

pub fn encode_segment(s: &str) -> String {
    utf8_percent_encode(s, SEGMENT).to_string()
}

pub fn record_path(repo: &str, identifier: &str) -> String {
    format!("/gw/{}/{}", encode_segment(repo), encode_segment(identifier))
}

pub fn index_path(repo: &str, page: usize) -> String {
    format!("/gw/{}/index/{page}", encode_segment(repo))
}

/// Dublin Core fields shown on a record page.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DcFields {
    pub titles: Vec<String>,
    pub creators: Vec<String>,
    pub dates: Vec<String>,
    pub descriptions: Vec<String>,
    pub identifiers: Vec<String>,
}

impl DcFields {
    pub fn extract(metadata: &[u8]) -> Self {
        let mut out = DcFields::default();
        if let Some(root) = parse_document(metadata).root {
            collect(&root, &mut out);
        }
        out
    }

    /// First `dc:identifier` that looks like a web address.
    pub fn resource_url(&self) -> Option<&str> {
        self.identifiers
            .iter()
            .map(String::as_str)
            .find(|s| s.starts_with("http://") || s.starts_with("https://"))
    }
}

fn collect(el: &Element, out: &mut DcFields) {
    for child in el.elements() {
        let text = child.text().trim().to_owned();
        let slot = match child.local_name() {
            "title" => &mut out.titles,
            "creator" => &mut out.creators,
            "date" => &mut out.dates,
            "description" => &mut out.descriptions,
            "identifier" => &mut out.identifiers,
            _ => {
                collect(child, out);
                continue;
            }
        };
        if !text.is_empty() {
            slot.push(text);
        }
    }
}

pub struct RecordPage<'a> {
    pub repo: &'a str,
    pub identifier: &'a str,
    pub datestamp: &'a str,
    pub fields: &'a DcFields,
    pub prev: Option<&'a str>,
    pub next: Option<&'a str>,
    /// Index page the record is listed on.
    pub index_page: usize,
}

fn head(out: &mut String, title: &str) {
    out.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>");
    out.push_str(&escape_text(title));
    out.push_str("</title></head>\n<body>\n");
}

fn link(out: &mut String, rel: &str, href: &str, label: &str) {
    out.push_str(&format!(
        "<a rel=\"{}\" href=\"{}\">{}</a>\n",
        rel,
        escape_attr(href),
        escape_text(label)
    ));
}

pub fn render_record(page: &RecordPage<'_>) -> String {
    let f = page.fields;
    let title = f.titles.first().map_or(page.identifier, String::as_str);
    let mut out = String::new();
    head(&mut out, title);
    out.push_str(&format!("<h1>{}</h1>\n<dl>\n", escape_text(title)));
    let mut row = |name: &str, values: &[String]| {
        for v in values {
            out.push_str(&format!("<dt>{name}</dt><dd>{}</dd>\n", escape_text(v)));
        }
    };
    row("Identifier", &[page.identifier.to_owned()]);
    row("Creator", &f.creators);
    row("Date", &f.dates);
    row("Description", &f.descriptions);
    row("Harvested", &[page.datestamp.to_owned()]);
    out.push_str("</dl>\n");
    if let Some(url) = f.resource_url() {
        out.push_str("<p>");
        link(&mut out, "bookmark", url, url);
        out.push_str("</p>\n");
    }
    out.push_str("<nav>\n");
    if let Some(prev) = page.prev {
        link(&mut out, "prev", &record_path(page.repo, prev), "previous");
    }
    if let Some(next) = page.next {
        link(&mut out, "next", &record_path(page.repo, next), "next");
    }
    link(&mut out, "index", &index_path(page.repo, page.index_page), "index");
    out.push_str("</nav>\n</body></html>\n");
    out
}

pub fn render_index(repo: &str, page: usize, identifiers: &[String], has_next: bool) -> String {
    let mut out = String::new();
    head(&mut out, &format!("{repo}: page {page}"));
    out.push_str(&format!("<h1>{} records, page {page}</h1>\n<ul>\n", escape_text(repo)));
    for id in identifiers {
        out.push_str("<li>");
        link(&mut out, "item", &record_path(repo, id), id);
        out.push_str("</li>\n");
    }
    out.push_str("</ul>\n<nav>\n");
    if page > 0 {
        link(&mut out, "prev", &index_path(repo, page - 1), "previous page");
    }
    if has_next {
        link(&mut out, "next", &index_path(repo, page + 1), "next page");
    }
    out.push_str("</nav>\n</body></html>\n");
    out
}

pub fn render_robots(excluded: &[String], sitemap_url: &str) -> String {
    let mut out = String::from("User-agent: *\n");
    if excluded.is_empty() {
        out.push_str("Disallow:\n");
    }
    for repo in excluded {
        out.push_str(&format!("Disallow: /gw/{}/\n", encode_segment(repo)));
    }
    out.push_str(&format!("\nSitemap: {sitemap_url}\n"));
    out
}

pub fn render_sitemap(base: &str, pages: &[(String, usize)]) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <urlset xmlns=\"http://www.sitemaps.org/schemas/sitemap/0.9\">\n",
    );
    for (repo, page) in pages {
        out.push_str(&format!(
            "  <url><loc>{}</loc></url>\n",
            escape_text(&format!("{base}{}", index_path(repo, *page)))
        ));
    }
    out.push_str("</urlset>\n");
    out
}

/// Number of index pages for `n` records; an empty list still has page 0.
pub fn page_count(n: usize, page_size: usize) -> usize {
    n.div_ceil(page_size.max(1)).max(1)
}
