use std::ops::Range;

use super::escape::{decode_reference, reference_len};
use super::scan::{tokenize, Tag, Token};
use crate::violation::{Violation, ViolationClass};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub value: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(Element),
    Text { text: String, span: Range<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    /// Qualified name as written.
    pub name: String,
    pub attrs: Vec<Attribute>,
    /// From `<` of the start tag to the end of the end tag.
    pub span: Range<usize>,
    /// Bytes between the start tag and the end tag.
    pub content: Range<usize>,
    pub children: Vec<Node>,
}

impl Element {
    pub fn local_name(&self) -> &str {
        self.name.rsplit_once(':').map_or(&self.name, |(_, l)| l)
    }

    pub fn prefix(&self) -> Option<&str> {
        self.name.split_once(':').map(|(p, _)| p)
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.value.as_str())
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text { .. } => None,
        })
    }

    /// First child element with the given local name.
    pub fn child(&self, local: &str) -> Option<&Element> {
        self.elements().find(|e| e.local_name() == local)
    }

    /// Concatenated text of all descendants.
    pub fn text(&self) -> String {
        let mut out = String::new();
        self.collect_text(&mut out);
        out
    }

    fn collect_text(&self, out: &mut String) {
        for child in &self.children {
            match child {
                Node::Text { text, .. } => out.push_str(text),
                Node::Element(e) => e.collect_text(out),
            }
        }
    }

    /// Non-whitespace text directly inside this element, with its offset.
    pub fn stray_text(&self) -> Option<usize> {
        self.children.iter().find_map(|n| match n {
            Node::Text { text, span } if !text.trim().is_empty() => Some(span.start),
            _ => None,
        })
    }

    /// Namespace declarations made on this element as (prefix, uri); the
    /// default namespace has an empty prefix.
    pub fn namespace_decls(&self) -> impl Iterator<Item = (&str, &str)> {
        self.attrs.iter().filter_map(|a| {
            if a.name == "xmlns" {
                Some(("", a.value.as_str()))
            } else {
                a.name
                    .strip_prefix("xmlns:")
                    .map(|p| (p, a.value.as_str()))
            }
        })
    }
}

/// In-scope namespace bindings while walking a tree.
#[derive(Debug, Clone, Default)]
pub struct NamespaceScope {
    bindings: Vec<(String, String)>,
}

impl NamespaceScope {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scope for the children of `element`.
    pub fn enter(&self, element: &Element) -> Self {
        let mut next = self.clone();
        for (p, uri) in element.namespace_decls() {
            next.bindings.push((p.to_owned(), uri.to_owned()));
        }
        next
    }

    pub fn resolve(&self, prefix: &str) -> Option<&str> {
        if prefix == "xml" {
            return Some("http://www.w3.org/XML/1998/namespace");
        }
        self.bindings
            .iter()
            .rev()
            .find(|(p, _)| p == prefix)
            .map(|(_, u)| u.as_str())
            .filter(|u| !u.is_empty() || !prefix.is_empty())
    }

    /// Namespace of `element`, evaluated in the scope that includes the
    /// element's own declarations.
    pub fn element_namespace(&self, element: &Element) -> Option<String> {
        let inner = self.enter(element);
        inner
            .resolve(element.prefix().unwrap_or(""))
            .map(str::to_owned)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Document {
    pub root: Option<Element>,
    pub violations: Vec<Violation>,
}

/// Builds a best-effort tree. Mismatched or missing end tags are repaired
/// structurally (and reported) so that the rest of the document stays usable.
pub fn parse_document(src: &[u8]) -> Document {
    let (tokens, mut violations) = tokenize(src);
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;

    for token in tokens {
        match token {
            Token::Text(span) => {
                let text = decode_text(src, span.clone(), &mut violations);
                push_text(&mut stack, &mut violations, text, span);
            }
            Token::CData { span, content } => {
                let text = String::from_utf8_lossy(&src[content]).into_owned();
                push_text(&mut stack, &mut violations, text, span);
            }
            Token::Comment(_) | Token::Pi(_) | Token::Doctype(_) => {}
            Token::StartTag(tag) => {
                let element = open_element(src, &tag, &mut violations);
                if stack.is_empty() && root.is_some() {
                    violations.push(Violation::new(
                        tag.span.start,
                        ViolationClass::Markup,
                        "element after the root element",
                    ));
                }
                if tag.self_closing {
                    attach(&mut stack, &mut root, element);
                } else {
                    stack.push(element);
                }
            }
            Token::EndTag { name, span } => {
                let name = String::from_utf8_lossy(&src[name]).into_owned();
                match stack.iter().rposition(|e| e.name == name) {
                    Some(idx) => {
                        while stack.len() > idx + 1 {
                            let mut unclosed = stack.pop().expect("non-empty");
                            violations.push(Violation::new(
                                unclosed.span.start,
                                ViolationClass::Markup,
                                format!("element <{}> is not closed", unclosed.name),
                            ));
                            unclosed.span.end = span.start;
                            unclosed.content.end = span.start;
                            attach(&mut stack, &mut root, unclosed);
                        }
                        let mut done = stack.pop().expect("matched element");
                        done.content.end = span.start;
                        done.span.end = span.end;
                        attach(&mut stack, &mut root, done);
                    }
                    None => violations.push(Violation::new(
                        span.start,
                        ViolationClass::Markup,
                        format!("unexpected end tag </{name}>"),
                    )),
                }
            }
        }
    }
    while let Some(mut unclosed) = stack.pop() {
        violations.push(Violation::new(
            unclosed.span.start,
            ViolationClass::Markup,
            format!("element <{}> is not closed", unclosed.name),
        ));
        unclosed.span.end = src.len();
        unclosed.content.end = src.len();
        attach(&mut stack, &mut root, unclosed);
    }
    violations.sort_by_key(|v| v.offset);
    Document { root, violations }
}

fn open_element(src: &[u8], tag: &Tag, violations: &mut Vec<Violation>) -> Element {
    let mut attrs: Vec<Attribute> = Vec::with_capacity(tag.attrs.len());
    for raw in &tag.attrs {
        let name = String::from_utf8_lossy(&src[raw.name.clone()]).into_owned();
        if attrs.iter().any(|a| a.name == name) {
            violations.push(Violation::new(
                raw.name.start,
                ViolationClass::Markup,
                format!("duplicate attribute {name:?}"),
            ));
            continue;
        }
        let value = decode_attr(src, raw.value.clone(), violations);
        attrs.push(Attribute {
            name,
            value,
            offset: raw.name.start,
        });
    }
    Element {
        name: String::from_utf8_lossy(&src[tag.name.clone()]).into_owned(),
        attrs,
        span: tag.span.start..tag.span.end,
        content: tag.span.end..tag.span.end,
        children: Vec::new(),
    }
}

fn attach(stack: &mut [Element], root: &mut Option<Element>, element: Element) {
    match stack.last_mut() {
        Some(parent) => parent.children.push(Node::Element(element)),
        None => {
            if root.is_none() {
                *root = Some(element);
            }
        }
    }
}

fn push_text(
    stack: &mut [Element],
    violations: &mut Vec<Violation>,
    text: String,
    span: Range<usize>,
) {
    match stack.last_mut() {
        Some(parent) => parent.children.push(Node::Text { text, span }),
        None => {
            if !text.trim().is_empty() {
                violations.push(Violation::new(
                    span.start,
                    ViolationClass::Markup,
                    "text outside the root element",
                ));
            }
        }
    }
}

fn decode_text(src: &[u8], span: Range<usize>, violations: &mut Vec<Violation>) -> String {
    decode_chars(src, span, violations, false)
}

fn decode_attr(src: &[u8], span: Range<usize>, violations: &mut Vec<Violation>) -> String {
    decode_chars(src, span, violations, true)
}

fn decode_chars(
    src: &[u8],
    span: Range<usize>,
    violations: &mut Vec<Violation>,
    attribute: bool,
) -> String {
    let bytes = &src[span.clone()];
    let mut out = String::with_capacity(bytes.len());
    let mut plain_start = 0;
    let mut i = 0;
    let flush = |out: &mut String, from: usize, to: usize| {
        out.push_str(&String::from_utf8_lossy(&bytes[from..to]));
    };
    while i < bytes.len() {
        match bytes[i] {
            b'&' => {
                flush(&mut out, plain_start, i);
                match reference_len(&bytes[i..]) {
                    Some(n) => {
                        out.push(decode_reference(&bytes[i..i + n]));
                        i += n;
                    }
                    None => {
                        violations.push(Violation::new(
                            span.start + i,
                            ViolationClass::Entity,
                            "'&' does not start a valid reference",
                        ));
                        out.push('&');
                        i += 1;
                    }
                }
                plain_start = i;
            }
            b'<' if !attribute => {
                violations.push(Violation::new(
                    span.start + i,
                    ViolationClass::Entity,
                    "unescaped '<' in character data",
                ));
                i += 1;
            }
            b if b < 0x20 && !matches!(b, b'\t' | b'\n' | b'\r') => {
                violations.push(Violation::new(
                    span.start + i,
                    ViolationClass::Utf8,
                    format!("control character 0x{b:02X} is not allowed in XML"),
                ));
                i += 1;
            }
            _ => i += 1,
        }
    }
    flush(&mut out, plain_start, bytes.len());
    if attribute {
        out = out
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_nested_tree_with_spans() {
        let src = r#"<a xmlns="urn:x" xmlns:p="urn:p"><p:b k="v &amp; w">t</p:b><c/></a>"#;
        let doc = parse_document(src.as_bytes());
        assert!(doc.violations.is_empty(), "{:?}", doc.violations);
        let root = doc.root.unwrap();
        assert_eq!(root.span, 0..src.len());
        let b = root.child("b").unwrap();
        assert_eq!(b.attr("k"), Some("v & w"));
        assert_eq!(&src[b.span.clone()], r#"<p:b k="v &amp; w">t</p:b>"#);
        assert_eq!(&src[b.content.clone()], "t");
        let scope = NamespaceScope::new().enter(&root);
        assert_eq!(scope.element_namespace(b).as_deref(), Some("urn:p"));
        assert_eq!(
            scope.element_namespace(root.child("c").unwrap()).as_deref(),
            Some("urn:x")
        );
    }

    #[test]
    fn bare_ampersand_reported_at_offset() {
        let src = "<t>A & B</t>";
        let doc = parse_document(src.as_bytes());
        assert_eq!(doc.violations.len(), 1);
        assert_eq!(doc.violations[0].offset, 5);
        assert_eq!(doc.violations[0].class, ViolationClass::Entity);
        assert_eq!(doc.root.unwrap().text(), "A & B");
    }

    #[test]
    fn missing_end_tag_recovers() {
        let src = "<a><b><c>x</c></a>";
        let doc = parse_document(src.as_bytes());
        assert_eq!(doc.violations.len(), 1);
        assert_eq!(doc.violations[0].offset, 3);
        let root = doc.root.unwrap();
        assert_eq!(root.child("b").unwrap().child("c").unwrap().text(), "x");
    }

    #[test]
    fn stray_end_tag_and_unclosed_root() {
        let doc = parse_document(b"<a></b>");
        let offsets: Vec<usize> = doc.violations.iter().map(|v| v.offset).collect();
        assert_eq!(offsets, vec![0, 3]);
    }

    #[test]
    fn no_root() {
        let doc = parse_document(b"just text");
        assert!(doc.root.is_none());
        assert_eq!(doc.violations.len(), 1);
    }
}
