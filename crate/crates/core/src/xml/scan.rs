use std::ops::Range;

use crate::violation::{Violation, ViolationClass};

/// One lexical unit. All positions are byte ranges into the scanned input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    /// Character data, possibly containing unescaped `&` or `<`.
    Text(Range<usize>),
    StartTag(Tag),
    EndTag {
        name: Range<usize>,
        span: Range<usize>,
    },
    Comment(Range<usize>),
    CData {
        span: Range<usize>,
        content: Range<usize>,
    },
    /// Processing instruction or XML declaration.
    Pi(Range<usize>),
    Doctype(Range<usize>),
}

impl Token {
    pub fn span(&self) -> Range<usize> {
        match self {
            Token::Text(s) | Token::Comment(s) | Token::Pi(s) | Token::Doctype(s) => s.clone(),
            Token::StartTag(t) => t.span.clone(),
            Token::EndTag { span, .. } | Token::CData { span, .. } => span.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    pub name: Range<usize>,
    pub attrs: Vec<RawAttr>,
    pub self_closing: bool,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAttr {
    pub name: Range<usize>,
    /// Raw value, excluding quotes. Empty when the value is missing.
    pub value: Range<usize>,
    /// `None` for unquoted (or missing) values.
    pub quote: Option<u8>,
    pub has_equals: bool,
}

/// Whether `<` at `src[i]` opens markup: it must be followed by a name-start
/// character, `/`, `!` or `?`.
pub fn opens_markup(src: &[u8], i: usize) -> bool {
    match src.get(i + 1) {
        Some(&b) => b == b'/' || b == b'!' || b == b'?' || is_name_start(b),
        None => false,
    }
}

pub(crate) fn is_name_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b == b':' || b >= 0x80
}

fn is_name_char(b: u8) -> bool {
    is_name_start(b) || b.is_ascii_digit() || b == b'-' || b == b'.'
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r')
}

/// Splits `src` into tokens, recording malformed constructs as violations.
pub fn tokenize(src: &[u8]) -> (Vec<Token>, Vec<Violation>) {
    let mut scanner = Scanner {
        src,
        pos: 0,
        tokens: Vec::new(),
        violations: Vec::new(),
    };
    scanner.run();
    (scanner.tokens, scanner.violations)
}

struct Scanner<'a> {
    src: &'a [u8],
    pos: usize,
    tokens: Vec<Token>,
    violations: Vec<Violation>,
}

impl Scanner<'_> {
    fn markup(&mut self, offset: usize, message: impl Into<String>) {
        self.violations
            .push(Violation::new(offset, ViolationClass::Markup, message));
    }

    fn find(&self, from: usize, needle: &[u8]) -> Option<usize> {
        self.src
            .get(from..)?
            .windows(needle.len())
            .position(|w| w == needle)
            .map(|p| from + p)
    }

    fn run(&mut self) {
        while self.pos < self.src.len() {
            if self.src[self.pos] == b'<' && opens_markup(self.src, self.pos) {
                self.markup_token();
            } else {
                self.text();
            }
        }
    }

    fn text(&mut self) {
        let start = self.pos;
        let mut i = self.pos;
        while i < self.src.len() {
            if self.src[i] == b'<' && opens_markup(self.src, i) {
                break;
            }
            i += 1;
        }
        self.pos = i;
        self.tokens.push(Token::Text(start..i));
    }

    fn markup_token(&mut self) {
        let start = self.pos;
        let rest = &self.src[start..];
        if rest.starts_with(b"<!--") {
            let end = match self.find(start + 4, b"-->") {
                Some(e) => e + 3,
                None => {
                    self.markup(start, "unterminated comment");
                    self.src.len()
                }
            };
            self.pos = end;
            self.tokens.push(Token::Comment(start..end));
        } else if rest.starts_with(b"<![CDATA[") {
            let (content_end, end) = match self.find(start + 9, b"]]>") {
                Some(e) => (e, e + 3),
                None => {
                    self.markup(start, "unterminated CDATA section");
                    (self.src.len(), self.src.len())
                }
            };
            self.pos = end;
            self.tokens.push(Token::CData {
                span: start..end,
                content: start + 9..content_end,
            });
        } else if rest.starts_with(b"<!DOCTYPE") {
            let end = self.doctype_end(start);
            self.pos = end;
            self.tokens.push(Token::Doctype(start..end));
        } else if rest.starts_with(b"<!") {
            self.markup(start, "unrecognised markup declaration");
            let end = self.find(start, b">").map_or(self.src.len(), |e| e + 1);
            self.pos = end;
            self.tokens.push(Token::Comment(start..end));
        } else if rest.starts_with(b"<?") {
            let end = match self.find(start + 2, b"?>") {
                Some(e) => e + 2,
                None => {
                    self.markup(start, "unterminated processing instruction");
                    self.src.len()
                }
            };
            self.pos = end;
            self.tokens.push(Token::Pi(start..end));
        } else if rest.starts_with(b"</") {
            self.end_tag();
        } else {
            self.start_tag();
        }
    }

    fn doctype_end(&mut self, start: usize) -> usize {
        let mut depth = 0usize;
        let mut quote: Option<u8> = None;
        for i in start + 9..self.src.len() {
            let b = self.src[i];
            match quote {
                Some(q) if b == q => quote = None,
                Some(_) => {}
                None => match b {
                    b'"' | b'\'' => quote = Some(b),
                    b'[' => depth += 1,
                    b']' => depth = depth.saturating_sub(1),
                    b'>' if depth == 0 => return i + 1,
                    _ => {}
                },
            }
        }
        self.markup(start, "unterminated DOCTYPE");
        self.src.len()
    }

    fn name(&self, from: usize) -> usize {
        let mut i = from;
        while i < self.src.len() && is_name_char(self.src[i]) {
            i += 1;
        }
        i
    }

    fn skip_space(&self, from: usize) -> usize {
        let mut i = from;
        while i < self.src.len() && is_space(self.src[i]) {
            i += 1;
        }
        i
    }

    fn end_tag(&mut self) {
        let start = self.pos;
        let name_end = self.name(start + 2);
        let name = start + 2..name_end;
        if name.is_empty() {
            self.markup(start, "end tag without a name");
        }
        let mut i = self.skip_space(name_end);
        if self.src.get(i) == Some(&b'>') {
            i += 1;
        } else {
            self.markup(i.min(self.src.len()), "malformed end tag");
            while i < self.src.len() && self.src[i] != b'>' && self.src[i] != b'<' {
                i += 1;
            }
            if self.src.get(i) == Some(&b'>') {
                i += 1;
            }
        }
        self.pos = i;
        self.tokens.push(Token::EndTag {
            name,
            span: start..i,
        });
    }

    fn start_tag(&mut self) {
        let start = self.pos;
        let name_end = self.name(start + 1);
        let mut tag = Tag {
            name: start + 1..name_end,
            attrs: Vec::new(),
            self_closing: false,
            span: start..start,
        };
        let mut i = name_end;
        loop {
            let before = i;
            i = self.skip_space(i);
            let spaced = i > before;
            match self.src.get(i) {
                None => {
                    self.markup(start, "unterminated start tag");
                    break;
                }
                Some(b'>') => {
                    i += 1;
                    break;
                }
                Some(b'/') if self.src.get(i + 1) == Some(&b'>') => {
                    tag.self_closing = true;
                    i += 2;
                    break;
                }
                Some(b'<') => {
                    self.markup(start, "unterminated start tag");
                    break;
                }
                Some(_) => {
                    if !spaced {
                        self.markup(i, "missing whitespace before attribute");
                    }
                    let (attr, next) = self.attribute(i);
                    if next == i {
                        // Not even one byte consumed: skip the stray byte.
                        self.markup(i, "unexpected character in tag");
                        i += 1;
                    } else {
                        tag.attrs.push(attr);
                        i = next;
                    }
                }
            }
        }
        tag.span = start..i;
        self.pos = i;
        self.tokens.push(Token::StartTag(tag));
    }

    fn attribute(&mut self, from: usize) -> (RawAttr, usize) {
        let mut i = from;
        while i < self.src.len() {
            let b = self.src[i];
            if is_space(b) || matches!(b, b'=' | b'>' | b'<' | b'"' | b'\'') {
                break;
            }
            if b == b'/' && self.src.get(i + 1) == Some(&b'>') {
                break;
            }
            i += 1;
        }
        let name = from..i;
        let mut attr = RawAttr {
            name: name.clone(),
            value: i..i,
            quote: None,
            has_equals: false,
        };
        if name.is_empty() {
            return (attr, i);
        }
        let j = self.skip_space(i);
        if self.src.get(j) != Some(&b'=') {
            self.markup(from, "attribute without value");
            return (attr, i);
        }
        attr.has_equals = true;
        let j = self.skip_space(j + 1);
        match self.src.get(j) {
            Some(&q @ (b'"' | b'\'')) => {
                let value_start = j + 1;
                let mut k = value_start;
                while k < self.src.len() && self.src[k] != q {
                    k += 1;
                }
                attr.quote = Some(q);
                attr.value = value_start..k;
                if k >= self.src.len() {
                    self.markup(j, "unterminated attribute value");
                    return (attr, k);
                }
                if let Some(p) = self.src[value_start..k].iter().position(|&b| b == b'<') {
                    self.markup(value_start + p, "'<' in attribute value");
                }
                (attr, k + 1)
            }
            None | Some(b'>') => {
                self.markup(from, "attribute without value");
                attr.value = j..j;
                (attr, j)
            }
            Some(_) => {
                let mut k = j;
                while k < self.src.len() {
                    let b = self.src[k];
                    if is_space(b) || b == b'>' || b == b'<' {
                        break;
                    }
                    if b == b'/' && self.src.get(k + 1) == Some(&b'>') {
                        break;
                    }
                    k += 1;
                }
                self.markup(from, "unquoted attribute value");
                attr.value = j..k;
                (attr, k)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(src: &str) -> Vec<(usize, String)> {
        tokenize(src.as_bytes())
            .1
            .into_iter()
            .map(|v| (v.offset, v.message))
            .collect()
    }

    #[test]
    fn clean_document_has_no_violations() {
        let src = r#"<?xml version="1.0"?><!-- c --><a x="1" y='2'><b/>t &amp; <![CDATA[<x>]]></a>"#;
        let (tokens, violations) = tokenize(src.as_bytes());
        assert!(violations.is_empty(), "{violations:?}");
        assert_eq!(tokens.len(), 7);
    }

    #[test]
    fn bare_less_than_stays_in_text() {
        let src = "<t>x < 5</t>";
        let (tokens, violations) = tokenize(src.as_bytes());
        assert!(violations.is_empty());
        assert_eq!(tokens[1], Token::Text(3..8));
    }

    #[test]
    fn unquoted_attribute_is_flagged_with_value_span() {
        let src = "<record status=deleted>";
        let (tokens, v) = tokenize(src.as_bytes());
        assert_eq!(v.len(), 1);
        let Token::StartTag(tag) = &tokens[0] else { panic!() };
        assert_eq!(&src[tag.attrs[0].value.clone()], "deleted");
        assert_eq!(tag.attrs[0].quote, None);
    }

    #[test]
    fn unquoted_value_before_self_close() {
        let src = "<a href=x/>";
        let (tokens, _) = tokenize(src.as_bytes());
        let Token::StartTag(tag) = &tokens[0] else { panic!() };
        assert!(tag.self_closing);
        assert_eq!(&src[tag.attrs[0].value.clone()], "x");
    }

    #[test]
    fn malformed_constructs() {
        assert_eq!(classes("<a b>").len(), 1);
        assert_eq!(classes("<a b=\"1\"c=\"2\">")[0].1, "missing whitespace before attribute");
        assert_eq!(classes("<a><!-- never closed")[0].0, 3);
        assert_eq!(classes("<a x=\"1").len(), 2);
        assert_eq!(classes("</a junk>")[0].1, "malformed end tag");
    }
}
