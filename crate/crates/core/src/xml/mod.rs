//! A small error-tolerant XML layer.
//!
//! The tokenizer never fails: malformed constructs are reported as
//! [`Violation`](crate::violation::Violation)s with byte offsets and scanning
//! continues. Everything works on byte ranges into the original input so
//! callers can splice the source without re-serializing it.

pub mod escape;
pub mod scan;
pub mod tree;

pub use escape::{escape_attr, escape_text, reference_len};
pub use scan::{tokenize, RawAttr, Tag, Token};
pub use tree::{parse_document, Attribute, Document, Element, NamespaceScope, Node};
