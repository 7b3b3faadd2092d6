//! URI syntax checks for record identifiers.

/// Outcome of [`validate_identifier`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifierCheck {
    pub valid: bool,
    /// Whether the identifier has the `oai:{namespace}:{local}` shape.
    pub oai_shape: bool,
    pub reason: Option<String>,
}

/// Checks `id` against the generic URI grammar (scheme ":" followed by
/// unreserved, reserved or percent-encoded characters).
pub fn validate_identifier(id: &str) -> IdentifierCheck {
    match uri_syntax_error(id) {
        Some(reason) => IdentifierCheck {
            valid: false,
            oai_shape: false,
            reason: Some(reason),
        },
        None => IdentifierCheck {
            valid: true,
            oai_shape: is_oai_identifier(id),
            reason: None,
        },
    }
}

pub fn is_valid_identifier(id: &str) -> bool {
    uri_syntax_error(id).is_none()
}

fn uri_syntax_error(id: &str) -> Option<String> {
    if id.is_empty() {
        return Some("empty identifier".into());
    }
    let Some(colon) = id.find(':') else {
        return Some("missing scheme".into());
    };
    let scheme = &id[..colon];
    let mut chars = scheme.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return Some("scheme must start with a letter".into()),
    }
    if let Some(c) = chars.find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))) {
        return Some(format!("illegal character {c:?} in scheme"));
    }
    let rest = id[colon + 1..].as_bytes();
    let mut i = 0;
    while i < rest.len() {
        let b = rest[i];
        if b == b'%' {
            let hex = rest.get(i + 1..i + 3);
            if !hex.is_some_and(|h| h.iter().all(u8::is_ascii_hexdigit)) {
                return Some(format!("malformed percent-encoding at byte {}", colon + 1 + i));
            }
            i += 3;
            continue;
        }
        if !is_uri_char(b) {
            let shown = if b.is_ascii() {
                format!("{:?}", b as char)
            } else {
                format!("0x{b:02X}")
            };
            return Some(format!("illegal character {shown} at byte {}", colon + 1 + i));
        }
        i += 1;
    }
    None
}

fn is_uri_char(b: u8) -> bool {
    b.is_ascii_alphanumeric()
        || matches!(
            b,
            b'-' | b'.'
                | b'_'
                | b'~'
                | b':'
                | b'/'
                | b'?'
                | b'#'
                | b'['
                | b']'
                | b'@'
                | b'!'
                | b'$'
                | b'&'
                | b'\''
                | b'('
                | b')'
                | b'*'
                | b'+'
                | b','
                | b';'
                | b'='
        )
}

/// `oai:` namespace-identifier `:` local-identifier, where the namespace is a
/// dotted domain-like name.
pub fn is_oai_identifier(id: &str) -> bool {
    let Some(rest) = id.strip_prefix("oai:") else {
        return false;
    };
    let Some((namespace, local)) = rest.split_once(':') else {
        return false;
    };
    let labels: Vec<&str> = namespace.split('.').collect();
    let labels_ok = labels.len() >= 2
        && labels.iter().all(|label| {
            let mut cs = label.chars();
            cs.next().is_some_and(|c| c.is_ascii_alphabetic())
                && cs.all(|c| c.is_ascii_alphanumeric() || c == '-')
        });
    labels_ok
        && !local.is_empty()
        && local.bytes().all(|b| {
            b.is_ascii_alphanumeric()
                || b"-_.!~*'();/?:@&=+$,%".contains(&b)
        })
}
