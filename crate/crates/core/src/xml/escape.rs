/// Length of a well-formed character or predefined entity reference at the
/// start of `bytes` (which must begin with `&`).
///
/// Recognised: `&amp; &lt; &gt; &quot; &apos;`, `&#N;` and `&#xH;` where the
/// code point is a legal XML character.
pub fn reference_len(bytes: &[u8]) -> Option<usize> {
    debug_assert_eq!(bytes.first(), Some(&b'&'));
    for name in [&b"amp;"[..], b"lt;", b"gt;", b"quot;", b"apos;"] {
        if bytes[1..].starts_with(name) {
            return Some(1 + name.len());
        }
    }
    let rest = bytes.get(1..)?;
    if rest.first() != Some(&b'#') {
        return None;
    }
    let (digits, radix, skip) = if rest.get(1) == Some(&b'x') {
        (&rest[2..], 16, 3)
    } else {
        (&rest[1..], 10, 2)
    };
    let n = digits
        .iter()
        .take_while(|b| if radix == 16 { b.is_ascii_hexdigit() } else { b.is_ascii_digit() })
        .count();
    if n == 0 || n > 8 || digits.get(n) != Some(&b';') {
        return None;
    }
    let text = std::str::from_utf8(&digits[..n]).ok()?;
    let cp = u32::from_str_radix(text, radix).ok()?;
    let c = char::from_u32(cp)?;
    is_xml_char(c).then_some(skip + n + 1)
}

/// Decodes a reference validated by [`reference_len`].
pub(crate) fn decode_reference(reference: &[u8]) -> char {
    match reference {
        b"&amp;" => '&',
        b"&lt;" => '<',
        b"&gt;" => '>',
        b"&quot;" => '"',
        b"&apos;" => '\'',
        _ => {
            let body = &reference[2..reference.len() - 1];
            let (digits, radix) = match body.strip_prefix(b"x") {
                Some(hex) => (hex, 16),
                None => (body, 10),
            };
            let cp = u32::from_str_radix(std::str::from_utf8(digits).unwrap_or("0"), radix)
                .unwrap_or(0xFFFD);
            char::from_u32(cp).unwrap_or('\u{FFFD}')
        }
    }
}

pub fn is_xml_char(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..)
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\t' => out.push_str("&#9;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recognised_references() {
        assert_eq!(reference_len(b"&amp; B"), Some(5));
        assert_eq!(reference_len(b"&apos;"), Some(6));
        assert_eq!(reference_len(b"&#38;x"), Some(5));
        assert_eq!(reference_len(b"&#x26;"), Some(6));
        assert_eq!(reference_len(b"&#xFFFD;"), Some(8));
    }

    #[test]
    fn rejected_references() {
        assert_eq!(reference_len(b"& B"), None);
        assert_eq!(reference_len(b"&amp"), None);
        assert_eq!(reference_len(b"&nbsp;"), None);
        assert_eq!(reference_len(b"&#;"), None);
        assert_eq!(reference_len(b"&#0;"), None);
        assert_eq!(reference_len(b"&#xD800;"), None);
        assert_eq!(reference_len(b"&#X26;"), None);
    }

    #[test]
    fn decodes() {
        assert_eq!(decode_reference(b"&#x26;"), '&');
        assert_eq!(decode_reference(b"&#233;"), 'é');
        assert_eq!(decode_reference(b"&quot;"), '"');
    }
}
