//! Byte-level UTF-8 validation that reports every ill-formed subsequence.
//!
//! Ill-formed input is split into maximal subparts, so one replacement
//! character stands for each subpart. This is the same policy WHATWG
//! decoders use.

use std::ops::Range;

pub const REPLACEMENT: &str = "\u{FFFD}";

/// Spans of every ill-formed subsequence in `bytes`, in order.
pub fn invalid_sequences(bytes: &[u8]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b < 0x80 {
            i += 1;
            continue;
        }
        let (len, second): (usize, Range<u8>) = match b {
            0xC2..=0xDF => (2, 0x80..0xC0),
            0xE0 => (3, 0xA0..0xC0),
            0xE1..=0xEC | 0xEE..=0xEF => (3, 0x80..0xC0),
            0xED => (3, 0x80..0xA0),
            0xF0 => (4, 0x90..0xC0),
            0xF1..=0xF3 => (4, 0x80..0xC0),
            0xF4 => (4, 0x80..0x90),
            _ => {
                out.push(i..i + 1);
                i += 1;
                continue;
            }
        };
        let mut consumed = 1;
        while consumed < len {
            let Some(&next) = bytes.get(i + consumed) else {
                break;
            };
            let ok = if consumed == 1 {
                second.contains(&next)
            } else {
                (0x80..0xC0).contains(&next)
            };
            if !ok {
                break;
            }
            consumed += 1;
        }
        if consumed < len {
            out.push(i..i + consumed);
        }
        i += consumed;
    }
    out
}

/// Decodes leniently, returning the text plus the invalid spans.
pub fn decode_lossy(bytes: &[u8]) -> (String, Vec<Range<usize>>) {
    let bad = invalid_sequences(bytes);
    if bad.is_empty() {
        return (
            String::from_utf8(bytes.to_vec()).expect("validated"),
            bad,
        );
    }
    let mut out = String::with_capacity(bytes.len() + bad.len() * 2);
    let mut pos = 0;
    for span in &bad {
        out.push_str(std::str::from_utf8(&bytes[pos..span.start]).expect("valid between spans"));
        out.push_str(REPLACEMENT);
        pos = span.end;
    }
    out.push_str(std::str::from_utf8(&bytes[pos..]).expect("valid tail"));
    (out, bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn valid_text_has_no_spans() {
        assert!(invalid_sequences("héllo wörld €𝄞".as_bytes()).is_empty());
    }

    #[test]
    fn lone_continuation_byte() {
        assert_eq!(invalid_sequences(b"ab\xBFcd"), vec![2..3]);
    }

    #[test]
    fn truncated_three_byte_sequence_is_one_span() {
        assert_eq!(invalid_sequences(b"ab\xE2\x82"), vec![2..4]);
    }

    #[test]
    fn surrogates_and_overlongs() {
        // ED A0 80 encodes a surrogate: each byte is its own subpart.
        assert_eq!(invalid_sequences(b"\xED\xA0\x80"), vec![0..1, 1..2, 2..3]);
        assert_eq!(invalid_sequences(b"\xC0\xAF"), vec![0..1, 1..2]);
        assert_eq!(invalid_sequences(b"\xF4\x90\x80\x80"), vec![0..1, 1..2, 2..3, 3..4]);
    }

    proptest! {
        // std's lossy decoder applies the same maximal-subpart policy and is
        // implemented independently.
        #[test]
        fn agrees_with_std_lossy(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let (ours, bad) = decode_lossy(&bytes);
            prop_assert_eq!(&ours, &String::from_utf8_lossy(&bytes).into_owned());
            prop_assert_eq!(bad.is_empty(), std::str::from_utf8(&bytes).is_ok());
        }
    }
}
