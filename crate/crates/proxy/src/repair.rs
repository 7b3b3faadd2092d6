//! In-flight response repair: UTF-8, then entities, then attribute quoting,
//! then removal of records that still fail validation.

use std::ops::Range;

use oairelay_core::parse::{parse_response, ParsedResponse};
use oairelay_core::utf8::invalid_sequences;
use oairelay_core::xml::{reference_len, tokenize, Token};
use oairelay_core::Violation;
use serde::{Deserialize, Serialize};

const REPLACEMENT: &[u8] = "\u{FFFD}".as_bytes();

/// One rewrite. `offset` is a byte position in the upstream body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fix {
    pub offset: usize,
    pub original: Vec<u8>,
    pub replacement: String,
}

/// A splice applied by one stage, in that stage's input coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Edit {
    at: usize,
    removed: usize,
    inserted: usize,
}

/// Output of a single repair stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutput {
    pub body: Vec<u8>,
    /// Offsets are positions in the stage's input.
    pub fixes: Vec<Fix>,
}

fn apply(input: &[u8], edits: &[(Range<usize>, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len() + edits.len() * 4);
    let mut last = 0;
    for (range, bytes) in edits {
        out.extend_from_slice(&input[last..range.start]);
        out.extend_from_slice(bytes);
        last = range.end;
    }
    out.extend_from_slice(&input[last..]);
    out
}

fn stage(input: &[u8], mut edits: Vec<(Range<usize>, Vec<u8>)>) -> StageOutput {
    edits.sort_by_key(|(r, _)| r.start);
    let fixes = edits
        .iter()
        .map(|(r, bytes)| Fix {
            offset: r.start,
            original: input[r.clone()].to_vec(),
            replacement: String::from_utf8_lossy(bytes).into_owned(),
        })
        .collect();
    StageOutput {
        body: apply(input, &edits),
        fixes,
    }
}

/// Replaces every invalid UTF-8 sequence, and every C0 control character
/// XML forbids, with U+FFFD.
pub fn repair_utf8(body: &[u8]) -> StageOutput {
    let mut edits: Vec<(Range<usize>, Vec<u8>)> = invalid_sequences(body)
        .into_iter()
        .map(|r| (r, REPLACEMENT.to_vec()))
        .collect();
    for (i, &b) in body.iter().enumerate() {
        if b < 0x20 && !matches!(b, b'\t' | b'\n' | b'\r') {
            edits.push((i..i + 1, REPLACEMENT.to_vec()));
        }
    }
    stage(body, edits)
}

/// Escapes `&` that does not begin a recognised reference and `<` that
/// cannot open markup, in character data and attribute values.
pub fn repair_entities(body: &[u8]) -> StageOutput {
    let (tokens, _) = tokenize(body);
    let mut edits = Vec::new();
    let mut scan = |range: Range<usize>| {
        let mut i = range.start;
        while i < range.end {
            match body[i] {
                b'&' => match reference_len(&body[i..range.end]) {
                    Some(n) => {
                        i += n;
                        continue;
                    }
                    None => edits.push((i..i + 1, b"&amp;".to_vec())),
                },
                b'<' => edits.push((i..i + 1, b"&lt;".to_vec())),
                _ => {}
            }
            i += 1;
        }
    };
    for token in &tokens {
        match token {
            Token::Text(range) => scan(range.clone()),
            Token::StartTag(tag) => {
                for attr in &tag.attrs {
                    if attr.has_equals {
                        scan(attr.value.clone());
                    }
                }
            }
            _ => {}
        }
    }
    stage(body, edits)
}

/// Quotes unquoted attribute values. Nothing else about markup is touched.
pub fn repair_markup(body: &[u8]) -> StageOutput {
    let (tokens, _) = tokenize(body);
    let mut edits = Vec::new();
    for token in &tokens {
        let Token::StartTag(tag) = token else { continue };
        for attr in &tag.attrs {
            if attr.quote.is_some() || !attr.has_equals || attr.value.is_empty() {
                continue;
            }
            let value = &body[attr.value.clone()];
            let q = if value.contains(&b'"') { b'\'' } else { b'"' };
            if value.contains(&q) {
                continue;
            }
            let mut quoted = Vec::with_capacity(value.len() + 2);
            quoted.push(q);
            quoted.extend_from_slice(value);
            quoted.push(q);
            edits.push((attr.value.clone(), quoted));
        }
    }
    stage(body, edits)
}

/// Byte-position mapping through a sequence of stages.
#[derive(Debug, Default, Clone)]
struct OffsetMap {
    stages: Vec<Vec<Edit>>,
}

impl OffsetMap {
    fn push(&mut self, fixes: &[Fix]) {
        self.stages.push(
            fixes
                .iter()
                .map(|f| Edit {
                    at: f.offset,
                    removed: f.original.len(),
                    inserted: f.replacement.len(),
                })
                .collect(),
        );
    }

    /// Maps an input position of stage `level` back to the upstream body.
    fn to_upstream(&self, level: usize, mut pos: usize) -> usize {
        for edits in self.stages[..level].iter().rev() {
            let mut delta: isize = 0;
            for e in edits {
                let out_at = (e.at as isize + delta) as usize;
                if out_at + e.inserted <= pos {
                    delta += e.inserted as isize - e.removed as isize;
                } else if out_at <= pos {
                    pos = out_at;
                    break;
                } else {
                    break;
                }
            }
            pos = (pos as isize - delta) as usize;
        }
        pos
    }

    /// Maps an input position of stage `level` forward to the final body.
    fn to_final(&self, level: usize, mut pos: usize) -> usize {
        for edits in &self.stages[level..] {
            let shift: isize = edits
                .iter()
                .take_while(|e| e.at < pos)
                .map(|e| e.inserted as isize - e.removed as isize)
                .sum();
            pos = (pos as isize + shift) as usize;
        }
        pos
    }
}

/// Result of running the whole pipeline over one upstream body.
#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub body: Vec<u8>,
    pub utf8_fixes: Vec<Fix>,
    pub entity_fixes: Vec<Fix>,
    pub markup_fixes: Vec<Fix>,
    /// Identifiers of removed records whose header could be read.
    pub dropped_records: Vec<String>,
    /// Number of removed units, including unidentifiable ones.
    pub dropped_count: usize,
    /// Identifiers of emitted records whose bytes were rewritten.
    pub repaired_records: Vec<String>,
    /// Violations left in the emitted body; non-empty only when rejected.
    pub residual_violations: Vec<Violation>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Verdict {
    /// No violations; the upstream bytes are emitted unchanged.
    Clean,
    Repaired,
    /// The envelope could not be made valid.
    Rejected,
}

impl RepairOutcome {
    pub fn fix_count(&self) -> usize {
        self.utf8_fixes.len() + self.entity_fixes.len() + self.markup_fixes.len()
    }
}

/// Removes every unit whose span contains one of `violations`. Fails with
/// the offending violations when any lies outside all units.
pub fn drop_bad_records(
    body: &[u8],
    parsed: &ParsedResponse,
) -> Result<(Vec<u8>, Vec<usize>), Vec<Violation>> {
    let outside: Vec<Violation> = parsed.envelope_violations().cloned().collect();
    if !outside.is_empty() || parsed.response.is_none() {
        return Err(if outside.is_empty() {
            parsed.violations.clone()
        } else {
            outside
        });
    }
    let bad: Vec<usize> = parsed
        .units
        .iter()
        .enumerate()
        .filter(|(_, u)| parsed.violations_in(&u.span).next().is_some())
        .map(|(i, _)| i)
        .collect();
    let edits: Vec<(Range<usize>, Vec<u8>)> = bad
        .iter()
        .map(|&i| (parsed.units[i].span.clone(), Vec::new()))
        .collect();
    Ok((apply(body, &edits), bad))
}

/// Runs the full pipeline. A body with no violations comes back unchanged.
pub fn repair_response(upstream: &[u8]) -> RepairOutcome {
    let first = parse_response(upstream);
    if first.is_clean() && first.response.is_some() {
        return RepairOutcome {
            body: upstream.to_vec(),
            utf8_fixes: Vec::new(),
            entity_fixes: Vec::new(),
            markup_fixes: Vec::new(),
            dropped_records: Vec::new(),
            dropped_count: 0,
            repaired_records: Vec::new(),
            residual_violations: Vec::new(),
            verdict: Verdict::Clean,
        };
    }

    let mut map = OffsetMap::default();
    let s1 = repair_utf8(upstream);
    map.push(&s1.fixes);
    let s2 = repair_entities(&s1.body);
    map.push(&s2.fixes);
    let s3 = repair_markup(&s2.body);
    map.push(&s3.fixes);

    let in_final: Vec<usize> = [&s1.fixes, &s2.fixes, &s3.fixes]
        .iter()
        .enumerate()
        .flat_map(|(level, fixes)| {
            let map = &map;
            fixes.iter().map(move |f| map.to_final(level, f.offset))
        })
        .collect();
    let upstream_fixes = |level: usize, fixes: Vec<Fix>| -> Vec<Fix> {
        fixes
            .into_iter()
            .map(|mut f| {
                f.offset = map.to_upstream(level, f.offset);
                f
            })
            .collect()
    };

    let repaired = s3.body;
    let parsed = parse_response(&repaired);
    let mut outcome = RepairOutcome {
        body: Vec::new(),
        utf8_fixes: upstream_fixes(0, s1.fixes),
        entity_fixes: upstream_fixes(1, s2.fixes),
        markup_fixes: upstream_fixes(2, s3.fixes),
        dropped_records: Vec::new(),
        dropped_count: 0,
        repaired_records: Vec::new(),
        residual_violations: Vec::new(),
        verdict: Verdict::Repaired,
    };

    let (body, dropped) = match drop_bad_records(&repaired, &parsed) {
        Ok(v) => v,
        Err(violations) => {
            outcome.residual_violations = violations;
            outcome.verdict = Verdict::Rejected;
            return outcome;
        }
    };
    for (i, unit) in parsed.units.iter().enumerate() {
        let Some(id) = &unit.identifier else { continue };
        if dropped.contains(&i) {
            outcome.dropped_records.push(id.clone());
        } else if in_final.iter().any(|p| unit.span.contains(p)) {
            outcome.repaired_records.push(id.clone());
        }
    }
    outcome.dropped_count = dropped.len();

    let check = parse_response(&body);
    if !check.is_clean() || check.response.is_none() {
        outcome.residual_violations = check.violations;
        outcome.verdict = Verdict::Rejected;
        return outcome;
    }
    outcome.body = body;
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utf8_identity_and_fixes() {
        let clean = "caf\u{e9} \u{4e2d}".as_bytes();
        let out = repair_utf8(clean);
        assert_eq!(out.body, clean);
        assert!(out.fixes.is_empty());

        let out = repair_utf8(b"a\xBFb");
        assert_eq!(out.body, "a\u{FFFD}b".as_bytes());
        assert_eq!(out.fixes.len(), 1);
        assert_eq!(out.fixes[0].offset, 1);
        assert_eq!(out.fixes[0].original, vec![0xBF]);

        let out = repair_utf8(b"ab\xE2\x82");
        assert_eq!(out.body, "ab\u{FFFD}".as_bytes());
        assert_eq!(out.fixes.len(), 1);
    }

    #[test]
    fn entity_examples() {
        let out = repair_entities(b"<dc:title>A &amp; B</dc:title>");
        assert!(out.fixes.is_empty());
        let out = repair_entities(b"<dc:title>A & B</dc:title>");
        assert_eq!(out.body, b"<dc:title>A &amp; B</dc:title>");
        assert_eq!(out.fixes.len(), 1);
        let out = repair_entities(b"<dc:title>x < 5</dc:title>");
        assert_eq!(out.body, b"<dc:title>x &lt; 5</dc:title>");
        assert_eq!(out.fixes.len(), 1);
        let out = repair_entities(b"<a>&custom; &#0; &#x41;</a>");
        assert_eq!(out.body, b"<a>&amp;custom; &amp;#0; &#x41;</a>");
    }

    #[test]
    fn entity_repair_leaves_markup_alone() {
        let src = b"<!-- a & b --><a x=\"1\"><![CDATA[a & b < c]]></a>";
        let out = repair_entities(src);
        assert_eq!(out.body, src);
        let out = repair_entities(b"<a x=\"A & B\"/>");
        assert_eq!(out.body, b"<a x=\"A &amp; B\"/>");
    }

    #[test]
    fn markup_examples() {
        let out = repair_markup(b"<record status=deleted>");
        assert_eq!(out.body, b"<record status=\"deleted\">");
        assert_eq!(out.fixes.len(), 1);
        let src = b"<record status=\"deleted\">";
        assert_eq!(repair_markup(src).body, src);
        let src = b"<a><b></a>";
        let out = repair_markup(src);
        assert_eq!(out.body, src);
        assert!(out.fixes.is_empty());
    }

    #[test]
    fn offsets_map_back_through_stages() {
        let mut map = OffsetMap::default();
        // Stage 0 turns one byte at 1 into three.
        map.push(&[Fix {
            offset: 1,
            original: vec![0xBF],
            replacement: "\u{FFFD}".into(),
        }]);
        assert_eq!(map.to_upstream(1, 0), 0);
        assert_eq!(map.to_upstream(1, 4), 2);
        assert_eq!(map.to_upstream(1, 10), 8);
        assert_eq!(map.to_final(0, 5), 7);
        assert_eq!(map.to_final(0, 0), 0);
    }
}
