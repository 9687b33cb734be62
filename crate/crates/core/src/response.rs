//! The response grammar the model is taught, and its validating parser.
//!
//! ```text
//! REASONING: <free text, may continue over several lines>
//! GLOBAL: duration=<v> pitch=<v> energy=<v>
//! WORD <index> <word>: duration=<v> pitch=<v> energy=<v>
//! ```
//!
//! One `WORD` line per target word, in ascending index order, echoing the
//! word. Keywords are case-insensitive, blank lines are ignored and spacing
//! around `=` is free. Values outside `[-5, 5]` (global) or `[0, 5]` (local)
//! are clamped with a warning; everything structural is an error.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::features::{match_key, Word};
use crate::mapping::{LlmScaleSuggestion, ScaleValues, WordSuggestion, GLOBAL_SCALE, LOCAL_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    MissingGlobal,
    WordCountMismatch,
    WordIdentityMismatch,
    ValueNotNumeric,
    ValueOutOfRange { clamped: bool },
    DuplicateWordIndex,
    UnparseableLine,
}

impl DiagnosticKind {
    /// Warnings leave the parse usable.
    pub fn is_error(self) -> bool {
        !matches!(self, DiagnosticKind::ValueOutOfRange { clamped: true })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub kind: DiagnosticKind,
    /// 1-based line in the response text.
    pub line_number: usize,
    pub detail: String,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: {:?}: {}",
            self.line_number, self.kind, self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("response rejected with {} diagnostic(s): {}", .diagnostics.len(), render_diagnostics(.diagnostics))]
pub struct ParseFailure {
    /// Every diagnostic found, warnings included.
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub suggestion: LlmScaleSuggestion,
    /// Non-fatal diagnostics (clamped values).
    pub warnings: Vec<ParseDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResponseError {
    #[error("suggestion does not align with the word list: {0}")]
    AlignmentMismatch(String),
}

pub fn render_diagnostics(diagnostics: &[ParseDiagnostic]) -> String {
    diagnostics
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Strips `keyword` (case-insensitive) followed by optional spaces and `:`.
fn strip_keyword<'a>(line: &'a str, keyword: &str) -> Option<&'a str> {
    let head = line.get(..keyword.len())?;
    if !head.eq_ignore_ascii_case(keyword) {
        return None;
    }
    line[keyword.len()..].trim_start().strip_prefix(':')
}

/// `WORD <index> <rest>` with a numeric index.
fn split_word_line(line: &str) -> Option<(&str, &str)> {
    let head = line.get(..4)?;
    if !head.eq_ignore_ascii_case("WORD") {
        return None;
    }
    let rest = &line[4..];
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let rest = rest.trim_start();
    let end = rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len());
    if end == 0 {
        return None;
    }
    Some((&rest[..end], &rest[end..]))
}

enum Assignment {
    Ok(ScaleValues, Vec<(usize, f64)>),
    Err(DiagnosticKind, String),
}

const KEYS: [&str; 3] = ["duration", "pitch", "energy"];

/// Parses `duration=.. pitch=.. energy=..`. Out-of-range slots are returned
/// separately with the raw value; the returned triple is already clamped.
fn parse_assignments(text: &str, range: (f64, f64)) -> Assignment {
    let collapsed = text
        .split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .replace(" =", "=")
        .replace("= ", "=");
    let mut slots: [Option<f64>; 3] = [None; 3];
    let mut out_of_range = Vec::new();
    for token in collapsed.split_whitespace() {
        let Some((key, value)) = token.split_once('=') else {
            return Assignment::Err(
                DiagnosticKind::UnparseableLine,
                format!("expected key=value, found '{token}'"),
            );
        };
        let Some(slot) = KEYS.iter().position(|k| k.eq_ignore_ascii_case(key)) else {
            return Assignment::Err(
                DiagnosticKind::UnparseableLine,
                format!("unknown key '{key}'"),
            );
        };
        if slots[slot].is_some() {
            return Assignment::Err(
                DiagnosticKind::UnparseableLine,
                format!("duplicate key '{}'", KEYS[slot]),
            );
        }
        let Some(v) = value.parse::<f64>().ok().filter(|v| v.is_finite()) else {
            return Assignment::Err(
                DiagnosticKind::ValueNotNumeric,
                format!("{} value '{value}' is not a number", KEYS[slot]),
            );
        };
        if v < range.0 || v > range.1 {
            out_of_range.push((slot, v));
        }
        slots[slot] = Some(v.clamp(range.0, range.1));
    }
    if let Some(missing) = slots.iter().position(Option::is_none) {
        return Assignment::Err(
            DiagnosticKind::UnparseableLine,
            format!("missing {} value", KEYS[missing]),
        );
    }
    Assignment::Ok(
        ScaleValues {
            duration: slots[0].unwrap(),
            pitch: slots[1].unwrap(),
            energy: slots[2].unwrap(),
        },
        out_of_range,
    )
}

struct WordLine {
    line: usize,
    index: usize,
    echoed: String,
    values: Option<ScaleValues>,
}

#[derive(PartialEq)]
enum State {
    Preamble,
    Reasoning,
    Words,
}

/// Parses a model response against the expected target words.
///
/// Never panics; on rejection every independent problem is reported.
pub fn parse_response(text: &str, expected_words: &[Word]) -> Result<ParsedResponse, ParseFailure> {
    let mut diags: Vec<ParseDiagnostic> = Vec::new();
    let push = |diags: &mut Vec<ParseDiagnostic>, kind, line_number, detail: String| {
        diags.push(ParseDiagnostic {
            kind,
            line_number,
            detail,
        })
    };

    let mut state = State::Preamble;
    let mut reasoning: Vec<String> = Vec::new();
    let mut global: Option<ScaleValues> = None;
    let mut global_line: Option<usize> = None;
    let mut word_lines: Vec<WordLine> = Vec::new();
    let mut last_line = 0;

    let handle_values = |diags: &mut Vec<ParseDiagnostic>,
                         line: usize,
                         text: &str,
                         range: (f64, f64),
                         what: &str|
     -> Option<ScaleValues> {
        match parse_assignments(text, range) {
            Assignment::Ok(values, out_of_range) => {
                for (slot, raw) in out_of_range {
                    push(
                        diags,
                        DiagnosticKind::ValueOutOfRange { clamped: true },
                        line,
                        format!(
                            "{what} {} value {raw} outside [{}, {}], clamped",
                            KEYS[slot], range.0, range.1
                        ),
                    );
                }
                Some(values)
            }
            Assignment::Err(kind, detail) => {
                push(diags, kind, line, format!("{what}: {detail}"));
                None
            }
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        last_line = line;

        if let Some((index_text, rest)) = split_word_line(trimmed) {
            if state == State::Preamble {
                push(
                    &mut diags,
                    DiagnosticKind::UnparseableLine,
                    line,
                    "WORD line before REASONING".into(),
                );
            }
            state = State::Words;
            let Ok(index) = index_text.parse::<usize>() else {
                push(
                    &mut diags,
                    DiagnosticKind::UnparseableLine,
                    line,
                    "word index too large".into(),
                );
                continue;
            };
            // The word ends at the last ':' before the first '='.
            let eq = rest.find('=').unwrap_or(rest.len());
            let Some(colon) = rest[..eq].rfind(':') else {
                push(
                    &mut diags,
                    DiagnosticKind::UnparseableLine,
                    line,
                    "expected 'WORD <index> <word>: duration=.. pitch=.. energy=..'".into(),
                );
                continue;
            };
            let echoed = rest[..colon].trim().to_string();
            let values = handle_values(&mut diags, line, &rest[colon + 1..], LOCAL_SCALE, "word");
            word_lines.push(WordLine {
                line,
                index,
                echoed,
                values,
            });
            continue;
        }

        if let Some(rest) = strip_keyword(trimmed, "GLOBAL") {
            if global_line.is_some() {
                push(
                    &mut diags,
                    DiagnosticKind::UnparseableLine,
                    line,
                    "duplicate GLOBAL line".into(),
                );
                continue;
            }
            match state {
                State::Preamble => push(
                    &mut diags,
                    DiagnosticKind::UnparseableLine,
                    line,
                    "GLOBAL line before REASONING".into(),
                ),
                State::Words => push(
                    &mut diags,
                    DiagnosticKind::UnparseableLine,
                    line,
                    "GLOBAL line after WORD lines".into(),
                ),
                State::Reasoning => {}
            }
            global_line = Some(line);
            global = handle_values(&mut diags, line, rest, GLOBAL_SCALE, "global");
            state = State::Words;
            continue;
        }

        match state {
            State::Preamble => match strip_keyword(trimmed, "REASONING") {
                Some(rest) => {
                    let rest = rest.trim();
                    if !rest.is_empty() {
                        reasoning.push(rest.to_string());
                    }
                    state = State::Reasoning;
                }
                None => push(
                    &mut diags,
                    DiagnosticKind::UnparseableLine,
                    line,
                    format!("expected 'REASONING:', found '{}'", truncate(trimmed)),
                ),
            },
            State::Reasoning => reasoning.push(trimmed.to_string()),
            State::Words => push(
                &mut diags,
                DiagnosticKind::UnparseableLine,
                line,
                format!("expected a WORD line, found '{}'", truncate(trimmed)),
            ),
        }
    }

    if global_line.is_none() {
        let line = word_lines.first().map_or(last_line.max(1), |w| w.line);
        push(
            &mut diags,
            DiagnosticKind::MissingGlobal,
            line,
            "no GLOBAL line".into(),
        );
    }

    // Word alignment.
    let count = expected_words.len();
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut highest: Option<usize> = None;
    for w in &word_lines {
        if let Some(first) = seen.get(&w.index) {
            push(
                &mut diags,
                DiagnosticKind::DuplicateWordIndex,
                w.line,
                format!("word index {} already given on line {first}", w.index),
            );
            continue;
        }
        if w.index >= count {
            push(
                &mut diags,
                DiagnosticKind::WordCountMismatch,
                w.line,
                format!(
                    "extra word index {} ('{}'); the text has {count} words",
                    w.index, w.echoed
                ),
            );
            continue;
        }
        if highest.is_some_and(|h| w.index < h) {
            push(
                &mut diags,
                DiagnosticKind::UnparseableLine,
                w.line,
                format!("word index {} out of ascending order", w.index),
            );
        }
        highest = highest.max(Some(w.index));
        let expected = &expected_words[w.index];
        if match_key(&w.echoed) != expected.key {
            push(
                &mut diags,
                DiagnosticKind::WordIdentityMismatch,
                w.line,
                format!(
                    "word {} should be '{}', response has '{}'",
                    w.index, expected.surface, w.echoed
                ),
            );
        }
        seen.insert(w.index, w.line);
    }
    for (k, word) in expected_words.iter().enumerate() {
        if seen.contains_key(&k) {
            continue;
        }
        let line = word_lines
            .iter()
            .find(|w| w.index > k && w.index < count)
            .map(|w| w.line)
            .or_else(|| word_lines.last().map(|w| w.line + 1))
            .or_else(|| global_line.map(|l| l + 1))
            .unwrap_or(last_line + 1);
        push(
            &mut diags,
            DiagnosticKind::WordCountMismatch,
            line,
            format!("missing word index {k} ('{}')", word.surface),
        );
    }

    if diags.iter().any(|d| d.kind.is_error()) {
        diags.sort_by_key(|d| d.line_number);
        return Err(ParseFailure { diagnostics: diags });
    }

    let mut words: Vec<WordSuggestion> = word_lines
        .into_iter()
        .map(|w| WordSuggestion {
            index: w.index,
            key: expected_words[w.index].key.clone(),
            values: w.values.expect("value errors are fatal"),
        })
        .collect();
    words.sort_by_key(|w| w.index);
    diags.sort_by_key(|d| d.line_number);
    Ok(ParsedResponse {
        suggestion: LlmScaleSuggestion {
            reasoning: reasoning.join("\n"),
            global: global.expect("missing GLOBAL is fatal"),
            words,
        },
        warnings: diags,
    })
}

fn truncate(s: &str) -> String {
    const MAX: usize = 60;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

fn write_values(out: &mut String, v: &ScaleValues) {
    let _ = write!(
        out,
        "duration={} pitch={} energy={}",
        v.duration, v.pitch, v.energy
    );
}

/// Canonical response text for `suggestion`, echoing `surface_words`.
pub fn serialize_suggestion(
    suggestion: &LlmScaleSuggestion,
    surface_words: &[Word],
) -> Result<String, ResponseError> {
    if surface_words.is_empty() {
        return Err(ResponseError::AlignmentMismatch("empty word list".into()));
    }
    if suggestion.words.len() != surface_words.len() {
        return Err(ResponseError::AlignmentMismatch(format!(
            "{} suggestion entries for {} words",
            suggestion.words.len(),
            surface_words.len()
        )));
    }
    let mut out = String::from("REASONING:");
    let mut lines = suggestion.reasoning.lines();
    if let Some(first) = lines.next() {
        let _ = write!(out, " {first}");
    }
    out.push('\n');
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out.push_str("GLOBAL: ");
    write_values(&mut out, &suggestion.global);
    out.push('\n');
    for (j, (entry, word)) in suggestion.words.iter().zip(surface_words).enumerate() {
        if entry.index != j || entry.key != word.key {
            return Err(ResponseError::AlignmentMismatch(format!(
                "entry {j} is ({}, '{}'), word is '{}'",
                entry.index, entry.key, word.key
            )));
        }
        let _ = write!(out, "WORD {j} {}: ", word.surface);
        write_values(&mut out, &entry.values);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tokenize_words;

    const TEXT: &str = "Where were you?";

    fn valid() -> String {
        "REASONING: The speaker is suspicious.\n\
         Stress 'you'.\n\
         GLOBAL: duration=-1 pitch=2 energy=1\n\
         WORD 0 Where: duration=0 pitch=0 energy=0\n\
         WORD 1 were: duration=0 pitch=0 energy=0\n\
         WORD 2 you: duration=2 pitch=4 energy=3\n"
            .to_string()
    }

    fn kinds(f: &ParseFailure) -> Vec<(DiagnosticKind, usize)> {
        f.diagnostics
            .iter()
            .map(|d| (d.kind, d.line_number))
            .collect()
    }

    #[test]
    fn parses_three_words() {
        let parsed = parse_response(&valid(), &tokenize_words(TEXT)).unwrap();
        let s = parsed.suggestion;
        assert_eq!(s.words.len(), 3);
        assert_eq!(s.words[2].key, "you");
        assert_eq!(
            s.words[2].values,
            ScaleValues {
                duration: 2.0,
                pitch: 4.0,
                energy: 3.0
            }
        );
        assert_eq!(s.global.duration, -1.0);
        assert_eq!(s.reasoning, "The speaker is suspicious.\nStress 'you'.");
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn skipped_word_names_index() {
        let text = valid().replace("WORD 1 were: duration=0 pitch=0 energy=0\n", "");
        let f = parse_response(&text, &tokenize_words(TEXT)).unwrap_err();
        assert_eq!(kinds(&f), vec![(DiagnosticKind::WordCountMismatch, 5)]);
        assert!(f.diagnostics[0].detail.contains("missing word index 1"));
    }

    #[test]
    fn local_value_nine_is_clamped() {
        let text = valid().replace("pitch=4", "pitch=9");
        let parsed = parse_response(&text, &tokenize_words(TEXT)).unwrap();
        assert_eq!(parsed.suggestion.words[2].values.pitch, 5.0);
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(
            parsed.warnings[0].kind,
            DiagnosticKind::ValueOutOfRange { clamped: true }
        );
        assert_eq!(parsed.warnings[0].line_number, 6);
    }

    #[test]
    fn tolerant_spacing_and_case() {
        let text = "\n  reasoning :  ok\n\nGlobal:duration = 1,  pitch= 0 ; energy =0\n\
                    word 0 WHERE : duration=0 pitch=0 energy=0\n\
                    WORD  1   were:duration=1 pitch=0 energy=0\n\
                    WORD 2 you?: energy=0 pitch=0 duration=0\n";
        let parsed = parse_response(text, &tokenize_words(TEXT)).unwrap();
        assert_eq!(parsed.suggestion.global.duration, 1.0);
        assert_eq!(parsed.suggestion.words[1].values.duration, 1.0);
    }

    #[test]
    fn collects_independent_errors() {
        let text = valid()
            .replace("WORD 0 Where", "WORD 0 There")
            .replace("energy=3", "energy=loud")
            + "WORD 3 invented: duration=0 pitch=0 energy=0\n";
        let f = parse_response(&text, &tokenize_words(TEXT)).unwrap_err();
        assert_eq!(
            kinds(&f),
            vec![
                (DiagnosticKind::WordIdentityMismatch, 4),
                (DiagnosticKind::ValueNotNumeric, 6),
                (DiagnosticKind::WordCountMismatch, 7),
            ]
        );
    }

    #[test]
    fn missing_global_and_duplicates() {
        let text = "REASONING: x\nWORD 0 Where: duration=0 pitch=0 energy=0\n\
                    WORD 0 Where: duration=0 pitch=0 energy=0\n";
        let f = parse_response(text, &tokenize_words("Where")).unwrap_err();
        assert_eq!(
            kinds(&f),
            vec![
                (DiagnosticKind::MissingGlobal, 2),
                (DiagnosticKind::DuplicateWordIndex, 3)
            ]
        );
    }

    #[test]
    fn prose_before_reasoning_is_rejected() {
        let text = format!("Sure! Here you go.\n{}", valid());
        let f = parse_response(&text, &tokenize_words(TEXT)).unwrap_err();
        assert_eq!(kinds(&f), vec![(DiagnosticKind::UnparseableLine, 1)]);
    }

    #[test]
    fn garbage_never_panics() {
        let words = tokenize_words(TEXT);
        for text in [
            "",
            "WORD",
            "WORD 99999999999999999999999 x: a",
            "GLOBAL:",
            ":::",
            "WORD 1 : ===",
        ] {
            assert!(parse_response(text, &words).is_err(), "{text}");
        }
    }

    #[test]
    fn serialize_identity_suggestion() {
        let words = tokenize_words("a b");
        let text = serialize_suggestion(&LlmScaleSuggestion::neutral("a b"), &words).unwrap();
        assert_eq!(
            text,
            "REASONING:\nGLOBAL: duration=0 pitch=0 energy=0\n\
             WORD 0 a: duration=0 pitch=0 energy=0\nWORD 1 b: duration=0 pitch=0 energy=0\n"
        );
        let parsed = parse_response(&text, &words).unwrap();
        assert_eq!(parsed.suggestion, LlmScaleSuggestion::neutral("a b"));
    }

    #[test]
    fn serialize_requires_words() {
        let s = LlmScaleSuggestion::neutral("");
        assert!(matches!(
            serialize_suggestion(&s, &[]),
            Err(ResponseError::AlignmentMismatch(_))
        ));
        let s = LlmScaleSuggestion::neutral("a b");
        assert!(serialize_suggestion(&s, &tokenize_words("a c")).is_err());
    }
}
