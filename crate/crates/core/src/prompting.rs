//! Prompt assembly: task description, coefficient scales, rules, worked
//! examples with reasoning, format instructions, context and target words.

use std::fmt::Write as _;

use thiserror::Error;

use crate::features::tokenize_words;
use crate::mapping::LlmScaleSuggestion;
use crate::response::{parse_response, serialize_suggestion, ParseFailure};

/// Heading that precedes the enumerated target words. The mock backend keys
/// on its last occurrence.
pub const TARGET_WORDS_HEADING: &str = "Target words:";

const DEFAULT_EXEMPLARS: &str = include_str!("../assets/exemplars.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),
    #[error("exemplar {record} (line {line}): {reason}")]
    ExemplarFile {
        record: usize,
        line: usize,
        reason: String,
    },
}

/// What the model is asked to take into account besides the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptMode {
    Neutral,
    Style(String),
    Dialogue(String),
}

impl PromptMode {
    pub fn name(&self) -> &'static str {
        match self {
            PromptMode::Neutral => "neutral",
            PromptMode::Style(_) => "style",
            PromptMode::Dialogue(_) => "dialogue",
        }
    }

    fn context_line(&self) -> Option<String> {
        match self {
            PromptMode::Neutral => None,
            PromptMode::Style(s) => Some(format!("Speaking style: {s}")),
            PromptMode::Dialogue(l) => Some(format!("Previous line in the dialogue: \"{l}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub context: PromptMode,
    pub target_text: String,
    /// Reasoning lives in `suggestion.reasoning`.
    pub suggestion: LlmScaleSuggestion,
}

impl Exemplar {
    pub fn reasoning(&self) -> &str {
        &self.suggestion.reasoning
    }

    /// The exemplar's answer in response-grammar form.
    pub fn response_text(&self) -> Result<String, PromptError> {
        serialize_suggestion(&self.suggestion, &tokenize_words(&self.target_text))
            .map_err(|e| PromptError::InvalidSpec(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub target_text: String,
    pub task_description: String,
    pub scale_explanations: String,
    pub rules: Vec<String>,
    pub exemplars: Vec<Exemplar>,
    pub format_instructions: String,
}

pub const DEFAULT_TASK: &str = "\
You control the prosody of a text-to-speech voice. The voice will read a target text aloud. \
Your job is to choose how the speech should be modified so that it sounds appropriate for \
the situation described below. You do this by choosing values for three utterance-level \
(global) coefficients and three word-level (local) coefficients for every word of the text.";

pub const DEFAULT_SCALES: &str = "\
Global coefficients apply to the whole utterance. Each is a whole number from -5 to 5, \
where 0 means no change:
- duration: negative values make the speech faster (shorter sounds), positive values make it slower (longer sounds).
- pitch: negative values lower the voice, positive values raise it.
- energy: negative values make the voice quieter, positive values make it louder.
Local coefficients apply to a single word, on top of the global ones. Each is a whole number \
from 0 to 5, where 0 means no change and larger values mean more emphasis:
- duration: lengthens the word.
- pitch: raises the pitch of the word.
- energy: makes the word louder.";

pub fn default_rules() -> Vec<String> {
    [
        "Predict the parameters independently of the target voice: describe how the text should be spoken, not how the voice sounds now.",
        "Think step by step. In REASONING, first decide the overall delivery, then decide which words need emphasis and why.",
        "Use whole numbers only. Global values must lie between -5 and 5. Local values must lie between 0 and 5.",
        "Give every target word exactly one WORD line, in the order listed, with the index and the word exactly as listed. Never skip, merge, split, reorder or add words.",
        "Leave words that need no emphasis at 0 for all three local values.",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub const DEFAULT_FORMAT: &str = "\
Answer in exactly this format and write nothing else:
REASONING: <your step-by-step reasoning, one or more lines>
GLOBAL: duration=<number> pitch=<number> energy=<number>
WORD <index> <word>: duration=<number> pitch=<number> energy=<number>
Write one WORD line for each target word, starting at index 0 and counting up by one.";

impl PromptSpec {
    /// Spec with the default task text, rules, format and exemplars.
    pub fn new(mode: PromptMode, target_text: impl Into<String>) -> Self {
        PromptSpec {
            mode,
            target_text: target_text.into(),
            task_description: DEFAULT_TASK.to_string(),
            scale_explanations: DEFAULT_SCALES.to_string(),
            rules: default_rules(),
            exemplars: default_exemplars(),
            format_instructions: DEFAULT_FORMAT.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let invalid = |s: &str| Err(PromptError::InvalidSpec(s.to_string()));
        if tokenize_words(&self.target_text).is_empty() {
            return invalid("target text has no words");
        }
        if self.target_text.contains(['\n', '\r']) {
            return invalid("target text must be a single line");
        }
        match &self.mode {
            PromptMode::Style(s) if s.trim().is_empty() => {
                return invalid("style mode needs a style")
            }
            PromptMode::Dialogue(l) if l.trim().is_empty() => {
                return invalid("dialogue mode needs the previous line")
            }
            _ => {}
        }
        if self.exemplars.is_empty() {
            return invalid("at least one exemplar is required");
        }
        for (i, ex) in self.exemplars.iter().enumerate() {
            ex.response_text()
                .map_err(|e| PromptError::InvalidSpec(format!("exemplar {}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

fn write_target(out: &mut String, text: &str) {
    let _ = writeln!(out, "Target text: {text}");
    let _ = writeln!(out, "{TARGET_WORDS_HEADING}");
    for (j, w) in tokenize_words(text).iter().enumerate() {
        let _ = writeln!(out, "{j}: {}", w.surface);
    }
}

fn write_context(out: &mut String, mode: &PromptMode) {
    match mode.context_line() {
        Some(line) => {
            let _ = writeln!(out, "{line}");
        }
        None => out.push_str("No speaking style or context is given.\n"),
    }
}

/// Renders the full prompt. Pure: identical specs give identical text.
pub fn build_prompt(spec: &PromptSpec) -> Result<String, PromptError> {
    spec.validate()?;
    let mut out = String::new();

    out.push_str("# Task\n");
    out.push_str(spec.task_description.trim_end());
    out.push_str("\n\n# Coefficients\n");
    out.push_str(spec.scale_explanations.trim_end());
    out.push_str("\n\n# Rules\n");
    for (i, rule) in spec.rules.iter().enumerate() {
        let _ = writeln!(out, "{}. {rule}", i + 1);
    }

    out.push_str("\n# Examples\n");
    for (i, ex) in spec.exemplars.iter().enumerate() {
        let _ = writeln!(out, "\n## Example {}", i + 1);
        write_context(&mut out, &ex.context);
        write_target(&mut out, &ex.target_text);
        out.push_str("Response:\n");
        out.push_str(&ex.response_text()?);
    }

    out.push_str("\n# Response format\n");
    out.push_str(spec.format_instructions.trim_end());
    out.push_str("\n\n# Your task\n");
    match &spec.mode {
        PromptMode::Neutral => out.push_str(
            "No speaking style or context is given. Read the text in a neutral way: keep all \
             global values at 0 and only use local values to emphasise the words that should \
             carry stress.\n",
        ),
        PromptMode::Style(_) => out.push_str(
            "Choose the modifications so that the text is spoken in the speaking style below.\n",
        ),
        PromptMode::Dialogue(_) => out.push_str(
            "The target text is the reply to the previous line of a dialogue. Choose the \
             modifications so that the reply sounds appropriate to that previous line.\n",
        ),
    }
    if let Some(line) = spec.mode.context_line() {
        let _ = writeln!(out, "{line}");
    }
    write_target(&mut out, &spec.target_text);
    out.push_str("Response:\n");
    Ok(out)
}

/// Parses an exemplar file: records separated by `---` lines, each with an
/// optional `CONTEXT: style: ..` / `CONTEXT: dialogue: ..` line, a `TEXT:`
/// line and a response in the response grammar.
pub fn parse_exemplars(document: &str) -> Result<Vec<Exemplar>, PromptError> {
    let mut exemplars = Vec::new();
    let mut record_lines: Vec<(usize, &str)> = Vec::new();
    let mut flush = |lines: &mut Vec<(usize, &str)>, record: usize| -> Result<(), PromptError> {
        if lines.iter().all(|(_, l)| l.trim().is_empty()) {
            lines.clear();
            return Ok(());
        }
        let ex = parse_record(lines, record)?;
        exemplars.push(ex);
        lines.clear();
        Ok(())
    };
    let mut record = 1;
    for (idx, line) in document.lines().enumerate() {
        if line.trim() == "---" {
            flush(&mut record_lines, record)?;
            record += 1;
        } else {
            record_lines.push((idx + 1, line));
        }
    }
    flush(&mut record_lines, record)?;
    Ok(exemplars)
}

fn parse_record(lines: &[(usize, &str)], record: usize) -> Result<Exemplar, PromptError> {
    let err = |line: usize, reason: String| PromptError::ExemplarFile {
        record,
        line,
        reason,
    };
    let mut iter = lines
        .iter()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let mut context = PromptMode::Neutral;
    if let Some((line, text)) = iter.peek() {
        if let Some(rest) = text.trim().strip_prefix("CONTEXT:") {
            let rest = rest.trim();
            context = if let Some(style) = rest.strip_prefix("style:") {
                PromptMode::Style(style.trim().to_string())
            } else if let Some(prev) = rest.strip_prefix("dialogue:") {
                PromptMode::Dialogue(prev.trim().to_string())
            } else {
                return Err(err(
                    *line,
                    "CONTEXT must be 'style: ..' or 'dialogue: ..'".into(),
                ));
            };
            iter.next();
        }
    }
    let (text_line, text) = iter
        .next()
        .ok_or_else(|| err(lines[0].0, "empty record".into()))?;
    let target_text = text
        .trim()
        .strip_prefix("TEXT:")
        .ok_or_else(|| err(*text_line, "expected 'TEXT:' line".into()))?
        .trim()
        .to_string();
    let response: Vec<(usize, &str)> = iter.copied().collect();
    let body = response
        .iter()
        .map(|(_, l)| *l)
        .collect::<Vec<_>>()
        .join("\n");
    // Response-relative line -> file line.
    let file_line = |n: usize| match response.get(n.wrapping_sub(1)) {
        Some((line, _)) => *line,
        None => response.last().map_or(*text_line, |(l, _)| *l) + n.saturating_sub(response.len()),
    };
    let parsed = parse_response(&body, &tokenize_words(&target_text)).map_err(
        |ParseFailure { diagnostics }| {
            let d = &diagnostics[0];
            err(file_line(d.line_number), d.detail.clone())
        },
    )?;
    if let Some(w) = parsed.warnings.first() {
        return Err(err(
            file_line(w.line_number),
            "exemplar values must be in range".into(),
        ));
    }
    Ok(Exemplar {
        context,
        target_text,
        suggestion: parsed.suggestion,
    })
}

/// Writes exemplars in the exemplar file format.
pub fn serialize_exemplars(exemplars: &[Exemplar]) -> Result<String, PromptError> {
    let mut records = Vec::with_capacity(exemplars.len());
    for ex in exemplars {
        let mut rec = String::new();
        match &ex.context {
            PromptMode::Neutral => {}
            PromptMode::Style(s) => {
                let _ = writeln!(rec, "CONTEXT: style: {s}");
            }
            PromptMode::Dialogue(l) => {
                let _ = writeln!(rec, "CONTEXT: dialogue: {l}");
            }
        }
        let _ = writeln!(rec, "TEXT: {}", ex.target_text);
        rec.push_str(&ex.response_text()?);
        records.push(rec);
    }
    Ok(records.join("---\n"))
}

/// The ten built-in worked examples (three neutral, four style, three
/// dialogue).
pub fn default_exemplars() -> Vec<Exemplar> {
    parse_exemplars(DEFAULT_EXEMPLARS).expect("built-in exemplars are valid")
}
