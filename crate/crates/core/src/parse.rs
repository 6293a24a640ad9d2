//! Structured-output parsing for raw VLM replies.
//!
//! Two reply shapes are handled: the imagination stage's single edit
//! instruction and the reasoning stage's `### Thinking` / `### Output`
//! reply with a three-field JSON object. Parsing never panics; every
//! failure is a [`ParseError`] carrying the raw reply.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const EDIT_PREFIX: &str = "Edit the input image to";
pub const EDIT_SUFFIX: &str = "keep others unchanged";
pub const MAX_PART_CHARS: usize = 200;

const OUTPUT_HEADING: &str = "### Output";
const THINKER_FIELDS: [&str; 3] = ["task", "object_name", "object_part"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseErrorKind {
    NoJson,
    MissingField { name: String },
    WrongType { name: String },
    InvalidField { name: String, reason: String },
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{}", describe(.kind))]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub raw: String,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::NoJson => "no JSON object found".into(),
        ParseErrorKind::MissingField { name } => format!("missing field {name:?}"),
        ParseErrorKind::WrongType { name } => format!("field {name:?} is not a string"),
        ParseErrorKind::InvalidField { name, reason } => format!("field {name:?} {reason}"),
        ParseErrorKind::Empty => "empty reply".into(),
    }
}

impl ParseError {
    fn new(kind: ParseErrorKind, raw: &str) -> Self {
        Self {
            kind,
            raw: raw.to_string(),
        }
    }

    /// Short machine-readable tag, e.g. `missing_field`.
    pub fn kind_tag(&self) -> &'static str {
        match self.kind {
            ParseErrorKind::NoJson => "no_json",
            ParseErrorKind::MissingField { .. } => "missing_field",
            ParseErrorKind::WrongType { .. } => "wrong_type",
            ParseErrorKind::InvalidField { .. } => "invalid_field",
            ParseErrorKind::Empty => "empty",
        }
    }
}

/// Image-edit instruction produced by the imagination stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimPrompt {
    pub text: String,
    /// Set when the reply had to be normalized to satisfy the format.
    pub repaired: bool,
}

impl SimPrompt {
    pub fn is_well_formed(&self) -> bool {
        let trimmed = self.text.trim();
        trimmed.starts_with(EDIT_PREFIX) && has_suffix(trimmed)
    }
}

/// The part to interact with, as named by the reasoning stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartDescription {
    pub task: String,
    pub object_name: String,
    pub object_part: String,
}

/// Finds the first valid JSON object in free text.
///
/// Candidates are tried in order: fenced code blocks, the text after a
/// `### Output` heading, then brace-balanced spans anywhere in the reply.
pub fn extract_json_block(raw: &str) -> Result<&str, ParseError> {
    // Fenced blocks first: models that fence their answer mean it.
    for block in fenced_blocks(raw) {
        if let Some(span) = first_object_span(block) {
            return Ok(span);
        }
    }
    // The scaffold the reasoning prompt asks for.
    if let Some(pos) = raw.rfind(OUTPUT_HEADING) {
        if let Some(span) = first_object_span(&raw[pos + OUTPUT_HEADING.len()..]) {
            return Ok(span);
        }
    }
    // Anything brace-balanced that parses.
    first_object_span(raw).ok_or_else(|| ParseError::new(ParseErrorKind::NoJson, raw))
}

/// Contents of ``` fenced blocks, with any info string dropped.
fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |n| n + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// Leftmost brace-balanced span that parses as a JSON object.
fn first_object_span(text: &str) -> Option<&str> {
    text.char_indices()
        .filter(|&(_, c)| c == '{')
        .find_map(|(start, _)| {
            let end = balanced_end(&text[start..])?;
            let candidate = &text[start..start + end];
            serde_json::from_str::<Map<String, Value>>(candidate)
                .is_ok()
                .then_some(candidate)
        })
}

/// Byte length of the balanced `{...}` prefix, honouring JSON strings.
fn balanced_end(text: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a reasoning reply into a [`PartDescription`], discarding any
/// warnings.
pub fn parse_thinker_output(raw: &str) -> Result<PartDescription, ParseError> {
    parse_thinker_output_with_warnings(raw).map(|(part, _)| part)
}

/// Like [`parse_thinker_output`], also returning soft-check warnings
/// (extra keys, unusual part phrasing).
pub fn parse_thinker_output_with_warnings(
    raw: &str,
) -> Result<(PartDescription, Vec<String>), ParseError> {
    // The free-form thinking section is never inspected.
    let answer = match raw.rfind(OUTPUT_HEADING) {
        Some(pos) if first_object_span(&raw[pos..]).is_some() => &raw[pos..],
        _ => raw,
    };
    let block = extract_json_block(answer).map_err(|e| ParseError::new(e.kind, raw))?;
    let object: Map<String, Value> =
        serde_json::from_str(block).map_err(|_| ParseError::new(ParseErrorKind::NoJson, raw))?;

    let mut warnings = Vec::new();
    let extras: Vec<&str> = object
        .keys()
        .map(String::as_str)
        .filter(|k| !THINKER_FIELDS.contains(k))
        .collect();
    if !extras.is_empty() {
        warnings.push(format!(
            "ignoring extra output fields: {}",
            extras.join(", ")
        ));
    }

    let field = |name: &str| -> Result<String, ParseError> {
        let value = object.get(name).ok_or_else(|| {
            ParseError::new(
                ParseErrorKind::MissingField {
                    name: name.to_string(),
                },
                raw,
            )
        })?;
        let text = value.as_str().ok_or_else(|| {
            ParseError::new(
                ParseErrorKind::WrongType {
                    name: name.to_string(),
                },
                raw,
            )
        })?;
        let text = text.trim();
        if text.is_empty() {
            return Err(ParseError::new(
                ParseErrorKind::InvalidField {
                    name: name.to_string(),
                    reason: "is empty".into(),
                },
                raw,
            ));
        }
        Ok(text.to_string())
    };

    let part = PartDescription {
        task: field("task")?,
        object_name: field("object_name")?,
        object_part: field("object_part")?,
    };
    if part.object_part.chars().count() > MAX_PART_CHARS {
        return Err(ParseError::new(
            ParseErrorKind::InvalidField {
                name: "object_part".into(),
                reason: format!("exceeds {MAX_PART_CHARS} characters"),
            },
            raw,
        ));
    }
    if !looks_like_part_of(&part.object_part) {
        warnings.push(format!(
            "object_part {:?} is not phrased as \"the <part> of the <object>\"",
            part.object_part
        ));
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok((part, warnings))
}

fn looks_like_part_of(phrase: &str) -> bool {
    let lower = phrase.to_lowercase();
    lower.starts_with("the ") && lower.contains(" of ")
}

/// Normalizes an imagination-stage reply into an edit instruction,
/// repairing a missing prefix or suffix instead of rejecting it.
pub fn parse_dreamer_output(raw: &str) -> Result<SimPrompt, ParseError> {
    let mut text = collapse_whitespace(strip_quotes(raw.trim()));
    if text.is_empty() {
        return Err(ParseError::new(ParseErrorKind::Empty, raw));
    }
    let mut repaired = text != raw.trim();

    if !text.starts_with(EDIT_PREFIX) {
        repaired = true;
        let lower = text.to_lowercase();
        let needle = EDIT_PREFIX.to_lowercase();
        text = match lower.find(&needle) {
            // Preamble or different casing before the instruction proper.
            // Lowercasing is ASCII-length-preserving only for ASCII text, so
            // fall back to prepending otherwise.
            Some(pos) if text.is_ascii() => {
                format!("{EDIT_PREFIX}{}", &text[pos + needle.len()..])
            }
            _ => format!("{EDIT_PREFIX} {}", lowercase_first(&text)),
        };
    }
    if !has_suffix(&text) {
        repaired = true;
        let body = text.trim_end_matches(is_trailing_punct);
        text = format!("{body}, {EDIT_SUFFIX}");
    }
    Ok(SimPrompt { text, repaired })
}

fn is_trailing_punct(c: char) -> bool {
    c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '"' | '\'')
}

fn has_suffix(text: &str) -> bool {
    text.trim_end_matches(is_trailing_punct)
        .to_lowercase()
        .ends_with(EDIT_SUFFIX)
}

fn strip_quotes(text: &str) -> &str {
    const PAIRS: [(char, char); 5] = [('"', '"'), ('\'', '\''), ('`', '`'), ('“', '”'), ('‘', '’')];
    let mut text = text;
    loop {
        let stripped = PAIRS.iter().find_map(|&(open, close)| {
            text.strip_prefix(open)
                .and_then(|t| t.strip_suffix(close))
                .map(str::trim)
        });
        match stripped {
            Some(inner) => text = inner,
            None => return text,
        }
    }
}

fn lowercase_first(text: &str) -> String {
    let mut chars = text.chars();
    match (chars.next(), chars.clone().next()) {
        (Some(first), Some(second)) if first.is_uppercase() && !second.is_uppercase() => {
            first.to_lowercase().chain(chars).collect()
        }
        _ => text.to_string(),
    }
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Detector query for a part description: the part phrase, single-spaced.
pub fn describe_query(part: &PartDescription) -> String {
    collapse_whitespace(&part.object_part)
}
