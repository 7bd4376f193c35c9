//! Shared domain types: field labels, word tokens, labeled citations and
//! field spans, plus the word tokenizer and span/label conversions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of field labels.
pub const NUM_LABELS: usize = 5;

/// Citation field label. The discriminant order is the persisted label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldLabel {
    Author,
    Title,
    Venue,
    Year,
    Other,
}

impl FieldLabel {
    pub const ALL: [FieldLabel; NUM_LABELS] = [
        FieldLabel::Author,
        FieldLabel::Title,
        FieldLabel::Venue,
        FieldLabel::Year,
        FieldLabel::Other,
    ];

    /// The four labels that count as fields (everything but `Other`).
    pub const FIELDS: [FieldLabel; 4] = [
        FieldLabel::Author,
        FieldLabel::Title,
        FieldLabel::Venue,
        FieldLabel::Year,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FieldLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldLabel::Author => "author",
            FieldLabel::Title => "title",
            FieldLabel::Venue => "venue",
            FieldLabel::Year => "year",
            FieldLabel::Other => "other",
        }
    }
}

impl fmt::Display for FieldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown field label `{s}`")))
    }
}

/// A word token. Offsets are character (not byte) positions in the source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Task,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledCitation {
    pub source: String,
    pub tokens: Vec<Token>,
    pub labels: Vec<FieldLabel>,
    pub origin: Origin,
}

impl LabeledCitation {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Copy of this citation with word `i` removed. Offsets of the remaining
    /// tokens still refer to the unmodified source string.
    pub fn without_word(&self, i: usize) -> LabeledCitation {
        let mut out = self.clone();
        out.tokens.remove(i);
        out.labels.remove(i);
        out
    }

    /// Source text covered by a span, from the first token's start to the
    /// last token's end.
    pub fn span_text(&self, span: &FieldSpan) -> String {
        let start = self.tokens[span.start].char_start;
        let end = self.tokens[span.end - 1].char_end;
        char_slice(&self.source, start, end).to_string()
    }
}

/// A maximal run of one non-`Other` label over token indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldSpan {
    pub label: FieldLabel,
    pub start: usize,
    pub end: usize,
}

impl FieldSpan {
    pub fn new(label: FieldLabel, start: usize, end: usize) -> Self {
        FieldSpan { label, start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// All maximal runs of non-`Other` labels, in order.
pub fn spans_from_labels(labels: &[FieldLabel]) -> Vec<FieldSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let label = labels[i];
        let mut j = i + 1;
        while j < labels.len() && labels[j] == label {
            j += 1;
        }
        if label != FieldLabel::Other {
            spans.push(FieldSpan::new(label, i, j));
        }
        i = j;
    }
    spans
}

/// Paint spans onto an all-`Other` label vector of length `n`.
pub fn labels_from_spans(spans: &[FieldSpan], n: usize) -> Vec<FieldLabel> {
    let mut labels = vec![FieldLabel::Other; n];
    for span in spans {
        for l in &mut labels[span.start..span.end.min(n)] {
            *l = span.label;
        }
    }
    labels
}

/// One violated citation invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    LengthMismatch {
        tokens: usize,
        labels: usize,
    },
    EmptySpan {
        token: usize,
    },
    OutOfOrder {
        token: usize,
    },
    OutOfBounds {
        token: usize,
    },
    TextMismatch {
        token: usize,
        expected: String,
        found: String,
    },
    EmptyText {
        token: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "citation has no tokens"),
            Violation::LengthMismatch { tokens, labels } => {
                write!(f, "length mismatch: {tokens} tokens vs {labels} labels")
            }
            Violation::EmptySpan { token } => write!(f, "token {token}: char_end <= char_start"),
            Violation::OutOfOrder { token } => {
                write!(f, "token {token}: overlaps or precedes the previous token")
            }
            Violation::OutOfBounds { token } => write!(f, "token {token}: span exceeds source"),
            Violation::TextMismatch {
                token,
                expected,
                found,
            } => {
                write!(
                    f,
                    "token {token}: text `{found}` but source has `{expected}`"
                )
            }
            Violation::EmptyText { token } => write!(f, "token {token}: empty text"),
        }
    }
}

/// Check every citation invariant; an empty list means the citation is valid.
pub fn validate_citation(c: &LabeledCitation) -> Vec<Violation> {
    let mut out = Vec::new();
    if c.tokens.is_empty() {
        out.push(Violation::Empty);
    }
    if c.tokens.len() != c.labels.len() {
        out.push(Violation::LengthMismatch {
            tokens: c.tokens.len(),
            labels: c.labels.len(),
        });
    }
    let source_len = c.source.chars().count();
    let mut prev_end = 0usize;
    for (i, t) in c.tokens.iter().enumerate() {
        if t.text.is_empty() {
            out.push(Violation::EmptyText { token: i });
        }
        if t.char_end <= t.char_start {
            out.push(Violation::EmptySpan { token: i });
            continue;
        }
        if i > 0 && t.char_start < prev_end {
            out.push(Violation::OutOfOrder { token: i });
        }
        prev_end = t.char_end;
        if t.char_end > source_len {
            out.push(Violation::OutOfBounds { token: i });
            continue;
        }
        let expected = char_slice(&c.source, t.char_start, t.char_end);
        if expected != t.text {
            out.push(Violation::TextMismatch {
                token: i,
                expected: expected.to_string(),
                found: t.text.clone(),
            });
        }
    }
    out
}

/// Substring over character positions `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let mut indices = s
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(s.len()));
    let b_start = indices.nth(start).unwrap_or(s.len());
    let b_end = if end > start {
        indices.nth(end - start - 1).unwrap_or(s.len())
    } else {
        b_start
    };
    &s[b_start..b_end]
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Word-level tokenization: whitespace separates tokens, every other
/// non-alphanumeric character is a token of its own.
pub fn tokenize(source: &str) -> Vec<Token> {
    tokenize_with_breaks(source, &[])
}

/// Like [`tokenize`], but also forces token boundaries at the given
/// character positions.
pub fn tokenize_with_breaks(source: &str, breaks: &[usize]) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0usize;
    let flush = |current: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(current),
                char_start: start,
                char_end: end,
            });
        }
    };
    for (pos, ch) in source.chars().enumerate() {
        if breaks.contains(&pos) {
            flush(&mut current, start, pos, &mut tokens);
        }
        if ch.is_whitespace() {
            flush(&mut current, start, pos, &mut tokens);
        } else if is_word_char(ch) {
            if current.is_empty() {
                start = pos;
            }
            current.push(ch);
        } else {
            flush(&mut current, start, pos, &mut tokens);
            tokens.push(Token {
                text: ch.to_string(),
                char_start: pos,
                char_end: pos + 1,
            });
        }
    }
    let end = source.chars().count();
    flush(&mut current, start, end, &mut tokens);
    tokens
}

/// Collapse runs of whitespace to single spaces and trim.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
