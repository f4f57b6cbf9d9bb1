//! Rule-based sentence splitting and statement decomposition.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Decomposer, JudgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Paragraph,
    Sentence,
    AtomicClaim,
}

impl std::str::FromStr for Granularity {
    type Err = JudgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paragraph" => Ok(Self::Paragraph),
            "sentence" => Ok(Self::Sentence),
            "atomic_claim" | "claim" => Ok(Self::AtomicClaim),
            other => Err(JudgeError::InvalidInput(format!(
                "unknown granularity {other}"
            ))),
        }
    }
}

/// A unit of text to be checked. `span` holds byte offsets into the parent
/// answer; for atomic claims it is the span of the originating sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub granularity: Granularity,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub statements: Vec<Statement>,
    pub warnings: Vec<String>,
}

/// Lower-case tokens that end with a period without ending a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "ca", "cf", "co", "corp", "dr", "e.g", "eg", "et", "etc", "fig", "figs", "i.e",
    "ie", "inc", "jr", "ltd", "mr", "mrs", "ms", "prof", "resp", "sr", "st", "u.s", "vs", "viz",
    "vol",
];

const TERMINALS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 5] = ['"', '\'', ')', ']', '\u{201d}'];

fn word_before(text: &str, dot: usize) -> &str {
    let head = &text[..dot];
    let start = head
        .rfind(|c: char| c.is_whitespace() || c == '(' || c == '"')
        .map_or(0, |i| {
            i + head[i..].chars().next().map_or(1, char::len_utf8)
        });
    &head[start..]
}

fn is_guarded(text: &str, dot: usize) -> bool {
    let word = word_before(text, dot);
    if word.is_empty() {
        return false;
    }
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // single capital initial followed by a capitalized word: "J. Smith"
    let mut chars = word.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_uppercase() {
            let rest = text[dot + 1..].trim_start();
            return rest.chars().next().is_some_and(char::is_uppercase);
        }
    }
    false
}

/// Byte spans of the sentences in `text`, trimmed of surrounding whitespace.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus closing quotes or
/// brackets) followed by whitespace or end of text. A period does not end a
/// sentence after a listed abbreviation or a capital initial that precedes a
/// capitalized word. Decimal points are never followed by whitespace and so
/// never split.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !TERMINALS.contains(&c) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && (TERMINALS.contains(&chars[j].1) || CLOSERS.contains(&chars[j].1))
        {
            j += 1;
        }
        let at_end = j == chars.len();
        let boundary = at_end || chars[j].1.is_whitespace();
        let guarded = c == '.' && j == i + 1 && is_guarded(text, pos);
        if boundary && !guarded {
            let end = if at_end { text.len() } else { chars[j].0 };
            push_trimmed(text, start, end, &mut spans);
            start = end;
        }
        i = j;
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        out.push((start + lead, start + lead + trimmed.len()));
    }
}

pub fn split_sentences(text: &str) -> Vec<Statement> {
    sentence_spans(text)
        .into_iter()
        .map(|(s, e)| Statement {
            text: text[s..e].to_string(),
            granularity: Granularity::Sentence,
            span: (s, e),
        })
        .collect()
}

/// Lower-cased, whitespace-collapsed text without trailing punctuation.
pub fn normalize_claim(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

pub fn decompose(
    answer: &str,
    level: Granularity,
    decomposer: Option<&dyn Decomposer>,
) -> Result<Decomposition> {
    if answer.trim().is_empty() {
        return Err(JudgeError::InvalidInput("empty answer".into()));
    }
    match level {
        Granularity::Paragraph => {
            let (s, e) = {
                let mut v = Vec::new();
                push_trimmed(answer, 0, answer.len(), &mut v);
                v[0]
            };
            Ok(Decomposition {
                statements: vec![Statement {
                    text: answer[s..e].to_string(),
                    granularity: Granularity::Paragraph,
                    span: (s, e),
                }],
                warnings: Vec::new(),
            })
        }
        Granularity::Sentence => Ok(Decomposition {
            statements: split_sentences(answer),
            warnings: Vec::new(),
        }),
        Granularity::AtomicClaim => {
            let sentences = split_sentences(answer);
            let Some(decomposer) = decomposer else {
                return Ok(Decomposition {
                    statements: sentences,
                    warnings: vec!["no decomposer configured; using sentences".into()],
                });
            };
            let mut seen = HashSet::new();
            let mut claims = Vec::new();
            for sentence in &sentences {
                match decomposer.decompose(&sentence.text) {
                    Ok(parts) => {
                        for part in parts {
                            let text = part.trim();
                            if text.is_empty() || !seen.insert(normalize_claim(text)) {
                                continue;
                            }
                            claims.push(Statement {
                                text: text.to_string(),
                                granularity: Granularity::AtomicClaim,
                                span: sentence.span,
                            });
                        }
                    }
                    Err(e) => {
                        return Ok(Decomposition {
                            statements: sentences,
                            warnings: vec![format!(
                                "claim decomposition failed ({e}); using sentences"
                            )],
                        })
                    }
                }
            }
            Ok(Decomposition {
                statements: claims,
                warnings: Vec::new(),
            })
        }
    }
}
