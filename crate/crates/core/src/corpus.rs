//! Dataset ingestion, text normalization, tokenization and sentence splitting.
//!
//! Every downstream stage (segmentation, TF-IDF, span mapping, scoring) goes
//! through the same [`Tokenizer`] and the same [`normalize_text`], so token
//! counts and evidence comparisons agree across the whole pipeline.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::verdict::Verdict;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is not a valid JSON record array: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed record {id}: {reason}")]
    MalformedRecord { id: String, reason: String },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
}

/// One dataset sample: a claim, the context it is checked against, and the
/// optional gold annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub id: String,
    pub claim: String,
    pub context: String,
    #[serde(rename = "verdict", default, skip_serializing_if = "Option::is_none")]
    pub gold_verdict: Option<Verdict>,
    #[serde(rename = "evidence", default, skip_serializing_if = "Option::is_none")]
    pub gold_evidence: Option<String>,
}

impl VerificationRecord {
    /// Checks the label/evidence invariants. Empty evidence strings are
    /// expected to have been canonicalized to `None` already.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let malformed = |reason: &str| CorpusError::MalformedRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(malformed("empty id"));
        }
        match (self.gold_verdict, &self.gold_evidence) {
            (Some(Verdict::Nei), Some(_)) => Err(malformed("NEI record carries evidence")),
            (Some(Verdict::Supported | Verdict::Refuted), None) => {
                Err(malformed("labelled record has no evidence"))
            }
            (_, Some(evidence)) => {
                let evidence = normalize_text(evidence);
                if evidence.is_empty() || !normalize_text(&self.context).contains(&evidence) {
                    Err(malformed("evidence not found in context"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    context: String,
    claim: String,
    #[serde(default)]
    verdict: Option<Verdict>,
    #[serde(default)]
    evidence: Option<String>,
}

/// Parses a dataset document (top-level JSON array of records).
///
/// Null and empty-string evidence both become `None`. Record order is kept.
pub fn parse_dataset(json: &str) -> Result<Vec<VerificationRecord>, CorpusError> {
    let raw: Vec<RawRecord> = serde_json::from_str(json)?;
    let mut seen = HashSet::with_capacity(raw.len());
    let mut records = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.id.clone()) {
            return Err(CorpusError::DuplicateId(r.id));
        }
        let record = VerificationRecord {
            id: r.id,
            claim: r.claim,
            context: r.context,
            gold_verdict: r.verdict,
            gold_evidence: r.evidence.filter(|e| !e.trim().is_empty()),
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Reads and validates a dataset file.
pub fn ingest_dataset(path: impl AsRef<Path>) -> Result<Vec<VerificationRecord>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(text.strip_prefix('\u{FEFF}').unwrap_or(&text))
}

/// NFC-normalizes, collapses whitespace runs to a single space and trims.
/// No other characters are touched.
pub fn normalize_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Splits text into tokens. Implementations must be deterministic and map
/// the empty string to an empty token list.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Splits on Unicode whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_owned).collect()
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// A sentence of a normalized context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub token_count: usize,
    /// Byte range of `text` inside the context it was split from.
    pub span: (usize, usize),
    /// Whitespace between this sentence and the next one (or the end of the
    /// context).
    pub separator: String,
}

/// Inverse of [`split_sentences`] on normalized input.
pub fn join_sentences(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.text);
        out.push_str(&s.separator);
    }
    out
}

const TERMINALS: &[char] = &['.', '!', '?', '…'];
const CLOSERS: &[char] = &['"', '\'', '”', '’', ')', ']', '»'];
const OPENERS: &[char] = &['"', '\'', '“', '‘', '(', '[', '«'];

// Lower-cased words that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "mt", "gen", "col", "lt", "sgt",
    "capt", "rev", "inc", "ltd", "co", "corp", "jan", "feb", "mar", "apr", "jun", "jul", "aug",
    "sep", "sept", "oct", "nov", "dec", "fig", "approx", "tp", "gs", "pgs", "ts", "ths", "bs",
    "ks", "tt",
];

fn is_abbreviation(word: &str) -> bool {
    let word = word.trim_start_matches(OPENERS);
    let mut chars = word.chars();
    match (chars.next(), chars.next()) {
        (None, _) => false,
        // single initial: "J. Smith"
        (Some(c), None) => c.is_uppercase(),
        _ => {
            // dotted forms such as "e.g" or "D.C"
            word.contains('.') || ABBREVIATIONS.contains(&word.to_lowercase().as_str())
        }
    }
}

/// Splits a normalized context into sentences.
///
/// A boundary is a run of `. ! ? …` (plus optional closing quotes or
/// brackets) followed by whitespace and then an uppercase letter or digit,
/// possibly behind an opening quote. A lone `.` after a known abbreviation or
/// a single-letter initial is not a boundary. Text without any boundary is
/// one sentence.
pub fn split_sentences(context: &str, tokenizer: &dyn Tokenizer) -> Vec<Sentence> {
    let chars: Vec<(usize, char)> = context.char_indices().collect();
    let n = chars.len();
    let byte_at = |i: usize| if i < n { chars[i].0 } else { context.len() };

    // (start, end) char-index pairs of sentence bodies.
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < n && chars[start].1.is_whitespace() {
        start += 1;
    }
    let mut i = start;
    while i < n {
        if !TERMINALS.contains(&chars[i].1) {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && TERMINALS.contains(&chars[i].1) {
            i += 1;
        }
        let single_period = i - run_start == 1 && chars[run_start].1 == '.';
        while i < n && CLOSERS.contains(&chars[i].1) {
            i += 1;
        }
        let end = i;
        let mut j = i;
        while j < n && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j == end || j >= n {
            continue;
        }
        let mut k = j;
        while k < n && OPENERS.contains(&chars[k].1) {
            k += 1;
        }
        let starts_sentence = k < n && (chars[k].1.is_uppercase() || chars[k].1.is_numeric());
        if !starts_sentence {
            continue;
        }
        if single_period {
            let word_start = (start..run_start)
                .rev()
                .find(|&w| chars[w].1.is_whitespace())
                .map_or(start, |w| w + 1);
            let word = &context[byte_at(word_start)..byte_at(run_start)];
            if is_abbreviation(word) {
                continue;
            }
        }
        bounds.push((start, end));
        start = j;
        i = j;
    }
    if start < n {
        let mut end = n;
        while end > start && chars[end - 1].1.is_whitespace() {
            end -= 1;
        }
        bounds.push((start, end));
    }

    let mut sentences = Vec::with_capacity(bounds.len());
    for (idx, &(s, e)) in bounds.iter().enumerate() {
        let next = bounds.get(idx + 1).map_or(n, |b| b.0);
        let text = &context[byte_at(s)..byte_at(e)];
        sentences.push(Sentence {
            index: idx,
            text: text.to_string(),
            token_count: tokenizer.count(text),
            span: (byte_at(s), byte_at(e)),
            separator: context[byte_at(e)..byte_at(next)].to_string(),
        });
    }
    sentences
}
