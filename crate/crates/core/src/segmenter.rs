//! Packing sentences into model-sized subcontexts.
//!
//! Sentences are never split. A subcontext grows greedily left to right
//! while the running token total stays within the budget; a sentence that is
//! larger than the budget on its own becomes a single-sentence subcontext.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Tokenizer};

/// An ordered run of consecutive sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubContext {
    pub sentences: Vec<Sentence>,
    pub text: String,
    pub token_count: usize,
}

impl SubContext {
    /// Builds a subcontext from consecutive sentences. Panics on an empty
    /// slice.
    pub fn from_sentences(sentences: &[Sentence]) -> Self {
        assert!(!sentences.is_empty(), "a subcontext needs at least one sentence");
        let mut text = String::new();
        for (i, s) in sentences.iter().enumerate() {
            if i > 0 {
                text.push_str(&sentences[i - 1].separator);
            }
            text.push_str(&s.text);
        }
        Self {
            text,
            token_count: sentences.iter().map(|s| s.token_count).sum(),
            sentences: sentences.to_vec(),
        }
    }

    pub fn single(sentence: &Sentence) -> Self {
        Self::from_sentences(std::slice::from_ref(sentence))
    }

    /// Indices (into the context's sentence list) covered by this subcontext.
    pub fn sentence_range(&self) -> Range<usize> {
        let first = self.sentences[0].index;
        first..first + self.sentences.len()
    }

    /// Token sequence of the subcontext: the concatenation of each
    /// sentence's tokens, which is the coordinate system spans refer to.
    pub fn tokens(&self, tokenizer: &dyn Tokenizer) -> Vec<String> {
        self.sentences
            .iter()
            .flat_map(|s| tokenizer.tokenize(&s.text))
            .collect()
    }

    /// Position (within `self.sentences`) of the sentence holding `token`.
    pub fn sentence_of_token(&self, token: usize) -> Option<usize> {
        let mut offset = 0;
        for (pos, s) in self.sentences.iter().enumerate() {
            offset += s.token_count;
            if token < offset {
                return Some(pos);
            }
        }
        None
    }

    fn absorb(&mut self, other: SubContext) {
        let sep = &self.sentences.last().expect("non-empty").separator;
        self.text.push_str(sep);
        self.text.push_str(&other.text);
        self.token_count += other.token_count;
        self.sentences.extend(other.sentences);
    }
}

/// Greedy disjoint packing under `budget` tokens. A zero budget is treated
/// as one.
pub fn build_subcontexts(sentences: &[Sentence], budget: usize) -> Vec<SubContext> {
    build_subcontexts_with_overlap(sentences, budget, 0)
}

/// Like [`build_subcontexts`], but each new window restarts `overlap`
/// sentences before the end of the previous one (always advancing by at
/// least one sentence). `overlap = 0` gives a partition.
pub fn build_subcontexts_with_overlap(
    sentences: &[Sentence],
    budget: usize,
    overlap: usize,
) -> Vec<SubContext> {
    let budget = budget.max(1);
    let n = sentences.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        let mut total = sentences[start].token_count;
        while end < n && total + sentences[end].token_count <= budget {
            total += sentences[end].token_count;
            end += 1;
        }
        out.push(SubContext::from_sentences(&sentences[start..end]));
        if end == n {
            break;
        }
        start = if overlap == 0 {
            end
        } else {
            end.saturating_sub(overlap).max(start + 1)
        };
    }
    out
}

/// Merges segments shorter than `ratio * claim_token_count` tokens into
/// their predecessor. A short leading segment absorbs its successor instead,
/// so afterwards only a lone remaining segment can still be short.
pub fn merge_short_segments(
    segments: Vec<SubContext>,
    claim_token_count: usize,
    ratio: f64,
) -> Vec<SubContext> {
    let min_tokens = ratio * claim_token_count.max(1) as f64;
    let is_short = |s: &SubContext| (s.token_count as f64) < min_tokens;
    let mut out: Vec<SubContext> = Vec::with_capacity(segments.len());
    for seg in segments {
        match out.last_mut() {
            Some(prev) if is_short(&seg) || is_short(prev) => prev.absorb(seg),
            _ => out.push(seg),
        }
    }
    out
}

/// A chunk of one record's subcontexts, scored together in batched mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentBatch {
    pub origin_record: String,
    /// Position of the first subcontext within the record's full list.
    pub offset: usize,
    pub subcontexts: Vec<SubContext>,
}

/// Splits subcontexts into order-preserving chunks of at most `batch_size`.
pub fn batch_subcontexts(
    subcontexts: &[SubContext],
    batch_size: usize,
    origin_record: &str,
) -> Vec<SegmentBatch> {
    let batch_size = batch_size.max(1);
    subcontexts
        .chunks(batch_size)
        .enumerate()
        .map(|(i, chunk)| SegmentBatch {
            origin_record: origin_record.to_string(),
            offset: i * batch_size,
            subcontexts: chunk.to_vec(),
        })
        .collect()
}
