//! Per-context TF-IDF ranking and easy/hard routing.
//!
//! Weights: `tf = count / terms_in_segment`, `idf = ln((1 + N) / (1 + df)) + 1`.
//! Vectors are L2-normalized, so a claim/segment score is their cosine and
//! lies in `[0, 1]`.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Tokenizer;

#[derive(Debug, Error, PartialEq)]
pub enum TfidfError {
    #[error("cannot fit TF-IDF on an empty segment list")]
    EmptyCorpus,
}

/// Turns text into index terms: tokenizer output, lower-cased, with
/// punctuation stripped from both ends; empty terms are dropped.
pub fn analyze(text: &str, tokenizer: &dyn Tokenizer) -> Vec<String> {
    tokenizer
        .tokenize(text)
        .into_iter()
        .filter_map(|tok| {
            let term = tok
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            (!term.is_empty()).then_some(term)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TfidfModel {
    vocabulary: HashMap<String, usize>,
    idf: Vec<f64>,
    doc_count: usize,
}

/// Sparse vector sorted by column.
type SparseVec = Vec<(usize, f64)>;

impl TfidfModel {
    pub fn fit<S: AsRef<str>>(segments: &[S], tokenizer: &dyn Tokenizer) -> Result<Self, TfidfError> {
        if segments.is_empty() {
            return Err(TfidfError::EmptyCorpus);
        }
        let mut vocabulary: HashMap<String, usize> = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        for seg in segments {
            let mut terms = analyze(seg.as_ref(), tokenizer);
            terms.sort_unstable();
            terms.dedup();
            for term in terms {
                let next = vocabulary.len();
                let col = *vocabulary.entry(term).or_insert(next);
                if col == df.len() {
                    df.push(0);
                }
                df[col] += 1;
            }
        }
        let n = segments.len() as f64;
        let idf = df
            .iter()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        Ok(Self { vocabulary, idf, doc_count: segments.len() })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&c| self.idf[c])
    }

    /// L2-normalized TF-IDF vector; out-of-vocabulary terms are ignored.
    fn vectorize(&self, text: &str, tokenizer: &dyn Tokenizer) -> SparseVec {
        let terms = analyze(text, tokenizer);
        if terms.is_empty() {
            return Vec::new();
        }
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for t in &terms {
            if let Some(&col) = self.vocabulary.get(t) {
                *counts.entry(col).or_default() += 1;
            }
        }
        let len = terms.len() as f64;
        let mut v: SparseVec = counts
            .into_iter()
            .map(|(col, c)| (col, c as f64 / len * self.idf[col]))
            .collect();
        v.sort_unstable_by_key(|e| e.0);
        let norm = v.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|e| e.1 /= norm);
        }
        v
    }

    /// Cosine similarity of the claim against every segment, best first.
    /// Ties go to the lower segment index.
    pub fn score_claim<S: AsRef<str>>(
        &self,
        claim: &str,
        segments: &[S],
        tokenizer: &dyn Tokenizer,
    ) -> Vec<ScoredSegment> {
        let q = self.vectorize(claim, tokenizer);
        let mut scored: Vec<ScoredSegment> = segments
            .iter()
            .enumerate()
            .map(|(index, seg)| ScoredSegment {
                index,
                score: snap(sparse_dot(&q, &self.vectorize(seg.as_ref(), tokenizer))),
            })
            .collect();
        scored.sort_by(rank_order);
        scored
    }
}

/// Grid that scores are rounded to. Mathematically tied segments can differ
/// in the last bits because their terms are summed in different orders;
/// rounding makes such ties exact so the lower index wins.
const SCORE_GRID: f64 = 1e-12;

fn snap(score: f64) -> f64 {
    ((score / SCORE_GRID).round() * SCORE_GRID).clamp(0.0, 1.0)
}

fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn rank_order(a: &ScoredSegment, b: &ScoredSegment) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

/// A segment position with its claim similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Route {
    /// TF-IDF is confident; its top segment is the evidence.
    Easy(ScoredSegment),
    /// Defer to span extraction.
    Hard,
}

/// `Easy` iff the top score strictly exceeds `threshold`. Infinite
/// thresholds force one route.
pub fn route_by_threshold(ranked: &[ScoredSegment], threshold: f64) -> Route {
    match ranked.first() {
        Some(top) if top.score > threshold => Route::Easy(*top),
        _ => Route::Hard,
    }
}

/// Fits a fresh model over the candidates and returns the index of the one
/// closest to the claim (lowest index on ties). `None` for no candidates.
pub fn rerank<S: AsRef<str>>(candidates: &[S], claim: &str, tokenizer: &dyn Tokenizer) -> Option<usize> {
    let model = TfidfModel::fit(candidates, tokenizer).ok()?;
    model
        .score_claim(claim, candidates, tokenizer)
        .first()
        .map(|s| s.index)
}
