//! Token-classification evidence scoring.
//!
//! A scorer emits a probability per subcontext token (and optionally a
//! span). Probabilities become at most one span per subcontext, the span is
//! snapped to a full sentence, and the per-subcontext candidates are
//! arbitrated into a single evidence sentence.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::{normalize_text, Sentence, Tokenizer};
use crate::segmenter::{SegmentBatch, SubContext};
use crate::tfidf;
use crate::verdict::PROB_EPS;

#[derive(Debug, Error, PartialEq)]
pub enum EvidenceError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label length {labels} differs from probability length {probs}")]
    LengthMismatch { labels: usize, probs: usize },
    #[error("span {start}..={end} outside a subcontext of {tokens} tokens")]
    SpanOutOfRange { start: usize, end: usize, tokens: usize },
}

/// Inclusive token span in subcontext coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenScores {
    pub probs: Vec<f64>,
    pub span: Option<TokenSpan>,
}

impl TokenScores {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self { probs, span: None }
    }

    /// Checks probability range and span bounds against `token_count`.
    /// Probabilities may be omitted when a span is given.
    pub fn validate(&self, token_count: usize) -> Result<(), String> {
        if !(self.probs.len() == token_count || (self.probs.is_empty() && self.span.is_some())) {
            return Err(format!(
                "{} probabilities for {token_count} tokens",
                self.probs.len()
            ));
        }
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
        if let Some(s) = self.span {
            if s.start > s.end || s.end >= token_count {
                return Err(format!("span {}..={} outside {token_count} tokens", s.start, s.end));
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bias-free two-layer token head: `σ(W2 · ReLU(W1 h))`.
///
/// `w1` is `d1 × d`, `w2` is `1 × d1`, `h` has length `d`.
pub fn token_probability(
    h: ArrayView1<f64>,
    w1: ArrayView2<f64>,
    w2: ArrayView2<f64>,
) -> Result<f64, EvidenceError> {
    let (d1, d) = w1.dim();
    if h.len() != d || w2.dim() != (1, d1) {
        return Err(EvidenceError::DimensionMismatch(format!(
            "h: {}, W1: {d1}x{d}, W2: {}x{}",
            h.len(),
            w2.nrows(),
            w2.ncols()
        )));
    }
    let hidden = w1.dot(&h).mapv(|x| x.max(0.0));
    Ok(sigmoid(w2.row(0).dot(&hidden)))
}

/// Mean per-token binary cross-entropy with `p` clamped to `[ε, 1-ε]`.
pub fn rationale_tagging_loss(labels: &[f64], probs: &[f64]) -> Result<f64, EvidenceError> {
    if labels.len() != probs.len() || labels.is_empty() {
        return Err(EvidenceError::LengthMismatch { labels: labels.len(), probs: probs.len() });
    }
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Analytic gradient of [`rationale_tagging_loss`] with respect to each
/// probability: `(p - y) / (T p (1 - p))`, valid away from the clamp.
pub fn rationale_tagging_grad(labels: &[f64], probs: &[f64]) -> Result<Vec<f64>, EvidenceError> {
    if labels.len() != probs.len() || labels.is_empty() {
        return Err(EvidenceError::LengthMismatch { labels: labels.len(), probs: probs.len() });
    }
    let t = labels.len() as f64;
    Ok(labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| (p - y) / (t * p * (1.0 - p)))
        .collect())
}

/// Span chosen for one subcontext. A backend-provided span wins; otherwise
/// the longest run of tokens with `p >= threshold` (earliest on ties), with
/// the run's mean probability as confidence.
pub fn extract_span(scores: &TokenScores, threshold: f64) -> Option<TokenSpan> {
    if scores.span.is_some() {
        return scores.span;
    }
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for i in 0..=scores.probs.len() {
        let hit = scores.probs.get(i).is_some_and(|&p| p >= threshold);
        match (hit, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(bs, be)| i - s > be + 1 - bs) {
                    best = Some((s, i - 1));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    best.map(|(start, end)| TokenSpan {
        start,
        end,
        confidence: scores.probs[start..=end].iter().sum::<f64>() / (end + 1 - start) as f64,
    })
}

/// Sentence index (in the context) that a span belongs to: the sentence
/// holding most of the span's tokens, the earlier one on ties.
pub fn map_span_to_sentence(span: &TokenSpan, subcontext: &SubContext) -> Result<usize, EvidenceError> {
    if span.start > span.end || span.end >= subcontext.token_count {
        return Err(EvidenceError::SpanOutOfRange {
            start: span.start,
            end: span.end,
            tokens: subcontext.token_count,
        });
    }
    let mut best = (0usize, 0usize);
    let mut offset = 0;
    for s in &subcontext.sentences {
        let lo = span.start.max(offset);
        let hi = (span.end + 1).min(offset + s.token_count);
        let overlap = hi.saturating_sub(lo);
        if overlap > best.1 {
            best = (s.index, overlap);
        }
        offset += s.token_count;
    }
    Ok(best.0)
}

/// One subcontext's proposal, already snapped to a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub subcontext_index: usize,
    pub sentence_index: usize,
    pub raw_span: TokenSpan,
}

/// Collects candidates from per-subcontext scores.
pub fn collect_candidates(
    subcontexts: &[SubContext],
    scores: &[TokenScores],
    threshold: f64,
) -> Result<Vec<SpanCandidate>, EvidenceError> {
    let mut out = Vec::new();
    for (i, (sub, sc)) in subcontexts.iter().zip(scores).enumerate() {
        if let Some(span) = extract_span(sc, threshold) {
            out.push(SpanCandidate {
                subcontext_index: i,
                sentence_index: map_span_to_sentence(&span, sub)?,
                raw_span: span,
            });
        }
    }
    Ok(out)
}

/// Where the final evidence sentence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvidenceSource {
    /// Confident TF-IDF match, no span extraction.
    Tfidf,
    /// Exactly one sentence proposed by span extraction.
    Qatc,
    /// Several sentences proposed; TF-IDF picked among them.
    QatcReranked,
    /// Nothing proposed; the TF-IDF choice stands.
    TfidfFallback,
}

impl EvidenceSource {
    /// True for every path that invoked the span scorer.
    pub fn is_hard(self) -> bool {
        self != EvidenceSource::Tfidf
    }
}

/// Reduces candidates to one sentence index.
///
/// No distinct sentence: `fallback`. One: that sentence. Several: the
/// TF-IDF rerank winner among them against the claim (ties to the lowest
/// sentence index).
pub fn arbitrate(
    candidates: &[SpanCandidate],
    claim: &str,
    sentences: &[Sentence],
    fallback: usize,
    tokenizer: &dyn Tokenizer,
) -> (usize, EvidenceSource) {
    let mut distinct: Vec<usize> = candidates.iter().map(|c| c.sentence_index).collect();
    distinct.sort_unstable();
    distinct.dedup();
    match distinct.as_slice() {
        [] => (fallback, EvidenceSource::TfidfFallback),
        [only] => (*only, EvidenceSource::Qatc),
        many => {
            let texts: Vec<&str> = many.iter().map(|&i| sentences[i].text.as_str()).collect();
            let pick = tfidf::rerank(&texts, claim, tokenizer).unwrap_or(0);
            (many[pick], EvidenceSource::QatcReranked)
        }
    }
}

/// Token-level evidence model.
///
/// `batch_score` must return exactly what mapping `score` over the batch
/// would; batched pipelines rely on that to stay output-identical.
pub trait EvidenceScorer: Send + Sync {
    fn score(&self, claim: &str, subcontext: &SubContext) -> Result<TokenScores, BackendError>;

    fn batch_score(&self, claim: &str, batch: &SegmentBatch) -> Result<Vec<TokenScores>, BackendError> {
        batch.subcontexts.iter().map(|s| self.score(claim, s)).collect()
    }
}

/// Table-driven scorer: every token of a sentence gets the probability
/// registered for `(claim, sentence)`, or 0.
#[derive(Debug, Default)]
pub struct MockEvidenceScorer {
    table: HashMap<(String, String), f64>,
    score_calls: AtomicUsize,
    batch_calls: AtomicUsize,
}

impl MockEvidenceScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, claim: &str, sentence: &str, prob: f64) {
        self.table
            .insert((normalize_text(claim), normalize_text(sentence)), prob.clamp(0.0, 1.0));
    }

    pub fn with(mut self, claim: &str, sentence: &str, prob: f64) -> Self {
        self.insert(claim, sentence, prob);
        self
    }

    pub fn score_calls(&self) -> usize {
        self.score_calls.load(Ordering::Relaxed)
    }

    pub fn batch_calls(&self) -> usize {
        self.batch_calls.load(Ordering::Relaxed)
    }

    fn emit(&self, claim: &str, subcontext: &SubContext) -> TokenScores {
        let claim = normalize_text(claim);
        let mut probs = Vec::with_capacity(subcontext.token_count);
        for s in &subcontext.sentences {
            let p = self
                .table
                .get(&(claim.clone(), normalize_text(&s.text)))
                .copied()
                .unwrap_or(0.0);
            probs.extend(std::iter::repeat_n(p, s.token_count));
        }
        TokenScores::from_probs(probs)
    }
}

impl EvidenceScorer for MockEvidenceScorer {
    fn score(&self, claim: &str, subcontext: &SubContext) -> Result<TokenScores, BackendError> {
        self.score_calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.emit(claim, subcontext))
    }

    fn batch_score(&self, claim: &str, batch: &SegmentBatch) -> Result<Vec<TokenScores>, BackendError> {
        self.batch_calls.fetch_add(1, Ordering::Relaxed);
        Ok(batch.subcontexts.iter().map(|s| self.emit(claim, s)).collect())
    }
}
