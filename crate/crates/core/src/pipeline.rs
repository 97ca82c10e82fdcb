//! End-to-end verification of one record or a whole corpus.
//!
//! Flow per record:
//! 1. split the context, merge short sentences, rank the merged segments
//!    against the claim with TF-IDF;
//! 2. if the top score beats the threshold, its best sentence is the
//!    evidence; otherwise score subcontexts with the evidence model and
//!    arbitrate the candidates;
//! 3. run the three-class classifier, and the binary one unless NEI.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::{normalize_text, split_sentences, Sentence, Tokenizer, VerificationRecord, WhitespaceTokenizer};
use crate::evidence::{arbitrate, collect_candidates, EvidenceError, EvidenceScorer, EvidenceSource, TokenScores};
use crate::segmenter::{batch_subcontexts, build_subcontexts_with_overlap, merge_short_segments, SubContext};
use crate::tfidf::{route_by_threshold, Route, TfidfModel};
use crate::verdict::{combine_one_step, combine_with, CombinerWeights, Verdict, VerdictClassifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Sequential subcontext scoring.
    Full,
    /// Batched subcontext scoring; output-identical to `Full`.
    Faster,
    /// Never invokes the evidence model.
    TfidfOnly,
    /// Three-class argmax only, no binary stage.
    OneStep,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Faster => "faster",
            Mode::TfidfOnly => "tfidf-only",
            Mode::OneStep => "one-step",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown mode {s:?} (full, faster, tfidf-only, one-step)"))
    }
}

/// Where scoring requests go. `target` is `"mock"`, `"mock-gold"` or a
/// base URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub target: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self { target: "mock".into(), timeout_ms: 30_000, max_retries: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub token_budget: usize,
    /// Sentences shared between consecutive subcontexts; 0 = disjoint.
    pub subcontext_overlap: usize,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub tfidf_threshold: f64,
    pub merge_ratio: f64,
    pub span_threshold: f64,
    pub batch_size: usize,
    pub mode: Mode,
    pub weights: CombinerWeights,
    pub focal_gamma: f64,
    pub focal_alpha: [f64; 2],
    pub backend: BackendSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            token_budget: 400,
            subcontext_overlap: 0,
            tfidf_threshold: 0.5,
            merge_ratio: 0.6,
            span_threshold: 0.5,
            batch_size: 8,
            mode: Mode::Full,
            weights: CombinerWeights::default(),
            focal_gamma: 2.0,
            focal_alpha: [1.0, 1.0],
            backend: BackendSettings::default(),
        }
    }
}

/// Parses a threshold, accepting `inf`, `+inf` and `-inf`.
pub fn parse_threshold(s: &str) -> Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| format!("invalid threshold {s:?}")),
    }
}

pub fn format_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        t.to_string()
    }
}

fn ser_threshold<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_f64(*t)
    } else {
        s.serialize_str(&format_threshold(*t))
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(s) => parse_threshold(&s).map_err(serde::de::Error::custom),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("token_budget must be at least 1")]
    Budget,
    #[error("batch_size must be at least 1")]
    BatchSize,
    #[error("{0} must lie in [0, 1]")]
    Range(&'static str),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.token_budget == 0 {
            return Err(ConfigError::Budget);
        }
        if self.batch_size == 0 {
            return Err(ConfigError::BatchSize);
        }
        let t = self.tfidf_threshold;
        if !(t.is_infinite() || (0.0..=1.0).contains(&t)) {
            return Err(ConfigError::Range("tfidf_threshold"));
        }
        if !(0.0..=1.0).contains(&self.span_threshold) {
            return Err(ConfigError::Range("span_threshold"));
        }
        if !(0.0..=1.0).contains(&self.merge_ratio) {
            return Err(ConfigError::Range("merge_ratio"));
        }
        Ok(())
    }
}

/// Pipeline stage, for error attribution and timings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Evidence,
    ThreeClass,
    Binary,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Evidence => "evidence",
            Stage::ThreeClass => "three_class",
            Stage::Binary => "binary",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("backend unavailable during {stage}: {source}")]
    BackendUnavailable {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("context has no sentences")]
    EmptyContext,
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

/// Per-stage wall-clock time in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub segmentation_ms: f64,
    pub tfidf_ms: f64,
    pub qatc_ms: f64,
    pub verdict_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.segmentation_ms + self.tfidf_ms + self.qatc_ms + self.verdict_ms
    }

    fn add(&mut self, other: &StageTimings) {
        self.segmentation_ms += other.segmentation_ms;
        self.tfidf_ms += other.tfidf_ms;
        self.qatc_ms += other.qatc_ms;
        self.verdict_ms += other.verdict_ms;
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub record_id: String,
    pub verdict: Verdict,
    /// Full sentence of the normalized context.
    pub evidence: String,
    pub evidence_index: usize,
    pub source: EvidenceSource,
    pub timings: StageTimings,
}

impl VerificationResult {
    /// Equality on everything except timings.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.record_id == other.record_id
            && self.verdict == other.verdict
            && self.evidence == other.evidence
            && self.evidence_index == other.evidence_index
            && self.source == other.source
    }
}

/// A pipeline bound to its tokenizer and scoring backends.
#[derive(Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    tokenizer: Arc<dyn Tokenizer>,
    evidence: Arc<dyn EvidenceScorer>,
    classifier: Arc<dyn VerdictClassifier>,
}

struct TfidfPick {
    route: Route,
    /// Best single sentence inside the top-ranked merged segment.
    sentence: usize,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        evidence: Arc<dyn EvidenceScorer>,
        classifier: Arc<dyn VerdictClassifier>,
    ) -> Self {
        Self::with_tokenizer(config, Arc::new(WhitespaceTokenizer), evidence, classifier)
    }

    pub fn with_tokenizer(
        config: PipelineConfig,
        tokenizer: Arc<dyn Tokenizer>,
        evidence: Arc<dyn EvidenceScorer>,
        classifier: Arc<dyn VerdictClassifier>,
    ) -> Self {
        Self { config, tokenizer, evidence, classifier }
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    /// Runs the variant selected by `config.mode`.
    pub fn run(&self, record: &VerificationRecord) -> Result<VerificationResult, PipelineError> {
        match self.config.mode {
            Mode::Faster => self.verify_faster(record),
            _ => self.verify(record),
        }
    }

    /// Sequential variant: one scorer call per subcontext.
    pub fn verify(&self, record: &VerificationRecord) -> Result<VerificationResult, PipelineError> {
        self.verify_inner(record, |claim, subs| {
            subs.iter().map(|s| self.evidence.score(claim, s)).collect()
        })
    }

    /// Batched variant: one `batch_score` call per `batch_size` subcontexts.
    pub fn verify_faster(&self, record: &VerificationRecord) -> Result<VerificationResult, PipelineError> {
        self.verify_inner(record, |claim, subs| {
            let mut out = Vec::with_capacity(subs.len());
            for batch in batch_subcontexts(subs, self.config.batch_size, &record.id) {
                let scores = self.evidence.batch_score(claim, &batch)?;
                if scores.len() != batch.subcontexts.len() {
                    return Err(BackendError::Schema(format!(
                        "{} results for a batch of {}",
                        scores.len(),
                        batch.subcontexts.len()
                    )));
                }
                out.extend(scores);
            }
            Ok(out)
        })
    }

    fn tfidf_pick(&self, claim: &str, sentences: &[Sentence]) -> TfidfPick {
        let tok = self.tokenizer();
        let singles: Vec<SubContext> = sentences.iter().map(SubContext::single).collect();
        let segments = merge_short_segments(singles, tok.count(claim), self.config.merge_ratio);
        let texts: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
        let model = TfidfModel::fit(&texts, tok).expect("at least one segment");
        let ranked = model.score_claim(claim, &texts, tok);
        let threshold = match self.config.mode {
            Mode::TfidfOnly => f64::NEG_INFINITY,
            _ => self.config.tfidf_threshold,
        };
        let route = route_by_threshold(&ranked, threshold);
        let top = &segments[ranked[0].index];
        let sentence = if top.sentences.len() == 1 {
            top.sentences[0].index
        } else {
            let inner: Vec<&str> = top.sentences.iter().map(|s| s.text.as_str()).collect();
            let best = model.score_claim(claim, &inner, tok)[0].index;
            top.sentences[best].index
        };
        TfidfPick { route, sentence }
    }

    fn verify_inner(
        &self,
        record: &VerificationRecord,
        score_all: impl FnOnce(&str, &[SubContext]) -> Result<Vec<TokenScores>, BackendError>,
    ) -> Result<VerificationResult, PipelineError> {
        record
            .validate()
            .map_err(|e| PipelineError::InvalidRecord(e.to_string()))?;
        let mut timings = StageTimings::default();
        let tok = self.tokenizer();

        let t0 = Instant::now();
        let claim = normalize_text(&record.claim);
        let context = normalize_text(&record.context);
        let sentences = split_sentences(&context, tok);
        timings.segmentation_ms = ms(t0.elapsed());
        if sentences.is_empty() {
            return Err(PipelineError::EmptyContext);
        }

        let t1 = Instant::now();
        let pick = self.tfidf_pick(&claim, &sentences);
        timings.tfidf_ms = ms(t1.elapsed());

        let (evidence_index, source) = match pick.route {
            Route::Easy(_) => (pick.sentence, EvidenceSource::Tfidf),
            Route::Hard => {
                let t2 = Instant::now();
                let subs = build_subcontexts_with_overlap(
                    &sentences,
                    self.config.token_budget,
                    self.config.subcontext_overlap,
                );
                let scores = score_all(&claim, &subs).map_err(|source| {
                    PipelineError::BackendUnavailable { stage: Stage::Evidence, source }
                })?;
                for (sub, sc) in subs.iter().zip(&scores) {
                    sc.validate(sub.token_count).map_err(|msg| PipelineError::BackendUnavailable {
                        stage: Stage::Evidence,
                        source: BackendError::Schema(msg),
                    })?;
                }
                let candidates = collect_candidates(&subs, &scores, self.config.span_threshold)?;
                let picked = arbitrate(&candidates, &claim, &sentences, pick.sentence, tok);
                timings.qatc_ms = ms(t2.elapsed());
                picked
            }
        };
        let evidence = sentences[evidence_index].text.clone();

        let t3 = Instant::now();
        let p3 = self
            .classifier
            .classify3(&claim, &evidence)
            .map_err(|source| PipelineError::BackendUnavailable { stage: Stage::ThreeClass, source })?;
        let verdict = match self.config.mode {
            Mode::OneStep => combine_one_step(&p3),
            _ => combine_with(&p3, self.config.weights, || {
                self.classifier
                    .classify2(&claim, &evidence)
                    .map_err(|source| PipelineError::BackendUnavailable { stage: Stage::Binary, source })
            })?,
        };
        timings.verdict_ms = ms(t3.elapsed());

        Ok(VerificationResult {
            record_id: record.id.clone(),
            verdict,
            evidence,
            evidence_index,
            source,
            timings,
        })
    }

    /// Verifies every record on `parallelism` worker threads. Results keep
    /// input order; per-record failures are collected, not fatal.
    pub fn verify_corpus(&self, records: &[VerificationRecord], parallelism: usize) -> CorpusRun {
        let start = Instant::now();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .expect("thread pool");
        let outcomes: Vec<RecordOutcome> = pool.install(|| {
            records
                .par_iter()
                .map(|r| RecordOutcome {
                    id: r.id.clone(),
                    result: self.run(r),
                })
                .collect()
        });
        let mut stage_totals = StageTimings::default();
        for o in &outcomes {
            if let Ok(res) = &o.result {
                stage_totals.add(&res.timings);
            }
        }
        CorpusRun {
            wall_ms: if records.is_empty() { 0.0 } else { ms(start.elapsed()) },
            stage_totals,
            outcomes,
        }
    }
}

#[derive(Debug)]
pub struct RecordOutcome {
    pub id: String,
    pub result: Result<VerificationResult, PipelineError>,
}

#[derive(Debug)]
pub struct CorpusRun {
    pub outcomes: Vec<RecordOutcome>,
    pub wall_ms: f64,
    pub stage_totals: StageTimings,
}

impl CorpusRun {
    pub fn results(&self) -> impl Iterator<Item = &VerificationResult> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().ok())
    }

    pub fn errors(&self) -> impl Iterator<Item = (&str, &PipelineError)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (o.id.as_str(), e)))
    }
}
