//! Claim verification over long contexts: sentence segmentation, TF-IDF
//! routing, span-based evidence selection and two-stage verdict
//! classification. Neural models sit behind the [`EvidenceScorer`] and
//! [`VerdictClassifier`] traits.

pub mod backend;
pub mod corpus;
pub mod eval;
pub mod evidence;
pub mod pipeline;
pub mod segmenter;
pub mod tfidf;
pub mod verdict;

pub use backend::BackendError;
pub use corpus::{
    ingest_dataset, normalize_text, parse_dataset, split_sentences, Sentence, Tokenizer, VerificationRecord,
    WhitespaceTokenizer,
};
pub use eval::{compare_report, evaluate, EvalReport, Prediction};
pub use evidence::{EvidenceScorer, EvidenceSource, MockEvidenceScorer, TokenScores, TokenSpan};
pub use pipeline::{BackendSettings, Mode, Pipeline, PipelineConfig, PipelineError, VerificationResult};
pub use segmenter::{build_subcontexts, SegmentBatch, SubContext};
pub use tfidf::{Route, TfidfModel};
pub use verdict::{
    combine, BinaryProbs, CombinerWeights, MockVerdictClassifier, ThreeClassProbs, Verdict, VerdictClassifier,
};
