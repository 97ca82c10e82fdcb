//! HTTP client for externally served evidence and verdict models.
//!
//! Wire protocol (JSON over HTTP, all `POST`):
//!
//! | path                      | request                                 | response                                   |
//! |---------------------------|-----------------------------------------|--------------------------------------------|
//! | `/v1/evidence/score`      | `{"claim", "tokens": [..]}`             | `{"token_probs": [..]}` and/or `{"span"}`  |
//! | `/v1/evidence/score_batch`| `{"claim", "items": [{"tokens"}, ..]}`  | `{"results": [<score response>, ..]}`      |
//! | `/v1/verdict/three`       | `{"claim", "evidence"}`                 | `{"probs": [nei, supported, refuted]}`     |
//! | `/v1/verdict/binary`      | `{"claim", "evidence"}`                 | `{"probs": [supported, refuted]}`          |
//!
//! Span coordinates are inclusive indices into the sent token array.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use semfact_core::evidence::{EvidenceScorer, TokenScores, TokenSpan};
use semfact_core::pipeline::BackendSettings;
use semfact_core::segmenter::{SegmentBatch, SubContext};
use semfact_core::verdict::{BinaryProbs, ThreeClassProbs, VerdictClassifier};
use semfact_core::{BackendError, Tokenizer, WhitespaceTokenizer};

pub mod stub;

/// Environment variable consulted when no token is configured.
pub const TOKEN_ENV: &str = "SEMFACT_BACKEND_TOKEN";

/// Responses may deviate from a unit sum by this much before rejection.
pub const WIRE_SUM_TOLERANCE: f64 = 1e-4;

const BACKOFF_BASE: Duration = Duration::from_millis(200);

#[derive(Debug, Error, PartialEq)]
pub enum EndpointError {
    #[error("base url must start with http:// or https://, got {0:?}")]
    Scheme(String),
    #[error("timeout_ms must be positive")]
    Timeout,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    #[serde(skip_serializing)]
    pub token: Option<String>,
}

impl std::fmt::Debug for BackendEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendEndpoint")
            .field("base_url", &self.base_url)
            .field("timeout_ms", &self.timeout_ms)
            .field("max_retries", &self.max_retries)
            .field("token", &self.token.as_ref().map(|_| "***"))
            .finish()
    }
}

impl BackendEndpoint {
    pub fn new(base_url: &str) -> Result<Self, EndpointError> {
        Self::from_settings(&BackendSettings { target: base_url.into(), ..BackendSettings::default() })
    }

    /// Builds an endpoint from pipeline settings; the auth token comes
    /// from [`TOKEN_ENV`] if set.
    pub fn from_settings(settings: &BackendSettings) -> Result<Self, EndpointError> {
        let base = settings.target.trim().trim_end_matches('/');
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(EndpointError::Scheme(settings.target.clone()));
        }
        if settings.timeout_ms == 0 {
            return Err(EndpointError::Timeout);
        }
        Ok(Self {
            base_url: base.to_string(),
            timeout_ms: settings.timeout_ms,
            max_retries: settings.max_retries,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        })
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }
}

fn retryable(err: &BackendError) -> bool {
    match err {
        BackendError::Timeout | BackendError::Transport(_) => true,
        BackendError::BadStatus(code) => *code == 429 || *code >= 500,
        BackendError::Schema(_) => false,
    }
}

/// Shared transport: JSON POST with bearer auth and retry.
#[derive(Debug, Clone)]
struct HttpClient {
    endpoint: BackendEndpoint,
    client: reqwest::blocking::Client,
    backoff_base: Duration,
}

impl HttpClient {
    fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { endpoint, client, backoff_base: BACKOFF_BASE })
    }

    fn attempt<T: DeserializeOwned>(&self, url: &str, body: &[u8]) -> Result<T, BackendError> {
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(token) = &self.endpoint.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::BadStatus(status.as_u16()));
        }
        let bytes = resp.bytes().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Schema(e.to_string()))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, BackendError> {
        let url = format!("{}{}", self.endpoint.base_url, path);
        let body = serde_json::to_vec(body).map_err(|e| BackendError::Schema(e.to_string()))?;
        let mut delay = self.backoff_base;
        let mut attempt = 0;
        loop {
            match self.attempt(&url, &body) {
                Ok(v) => return Ok(v),
                Err(e) if retryable(&e) && attempt < self.endpoint.max_retries => {
                    attempt += 1;
                    warn!("{url}: {e}; retry {attempt}/{} in {delay:?}", self.endpoint.max_retries);
                    thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => {
                    debug!("{url}: giving up after {} attempt(s): {e}", attempt + 1);
                    return Err(e);
                }
            }
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    claim: &'a str,
    tokens: Vec<String>,
}

#[derive(Serialize)]
struct BatchItem {
    tokens: Vec<String>,
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    claim: &'a str,
    items: Vec<BatchItem>,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    #[serde(default)]
    token_probs: Option<Vec<f64>>,
    #[serde(default)]
    span: Option<TokenSpan>,
}

#[derive(Debug, Deserialize)]
struct BatchResponse {
    results: Vec<ScoreResponse>,
}

fn into_scores(resp: ScoreResponse, token_count: usize) -> Result<TokenScores, BackendError> {
    if resp.token_probs.is_none() && resp.span.is_none() {
        return Err(BackendError::Schema("response has neither token_probs nor span".into()));
    }
    let scores = TokenScores { probs: resp.token_probs.unwrap_or_default(), span: resp.span };
    scores.validate(token_count).map_err(BackendError::Schema)?;
    Ok(scores)
}

/// Evidence scorer backed by a remote model server.
#[derive(Clone)]
pub struct RemoteEvidenceScorer {
    http: HttpClient,
    tokenizer: Arc<dyn Tokenizer>,
}

impl RemoteEvidenceScorer {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        Self::with_tokenizer(endpoint, Arc::new(WhitespaceTokenizer))
    }

    /// `tokenizer` must be the one the pipeline segments with, so that
    /// sent token arrays line up with subcontext token counts.
    pub fn with_tokenizer(endpoint: BackendEndpoint, tokenizer: Arc<dyn Tokenizer>) -> Result<Self, BackendError> {
        Ok(Self { http: HttpClient::new(endpoint)?, tokenizer })
    }

    /// Overrides the first retry delay (200 ms by default).
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.http.backoff_base = base;
        self
    }
}

impl EvidenceScorer for RemoteEvidenceScorer {
    fn score(&self, claim: &str, subcontext: &SubContext) -> Result<TokenScores, BackendError> {
        let tokens = subcontext.tokens(self.tokenizer.as_ref());
        let n = tokens.len();
        let resp: ScoreResponse = self.http.post("/v1/evidence/score", &ScoreRequest { claim, tokens })?;
        into_scores(resp, n)
    }

    fn batch_score(&self, claim: &str, batch: &SegmentBatch) -> Result<Vec<TokenScores>, BackendError> {
        let items: Vec<BatchItem> = batch
            .subcontexts
            .iter()
            .map(|s| BatchItem { tokens: s.tokens(self.tokenizer.as_ref()) })
            .collect();
        let counts: Vec<usize> = items.iter().map(|i| i.tokens.len()).collect();
        let resp: BatchResponse = self
            .http
            .post("/v1/evidence/score_batch", &BatchRequest { claim, items })?;
        if resp.results.len() != counts.len() {
            return Err(BackendError::Schema(format!(
                "{} results for {} items",
                resp.results.len(),
                counts.len()
            )));
        }
        resp.results
            .into_iter()
            .zip(counts)
            .map(|(r, n)| into_scores(r, n))
            .collect()
    }
}

#[derive(Serialize)]
struct VerdictRequest<'a> {
    claim: &'a str,
    evidence: &'a str,
}

#[derive(Deserialize)]
struct ProbsResponse {
    probs: Vec<f64>,
}

/// Checks a wire distribution and renormalizes it to an exact unit sum.
fn wire_distribution<const N: usize>(probs: &[f64]) -> Result<[f64; N], BackendError> {
    let arr: [f64; N] = probs
        .try_into()
        .map_err(|_| BackendError::Schema(format!("expected {N} probabilities, got {}", probs.len())))?;
    if arr.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(BackendError::Schema(format!("invalid probabilities {arr:?}")));
    }
    let sum: f64 = arr.iter().sum();
    if (sum - 1.0).abs() > WIRE_SUM_TOLERANCE {
        return Err(BackendError::Schema(format!("probabilities sum to {sum}")));
    }
    Ok(arr.map(|p| p / sum))
}

/// Three-class and binary verdict models behind one server.
#[derive(Clone)]
pub struct RemoteVerdictClassifier {
    http: HttpClient,
}

impl RemoteVerdictClassifier {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        Ok(Self { http: HttpClient::new(endpoint)? })
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.http.backoff_base = base;
        self
    }
}

impl VerdictClassifier for RemoteVerdictClassifier {
    fn classify3(&self, claim: &str, evidence: &str) -> Result<ThreeClassProbs, BackendError> {
        let resp: ProbsResponse = self.http.post("/v1/verdict/three", &VerdictRequest { claim, evidence })?;
        ThreeClassProbs::new(wire_distribution(&resp.probs)?).map_err(|e| BackendError::Schema(e.to_string()))
    }

    fn classify2(&self, claim: &str, evidence: &str) -> Result<BinaryProbs, BackendError> {
        let resp: ProbsResponse = self.http.post("/v1/verdict/binary", &VerdictRequest { claim, evidence })?;
        BinaryProbs::new(wire_distribution(&resp.probs)?).map_err(|e| BackendError::Schema(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_validation() {
        assert!(matches!(BackendEndpoint::new("localhost:8000"), Err(EndpointError::Scheme(_))));
        let ep = BackendEndpoint::new("http://127.0.0.1:9000/").unwrap();
        assert_eq!(ep.base_url, "http://127.0.0.1:9000");
        assert_eq!((ep.timeout_ms, ep.max_retries), (30_000, 2));
        let zero = BackendSettings { target: "http://x".into(), timeout_ms: 0, max_retries: 0 };
        assert_eq!(BackendEndpoint::from_settings(&zero), Err(EndpointError::Timeout));
    }

    #[test]
    fn token_is_not_printed_or_serialized() {
        let ep = BackendEndpoint::new("http://x").unwrap().with_token("s3cret");
        assert!(!format!("{ep:?}").contains("s3cret"));
        assert!(!serde_json::to_string(&ep).unwrap().contains("s3cret"));
    }

    #[test]
    fn wire_distribution_checks() {
        assert_eq!(wire_distribution::<3>(&[0.2, 0.5, 0.3]).unwrap().iter().sum::<f64>(), 1.0);
        assert!(wire_distribution::<3>(&[0.5, 0.6, 0.2]).is_err());
        assert!(wire_distribution::<3>(&[0.5, 0.5]).is_err());
        assert!(wire_distribution::<2>(&[1.2, -0.2]).is_err());
        let nudged = wire_distribution::<2>(&[0.70004, 0.3]).unwrap();
        assert!((nudged[0] + nudged[1] - 1.0).abs() < 1e-15);
        assert!(wire_distribution::<2>(&[0.7002, 0.3]).is_err());
    }

    #[test]
    fn retry_policy() {
        assert!(retryable(&BackendError::BadStatus(503)));
        assert!(retryable(&BackendError::BadStatus(429)));
        assert!(!retryable(&BackendError::BadStatus(404)));
        assert!(!retryable(&BackendError::Schema("x".into())));
        assert!(retryable(&BackendError::Timeout));
    }

    #[test]
    fn span_only_response() {
        let resp: ScoreResponse = serde_json::from_str(r#"{"span": {"start": 1, "end": 2, "confidence": 0.8}}"#).unwrap();
        let s = into_scores(resp, 4).unwrap();
        assert!(s.probs.is_empty());
        assert_eq!(s.span, Some(TokenSpan { start: 1, end: 2, confidence: 0.8 }));
        let bad: ScoreResponse = serde_json::from_str(r#"{"token_probs": [0.1, 0.2]}"#).unwrap();
        assert!(matches!(into_scores(bad, 3), Err(BackendError::Schema(_))));
        let empty: ScoreResponse = serde_json::from_str("{}").unwrap();
        assert!(into_scores(empty, 3).is_err());
    }
}
