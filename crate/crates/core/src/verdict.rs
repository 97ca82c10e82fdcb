//! Two-step verdict classification.
//!
//! A three-class model scores (NEI, SUPPORTED, REFUTED). When it does not
//! pick NEI, a binary SUPPORTED/REFUTED model is consulted and the more
//! confident of the two predictions wins.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::normalize_text;

/// Probability vectors must sum to one within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum VerdictError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("binary distribution required when the three-class prediction is not NEI")]
    MissingBinary,
}

/// Verdict label. Indices are fixed: 1 = NEI, 2 = SUPPORTED, 3 = REFUTED.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "NEI")]
    Nei,
    #[serde(rename = "SUPPORTED")]
    Supported,
    #[serde(rename = "REFUTED")]
    Refuted,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Nei, Verdict::Supported, Verdict::Refuted];

    pub fn index(self) -> u8 {
        match self {
            Verdict::Nei => 1,
            Verdict::Supported => 2,
            Verdict::Refuted => 3,
        }
    }

    pub fn from_index(index: u8) -> Option<Self> {
        match index {
            1 => Some(Verdict::Nei),
            2 => Some(Verdict::Supported),
            3 => Some(Verdict::Refuted),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Nei => "NEI",
            Verdict::Supported => "SUPPORTED",
            Verdict::Refuted => "REFUTED",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NEI" => Ok(Verdict::Nei),
            "SUPPORTED" => Ok(Verdict::Supported),
            "REFUTED" => Ok(Verdict::Refuted),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

fn check_simplex(p: &[f64]) -> Result<(), VerdictError> {
    if let Some(bad) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(VerdictError::InvalidDistribution(format!(
            "entry {bad} is negative or not finite"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(VerdictError::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Three-class distribution over (NEI, SUPPORTED, REFUTED).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ThreeClassProbs([f64; 3]);

impl ThreeClassProbs {
    pub fn new(p: [f64; 3]) -> Result<Self, VerdictError> {
        check_simplex(&p)?;
        Ok(Self(p))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn argmax(&self) -> Verdict {
        Verdict::ALL[argmax(&self.0)]
    }

    pub fn max(&self) -> f64 {
        self.0[argmax(&self.0)]
    }
}

impl TryFrom<[f64; 3]> for ThreeClassProbs {
    type Error = VerdictError;
    fn try_from(p: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<ThreeClassProbs> for [f64; 3] {
    fn from(p: ThreeClassProbs) -> Self {
        p.0
    }
}

/// Binary distribution over (SUPPORTED, REFUTED).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct BinaryProbs([f64; 2]);

impl BinaryProbs {
    pub fn new(p: [f64; 2]) -> Result<Self, VerdictError> {
        check_simplex(&p)?;
        Ok(Self(p))
    }

    pub fn uniform() -> Self {
        Self([0.5; 2])
    }

    pub fn as_array(&self) -> [f64; 2] {
        self.0
    }

    pub fn argmax(&self) -> Verdict {
        [Verdict::Supported, Verdict::Refuted][argmax(&self.0)]
    }

    pub fn max(&self) -> f64 {
        self.0[argmax(&self.0)]
    }
}

impl TryFrom<[f64; 2]> for BinaryProbs {
    type Error = VerdictError;
    fn try_from(p: [f64; 2]) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<BinaryProbs> for [f64; 2] {
    fn from(p: BinaryProbs) -> Self {
        p.0
    }
}

/// Both classifier outputs for one claim/evidence pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictDistributions {
    pub p3: ThreeClassProbs,
    pub p2: Option<BinaryProbs>,
}

/// Scalar weights applied to the two max-confidences before they are
/// compared. `1.0` for both reproduces the plain comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinerWeights {
    pub w3: f64,
    pub w2: f64,
}

impl Default for CombinerWeights {
    fn default() -> Self {
        Self { w3: 1.0, w2: 1.0 }
    }
}

/// Two-step decision with a lazily evaluated binary stage. `binary` runs
/// only when the three-class argmax is not NEI.
pub fn combine_with<E>(
    p3: &ThreeClassProbs,
    weights: CombinerWeights,
    binary: impl FnOnce() -> Result<BinaryProbs, E>,
) -> Result<Verdict, E> {
    let y3 = p3.argmax();
    if y3 == Verdict::Nei {
        return Ok(Verdict::Nei);
    }
    let p2 = binary()?;
    if weights.w3 * p3.max() > weights.w2 * p2.max() {
        Ok(y3)
    } else {
        Ok(p2.argmax())
    }
}

/// Two-step decision with unit weights.
pub fn combine(p3: &ThreeClassProbs, p2: Option<&BinaryProbs>) -> Result<Verdict, VerdictError> {
    combine_with(p3, CombinerWeights::default(), || {
        p2.copied().ok_or(VerdictError::MissingBinary)
    })
}

/// Single-stage ablation: argmax of the three-class output.
pub fn combine_one_step(p3: &ThreeClassProbs) -> Verdict {
    p3.argmax()
}

fn check_one_hot(y: &[f64], p: &[f64]) -> Result<(), VerdictError> {
    if y.len() != p.len() || y.is_empty() {
        return Err(VerdictError::InvalidDistribution(format!(
            "label length {} vs probability length {}",
            y.len(),
            p.len()
        )));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    let zeros = y.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != y.len() {
        return Err(VerdictError::InvalidDistribution("label is not one-hot".into()));
    }
    check_simplex(p)
}

/// Categorical cross-entropy `-Σ y_k ln p_k` with `p` clamped to
/// `[ε, 1-ε]`.
pub fn cross_entropy_loss(y: &[f64], p: &[f64]) -> Result<f64, VerdictError> {
    check_one_hot(y, p)?;
    Ok(y
        .iter()
        .zip(p)
        .map(|(&yk, &pk)| -yk * pk.clamp(PROB_EPS, 1.0 - PROB_EPS).ln())
        .sum())
}

/// Focal loss `-Σ α_k y_k (1-p_k)^γ ln p_k`. With `γ = 0` and unit `α`
/// this is [`cross_entropy_loss`].
pub fn focal_loss(y: &[f64], p: &[f64], gamma: f64, alpha: &[f64]) -> Result<f64, VerdictError> {
    check_one_hot(y, p)?;
    if alpha.len() != y.len() {
        return Err(VerdictError::InvalidDistribution(format!(
            "alpha has {} entries for {} classes",
            alpha.len(),
            y.len()
        )));
    }
    if gamma.is_nan() || gamma < 0.0 {
        return Err(VerdictError::InvalidDistribution(format!("gamma {gamma} < 0")));
    }
    Ok(y
        .iter()
        .zip(p)
        .zip(alpha)
        .map(|((&yk, &pk), &ak)| {
            let pk = pk.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -ak * yk * (1.0 - pk).powf(gamma) * pk.ln()
        })
        .sum())
}

/// Produces the three-class and binary distributions for a claim and an
/// evidence sentence.
pub trait VerdictClassifier: Send + Sync {
    fn classify3(&self, claim: &str, evidence: &str) -> Result<ThreeClassProbs, BackendError>;
    fn classify2(&self, claim: &str, evidence: &str) -> Result<BinaryProbs, BackendError>;
}

/// Deterministic classifier backed by a lookup table. Unseen pairs get
/// uniform distributions.
#[derive(Debug, Default)]
pub struct MockVerdictClassifier {
    table: HashMap<(String, String), (ThreeClassProbs, BinaryProbs)>,
    three_calls: AtomicUsize,
    binary_calls: AtomicUsize,
}

impl MockVerdictClassifier {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the outputs for a pair. Keys are normalized text.
    pub fn insert(
        &mut self,
        claim: &str,
        evidence: &str,
        p3: [f64; 3],
        p2: [f64; 2],
    ) -> Result<(), VerdictError> {
        let entry = (ThreeClassProbs::new(p3)?, BinaryProbs::new(p2)?);
        self.table.insert((normalize_text(claim), normalize_text(evidence)), entry);
        Ok(())
    }

    pub fn with(
        mut self,
        claim: &str,
        evidence: &str,
        p3: [f64; 3],
        p2: [f64; 2],
    ) -> Result<Self, VerdictError> {
        self.insert(claim, evidence, p3, p2)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn three_class_calls(&self) -> usize {
        self.three_calls.load(Ordering::Relaxed)
    }

    pub fn binary_calls(&self) -> usize {
        self.binary_calls.load(Ordering::Relaxed)
    }

    fn lookup(&self, claim: &str, evidence: &str) -> Option<&(ThreeClassProbs, BinaryProbs)> {
        self.table.get(&(normalize_text(claim), normalize_text(evidence)))
    }
}

impl VerdictClassifier for MockVerdictClassifier {
    fn classify3(&self, claim: &str, evidence: &str) -> Result<ThreeClassProbs, BackendError> {
        self.three_calls.fetch_add(1, Ordering::Relaxed);
        Ok(self
            .lookup(claim, evidence)
            .map_or_else(ThreeClassProbs::uniform, |e| e.0))
    }

    fn classify2(&self, claim: &str, evidence: &str) -> Result<BinaryProbs, BackendError> {
        self.binary_calls.fetch_add(1, Ordering::Relaxed);
        Ok(self
            .lookup(claim, evidence)
            .map_or_else(BinaryProbs::uniform, |e| e.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p3(p: [f64; 3]) -> ThreeClassProbs {
        ThreeClassProbs::new(p).unwrap()
    }
    fn p2(p: [f64; 2]) -> BinaryProbs {
        BinaryProbs::new(p).unwrap()
    }

    #[test]
    fn index_label_bijection() {
        for v in Verdict::ALL {
            assert_eq!(Verdict::from_index(v.index()), Some(v));
            assert_eq!(v.as_str().parse::<Verdict>().unwrap(), v);
        }
        assert_eq!(Verdict::from_index(0), None);
        assert_eq!(serde_json::to_string(&Verdict::Refuted).unwrap(), "\"REFUTED\"");
    }

    #[test]
    fn combine_cases() {
        assert_eq!(combine(&p3([0.8, 0.1, 0.1]), None), Ok(Verdict::Nei));
        assert_eq!(
            combine(&p3([0.1, 0.7, 0.2]), Some(&p2([0.6, 0.4]))),
            Ok(Verdict::Supported)
        );
        assert_eq!(
            combine(&p3([0.05, 0.5, 0.45]), Some(&p2([0.3, 0.7]))),
            Ok(Verdict::Refuted)
        );
        assert_eq!(combine(&p3([0.1, 0.7, 0.2]), None), Err(VerdictError::MissingBinary));
        // equal confidences fall through to the binary prediction
        assert_eq!(
            combine(&p3([0.0, 0.4, 0.6]), Some(&p2([0.6, 0.4]))),
            Ok(Verdict::Supported)
        );
    }

    #[test]
    fn weights_scale_the_comparison() {
        let w = CombinerWeights { w3: 2.0, w2: 1.0 };
        let v = combine_with(&p3([0.05, 0.5, 0.45]), w, || Ok::<_, ()>(p2([0.3, 0.7])));
        assert_eq!(v, Ok(Verdict::Supported));
    }

    #[test]
    fn nei_never_evaluates_binary() {
        let mut called = false;
        let v = combine_with(&p3([0.9, 0.05, 0.05]), CombinerWeights::default(), || {
            called = true;
            Ok::<_, ()>(BinaryProbs::uniform())
        });
        assert_eq!(v, Ok(Verdict::Nei));
        assert!(!called);
    }

    #[test]
    fn one_step_argmax_and_ties() {
        assert_eq!(combine_one_step(&p3([0.2, 0.5, 0.3])), Verdict::Supported);
        assert_eq!(combine_one_step(&p3([1.0, 0.0, 0.0])), Verdict::Nei);
        assert_eq!(combine_one_step(&p3([0.4, 0.4, 0.2])), Verdict::Nei);
        assert_eq!(p2([0.5, 0.5]).argmax(), Verdict::Supported);
    }

    #[test]
    fn distributions_are_validated() {
        assert!(ThreeClassProbs::new([0.5, 0.6, 0.2]).is_err());
        assert!(ThreeClassProbs::new([-0.1, 0.6, 0.5]).is_err());
        assert!(BinaryProbs::new([f64::NAN, 1.0]).is_err());
        assert!(serde_json::from_str::<ThreeClassProbs>("[0.2,0.5,0.3]").is_ok());
        assert!(serde_json::from_str::<ThreeClassProbs>("[0.5,0.6,0.2]").is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let y = [0.0, 1.0, 0.0];
        assert!(cross_entropy_loss(&y, &y).unwrap() < 1e-6);
        let third = 1.0 / 3.0;
        assert_abs_diff_eq!(
            cross_entropy_loss(&y, &[third; 3]).unwrap(),
            3f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cross_entropy_loss(&y, &[0.2, 0.7, 0.1]).unwrap(),
            0.356_674_943_938_732_4,
            epsilon = 1e-12
        );
        assert!(cross_entropy_loss(&[1.0, 1.0, 0.0], &[0.2, 0.7, 0.1]).is_err());
        assert!(cross_entropy_loss(&[1.0, 0.0], &[0.2, 0.7, 0.1]).is_err());
    }

    #[test]
    fn focal_values() {
        let y = [1.0, 0.0];
        let p = [0.9, 0.1];
        assert_abs_diff_eq!(
            focal_loss(&y, &p, 2.0, &[1.0, 1.0]).unwrap(),
            0.001_053_605_156_578_263,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            focal_loss(&y, &p, 0.0, &[1.0, 1.0]).unwrap(),
            cross_entropy_loss(&y, &p).unwrap(),
            epsilon = 1e-12
        );
        let near_one = focal_loss(&y, &[1.0, 0.0], 2.0, &[1.0, 1.0]).unwrap();
        assert!(near_one < 1e-12);
        assert!(focal_loss(&y, &p, -1.0, &[1.0, 1.0]).is_err());
        assert!(focal_loss(&y, &p, 2.0, &[1.0]).is_err());
    }

    #[test]
    fn mock_lookup_and_counters() {
        let mock = MockVerdictClassifier::new()
            .with("claim", "ev", [0.1, 0.8, 0.1], [0.9, 0.1])
            .unwrap();
        assert_eq!(mock.classify3("claim", "ev").unwrap().as_array(), [0.1, 0.8, 0.1]);
        assert_eq!(mock.classify2(" claim ", "ev").unwrap().as_array(), [0.9, 0.1]);
        let unseen = mock.classify3("other", "ev").unwrap();
        assert_eq!(combine_one_step(&unseen), Verdict::Nei);
        assert_eq!(mock.three_class_calls(), 2);
        assert_eq!(mock.binary_calls(), 1);
        assert!(MockVerdictClassifier::new()
            .with("a", "b", [0.5, 0.6, 0.2], [0.5, 0.5])
            .is_err());
    }
}
