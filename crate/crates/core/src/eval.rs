//! Strict, verdict and evidence accuracy, plus side-by-side reports.
//!
//! Gold NEI records have no evidence. For them the evidence indicator is 1
//! exactly when the predicted verdict is NEI as well.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, VerificationRecord};
use crate::pipeline::VerificationResult;
use crate::verdict::Verdict;

pub const NEI_FOOTER: &str =
    "Note: gold NEI records carry no evidence; their evidence match is counted as correct iff the predicted verdict is NEI.";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and gold ids do not match: {0}")]
    IdMismatch(String),
    #[error("gold record {0} has no verdict")]
    MissingGoldVerdict(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed predictions: {0}")]
    Json(#[from] serde_json::Error),
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub evidence: Option<String>,
}

impl From<&VerificationResult> for Prediction {
    fn from(r: &VerificationResult) -> Self {
        Prediction {
            id: r.record_id.clone(),
            verdict: r.verdict,
            evidence: Some(r.evidence.clone()),
        }
    }
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, EvalError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(raw.trim_start_matches('\u{feff}'))?)
}

/// Verdict and evidence indicators of one aligned pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Indicators {
    pub gold: Verdict,
    pub verdict_ok: bool,
    pub evidence_ok: bool,
}

impl Indicators {
    pub fn strict(&self) -> bool {
        self.verdict_ok && self.evidence_ok
    }
}

fn indicator(pred: &Prediction, gold: &VerificationRecord) -> Result<Indicators, EvalError> {
    let gold_verdict = gold
        .gold_verdict
        .ok_or_else(|| EvalError::MissingGoldVerdict(gold.id.clone()))?;
    let verdict_ok = pred.verdict == gold_verdict;
    let evidence_ok = match gold.gold_evidence.as_deref() {
        Some(g) if gold_verdict != Verdict::Nei => pred
            .evidence
            .as_deref()
            .is_some_and(|p| normalize_text(p) == normalize_text(g)),
        _ => pred.verdict == Verdict::Nei,
    };
    Ok(Indicators { gold: gold_verdict, verdict_ok, evidence_ok })
}

/// Pairs predictions with gold records by id. Both sides must hold the
/// same id set with no duplicates.
pub fn align(preds: &[Prediction], gold: &[VerificationRecord]) -> Result<Vec<Indicators>, EvalError> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(EvalError::IdMismatch(format!("duplicate prediction id {}", p.id)));
        }
    }
    if preds.len() != gold.len() {
        return Err(EvalError::IdMismatch(format!(
            "{} predictions for {} gold records",
            preds.len(),
            gold.len()
        )));
    }
    gold.iter()
        .map(|g| {
            let p = by_id
                .get(g.id.as_str())
                .ok_or_else(|| EvalError::IdMismatch(format!("no prediction for {}", g.id)))?;
            indicator(p, g)
        })
        .collect()
}

fn mean(ind: &[Indicators], f: impl Fn(&Indicators) -> bool) -> f64 {
    if ind.is_empty() {
        return 0.0;
    }
    ind.iter().filter(|i| f(i)).count() as f64 / ind.len() as f64
}

pub fn strict_accuracy(preds: &[Prediction], gold: &[VerificationRecord]) -> Result<f64, EvalError> {
    Ok(mean(&align(preds, gold)?, Indicators::strict))
}

pub fn vc_accuracy(preds: &[Prediction], gold: &[VerificationRecord]) -> Result<f64, EvalError> {
    Ok(mean(&align(preds, gold)?, |i| i.verdict_ok))
}

pub fn er_accuracy(preds: &[Prediction], gold: &[VerificationRecord]) -> Result<f64, EvalError> {
    Ok(mean(&align(preds, gold)?, |i| i.evidence_ok))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub count: usize,
    /// Records of this gold label whose verdict was predicted correctly.
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strict_acc: f64,
    pub vc_acc: f64,
    pub er_acc: f64,
    pub n: usize,
    pub per_label: BTreeMap<String, LabelStats>,
    pub total_time_ms: f64,
}

pub fn evaluate(
    preds: &[Prediction],
    gold: &[VerificationRecord],
    total_time_ms: f64,
) -> Result<EvalReport, EvalError> {
    let ind = align(preds, gold)?;
    let mut per_label = BTreeMap::new();
    for i in &ind {
        let e: &mut LabelStats = per_label.entry(i.gold.as_str().to_string()).or_default();
        e.count += 1;
        e.correct += usize::from(i.verdict_ok);
    }
    Ok(EvalReport {
        strict_acc: mean(&ind, Indicators::strict),
        vc_acc: mean(&ind, |i| i.verdict_ok),
        er_acc: mean(&ind, |i| i.evidence_ok),
        n: ind.len(),
        per_label,
        total_time_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Renders named reports sorted by strict accuracy (descending, stable).
/// Returns the text table and the JSON document.
pub fn compare_report(reports: &[(String, EvalReport)]) -> (String, serde_json::Value) {
    let mut rows: Vec<&(String, EvalReport)> = reports.iter().collect();
    rows.sort_by(|a, b| b.1.strict_acc.total_cmp(&a.1.strict_acc));

    let width = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(6);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<width$}  {:>10}  {:>10}  {:>10}  {:>12}",
        "Method", "Strict Acc", "VC Acc", "ER Acc", "Time (ms)"
    );
    for (name, r) in &rows {
        let _ = writeln!(
            text,
            "{:<width$}  {:>10.2}  {:>10.2}  {:>10.2}  {:>12.1}",
            name,
            r.strict_acc * 100.0,
            r.vc_acc * 100.0,
            r.er_acc * 100.0,
            r.total_time_ms
        );
    }
    text.push_str(NEI_FOOTER);
    text.push('\n');

    let json_rows: Vec<ReportRow> = rows
        .iter()
        .map(|(name, r)| ReportRow { name: name.clone(), report: r.clone() })
        .collect();
    let json = serde_json::json!({
        "columns": ["Strict Acc", "VC Acc", "ER Acc", "Time"],
        "rows": json_rows,
        "note": NEI_FOOTER,
    });
    (text, json)
}
