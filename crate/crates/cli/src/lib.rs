//! Reproducible runs on top of `semfact-core`: verification with a run
//! manifest, evaluation reports and threshold sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::warn;
use serde::{Deserialize, Serialize};

use semfact_backends::{BackendEndpoint, RemoteEvidenceScorer, RemoteVerdictClassifier};
use semfact_core::eval::{evaluate, EvalReport, Prediction};
use semfact_core::evidence::{EvidenceScorer, MockEvidenceScorer};
use semfact_core::pipeline::{format_threshold, CorpusRun, PipelineConfig, StageTimings};
use semfact_core::verdict::{MockVerdictClassifier, Verdict, VerdictClassifier};
use semfact_core::{ingest_dataset, Pipeline, VerificationRecord};

pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Table entries for the in-process mock backends.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSpec {
    pub evidence: Vec<MockEvidenceEntry>,
    pub verdict: Vec<MockVerdictEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEvidenceEntry {
    pub claim: String,
    pub sentence: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockVerdictEntry {
    pub claim: String,
    pub evidence: String,
    pub three: [f64; 3],
    pub binary: [f64; 2],
}

impl MockSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).with_context(|| format!("reading mock spec {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("parsing mock spec {}", path.display()))
    }

    /// Entries that make the mocks answer like a model that knows the
    /// gold labels: high token probability on the gold evidence and a
    /// confident verdict when given that evidence. Any other evidence gets
    /// the uniform fallback, which resolves to NEI.
    pub fn from_gold(records: &[VerificationRecord]) -> Self {
        let mut spec = MockSpec::default();
        for r in records {
            let (Some(verdict), Some(evidence)) = (r.gold_verdict, r.gold_evidence.as_ref()) else {
                continue;
            };
            let (three, binary) = match verdict {
                Verdict::Supported => ([0.05, 0.9, 0.05], [0.9, 0.1]),
                Verdict::Refuted => ([0.05, 0.05, 0.9], [0.1, 0.9]),
                Verdict::Nei => ([0.9, 0.05, 0.05], [0.5, 0.5]),
            };
            spec.evidence.push(MockEvidenceEntry { claim: r.claim.clone(), sentence: evidence.clone(), prob: 0.9 });
            spec.verdict.push(MockVerdictEntry { claim: r.claim.clone(), evidence: evidence.clone(), three, binary });
        }
        spec
    }

    pub fn extend(&mut self, other: MockSpec) {
        self.evidence.extend(other.evidence);
        self.verdict.extend(other.verdict);
    }

    pub fn build(&self) -> Result<(MockEvidenceScorer, MockVerdictClassifier)> {
        let mut ev = MockEvidenceScorer::new();
        for e in &self.evidence {
            ev.insert(&e.claim, &e.sentence, e.prob);
        }
        let mut vc = MockVerdictClassifier::new();
        for v in &self.verdict {
            vc.insert(&v.claim, &v.evidence, v.three, v.binary)
                .with_context(|| format!("mock verdict entry for claim {:?}", v.claim))?;
        }
        Ok((ev, vc))
    }
}

pub type Backends = (Arc<dyn EvidenceScorer>, Arc<dyn VerdictClassifier>);

/// Resolves `config.backend.target`: `mock`, `mock-gold` (needs gold
/// labels in `records`) or an `http(s)://` base URL.
pub fn build_backends(
    config: &PipelineConfig,
    records: &[VerificationRecord],
    mock_spec: Option<&Path>,
) -> Result<Backends> {
    let target = config.backend.target.as_str();
    let mut spec = match target {
        "mock" => MockSpec::default(),
        "mock-gold" => MockSpec::from_gold(records),
        _ => {
            if mock_spec.is_some() {
                bail!("--mock-spec only applies to mock backends");
            }
            let endpoint = BackendEndpoint::from_settings(&config.backend)?;
            let ev = RemoteEvidenceScorer::new(endpoint.clone()).map_err(anyhow::Error::new)?;
            let vc = RemoteVerdictClassifier::new(endpoint).map_err(anyhow::Error::new)?;
            return Ok((Arc::new(ev), Arc::new(vc)));
        }
    };
    if let Some(path) = mock_spec {
        spec.extend(MockSpec::load(path)?);
    }
    let (ev, vc) = spec.build()?;
    Ok((Arc::new(ev), Arc::new(vc)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: PathBuf,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub wall_ms: f64,
    pub stages: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub predictions: PathBuf,
    pub manifest: PathBuf,
}

/// Everything needed to repeat a `verify` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: PipelineConfig,
    pub dataset: DatasetInfo,
    pub backend: String,
    pub mock_spec: Option<PathBuf>,
    pub jobs: usize,
    pub timings: RunTimings,
    pub outputs: OutputPaths,
    pub failures: Vec<RecordFailure>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

#[derive(Debug, Clone)]
pub struct VerifyRequest {
    pub input: PathBuf,
    pub config: PipelineConfig,
    pub mock_spec: Option<PathBuf>,
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl VerifyRequest {
    /// Rebuilds the request recorded in a manifest, writing to `out_dir`.
    pub fn from_manifest(m: &RunManifest, out_dir: PathBuf) -> Self {
        Self {
            input: m.dataset.path.clone(),
            config: m.config.clone(),
            mock_spec: m.mock_spec.clone(),
            jobs: m.jobs,
            out_dir,
        }
    }
}

pub fn predictions_of(run: &CorpusRun) -> Vec<Prediction> {
    run.results().map(Prediction::from).collect()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs the pipeline over a dataset and writes predictions plus manifest.
/// Errors are fatal problems (bad config, unreadable input); per-record
/// failures are listed in the manifest.
pub fn run_verify(req: &VerifyRequest) -> Result<RunManifest> {
    req.config.validate()?;
    let records = ingest_dataset(&req.input)?;
    let (ev, vc) = build_backends(&req.config, &records, req.mock_spec.as_deref())?;
    let pipeline = Pipeline::new(req.config.clone(), ev, vc);
    let run = pipeline.verify_corpus(&records, req.jobs);

    fs::create_dir_all(&req.out_dir).with_context(|| format!("creating {}", req.out_dir.display()))?;
    let outputs = OutputPaths {
        predictions: req.out_dir.join(PREDICTIONS_FILE),
        manifest: req.out_dir.join(MANIFEST_FILE),
    };
    write_json(&outputs.predictions, &predictions_of(&run))?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: req.config.clone(),
        dataset: DatasetInfo {
            path: req.input.canonicalize().unwrap_or_else(|_| req.input.clone()),
            records: records.len(),
        },
        backend: req.config.backend.target.clone(),
        mock_spec: req.mock_spec.as_ref().map(|p| p.canonicalize().unwrap_or_else(|_| p.clone())),
        jobs: req.jobs,
        timings: RunTimings { wall_ms: run.wall_ms, stages: run.stage_totals },
        failures: run
            .errors()
            .map(|(id, e)| RecordFailure { id: id.to_string(), error: e.to_string() })
            .collect(),
        outputs,
    };
    write_json(&manifest.outputs.manifest, &manifest)?;
    Ok(manifest)
}

/// Writes `eval.txt` and `eval.json` into `out_dir` when given.
pub fn run_eval(pred: &Path, gold: &Path, total_time_ms: f64, out_dir: Option<&Path>) -> Result<(EvalReport, String)> {
    let preds = semfact_core::eval::read_predictions(pred)?;
    let gold = ingest_dataset(gold)?;
    let report = evaluate(&preds, &gold, total_time_ms)?;
    let (text, _) = semfact_core::eval::compare_report(&[(pred.display().to_string(), report.clone())]);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("eval.txt"), &text)?;
        write_json(&dir.join("eval.json"), &report)?;
    }
    Ok((report, text))
}

/// Parses a comma-separated threshold list, dropping duplicates (with a
/// warning) and sorting ascending.
pub fn parse_thresholds(list: &str) -> Result<Vec<f64>> {
    let mut seen = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t = semfact_core::pipeline::parse_threshold(item).map_err(anyhow::Error::msg)?;
        if seen.contains(&t) {
            warn!("duplicate threshold {item} ignored");
        } else {
            seen.push(t);
        }
    }
    if seen.is_empty() {
        bail!("no thresholds given");
    }
    seen.sort_by(f64::total_cmp);
    Ok(seen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    pub hard: usize,
    pub easy: usize,
    pub failed: usize,
    /// Absent when the dataset has no gold labels.
    pub accuracy: Option<SweepAccuracy>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepAccuracy {
    pub strict_acc: f64,
    pub vc_acc: f64,
    pub er_acc: f64,
}

fn ser_threshold<S: serde::Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_f64(*t)
    } else {
        s.serialize_str(&format_threshold(*t))
    }
}

fn de_threshold<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v = serde_json::Value::deserialize(d)?;
    match v {
        serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| serde::de::Error::custom("bad number")),
        serde_json::Value::String(s) => {
            semfact_core::pipeline::parse_threshold(&s).map_err(serde::de::Error::custom)
        }
        other => Err(serde::de::Error::custom(format!("bad threshold {other}"))),
    }
}

/// Verifies `records` once per threshold with otherwise fixed settings.
pub fn sweep(
    records: &[VerificationRecord],
    base: &PipelineConfig,
    backends: &Backends,
    thresholds: &[f64],
    jobs: usize,
) -> Result<Vec<SweepPoint>> {
    let labelled = !records.is_empty() && records.iter().all(|r| r.gold_verdict.is_some());
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let config = PipelineConfig { tfidf_threshold: t, ..base.clone() };
        config.validate()?;
        let pipeline = Pipeline::new(config, backends.0.clone(), backends.1.clone());
        let run = pipeline.verify_corpus(records, jobs);
        let hard = run.results().filter(|r| r.source.is_hard()).count();
        let done = run.results().count();
        let accuracy = if labelled {
            let report = evaluate(&predictions_of(&run), records, run.wall_ms);
            match report {
                Ok(r) => Some(SweepAccuracy { strict_acc: r.strict_acc, vc_acc: r.vc_acc, er_acc: r.er_acc }),
                // failed records leave ids unmatched
                Err(_) => None,
            }
        } else {
            None
        };
        points.push(SweepPoint {
            threshold: t,
            hard,
            easy: done - hard,
            failed: records.len() - done,
            accuracy,
            wall_ms: run.wall_ms,
        });
    }
    Ok(points)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("threshold,strict_acc,vc_acc,er_acc,hard,easy,failed,wall_ms\n");
    for p in points {
        let acc = |f: fn(&SweepAccuracy) -> f64| p.accuracy.as_ref().map(|a| f(a).to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            format_threshold(p.threshold),
            acc(|a| a.strict_acc),
            acc(|a| a.vc_acc),
            acc(|a| a.er_acc),
            p.hard,
            p.easy,
            p.failed,
            p.wall_ms
        ));
    }
    out
}

/// Writes `sweep.csv` and `sweep.json`.
pub fn write_sweep(out_dir: &Path, points: &[SweepPoint]) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("sweep.csv"), sweep_csv(points))?;
    write_json(&out_dir.join("sweep.json"), points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_are_deduplicated_and_sorted() {
        assert_eq!(parse_thresholds("0.5, -inf,0.2,0.5,inf").unwrap(), vec![f64::NEG_INFINITY, 0.2, 0.5, f64::INFINITY]);
        assert!(parse_thresholds("").is_err());
        assert!(parse_thresholds("0.1,abc").is_err());
    }

    #[test]
    fn gold_spec_skips_unlabelled() {
        let recs = vec![
            VerificationRecord {
                id: "a".into(),
                claim: "c".into(),
                context: "E.".into(),
                gold_verdict: Some(Verdict::Refuted),
                gold_evidence: Some("E.".into()),
            },
            VerificationRecord {
                id: "b".into(),
                claim: "c2".into(),
                context: "F.".into(),
                gold_verdict: Some(Verdict::Nei),
                gold_evidence: None,
            },
        ];
        let spec = MockSpec::from_gold(&recs);
        assert_eq!(spec.evidence.len(), 1);
        assert_eq!(spec.verdict[0].three, [0.05, 0.05, 0.9]);
        let (_, vc) = spec.build().unwrap();
        assert_eq!(vc.len(), 1);
    }

    #[test]
    fn sweep_point_json_keeps_infinities() {
        let p = SweepPoint { threshold: f64::INFINITY, hard: 1, easy: 0, failed: 0, accuracy: None, wall_ms: 0.0 };
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<SweepPoint>(&json).unwrap(), p);
        assert!(sweep_csv(&[p]).lines().nth(1).unwrap().starts_with("inf,,,,1,0,0,"));
    }
}
