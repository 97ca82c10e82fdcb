//! Minimal in-process HTTP server for exercising the wire protocol
//! without a real model server. One request per connection.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};

use semfact_core::corpus::{split_sentences, WhitespaceTokenizer};
use semfact_core::evidence::{EvidenceScorer, MockEvidenceScorer};
use semfact_core::segmenter::SubContext;
use semfact_core::verdict::{MockVerdictClassifier, VerdictClassifier};

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Vec<u8>,
}

impl RecordedRequest {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }
}

/// Status code and raw body to send back.
pub type Reply = (u16, String);

type Handler = dyn Fn(&RecordedRequest) -> Reply + Send + Sync;

pub struct StubServer {
    addr: SocketAddr,
    log: Arc<Mutex<Vec<RecordedRequest>>>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral localhost port and answers with `handler`.
    pub fn spawn(handler: impl Fn(&RecordedRequest) -> Reply + Send + Sync + 'static) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let log = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let worker = {
            let log = log.clone();
            let stop = stop.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let log = log.clone();
                    let handler = handler.clone();
                    thread::spawn(move || {
                        let _ = serve(stream, &log, handler.as_ref());
                    });
                }
            })
        };
        Ok(Self { addr, log, stop, worker: Some(worker) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().expect("request log").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<RecordedRequest>>, handler: &Handler) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut length = 0usize;
    let mut authorization = None;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.parse().unwrap_or(0),
                "authorization" => authorization = Some(value.to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let req = RecordedRequest { path, authorization, body };
    let (status, reply) = handler(&req);
    log.lock().expect("request log").push(req);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    stream.flush()
}

fn subcontext_from_tokens(tokens: &[Value]) -> Option<SubContext> {
    let words: Vec<&str> = tokens.iter().map(Value::as_str).collect::<Option<_>>()?;
    let sentences = split_sentences(&words.join(" "), &WhitespaceTokenizer);
    (!sentences.is_empty()).then(|| SubContext::from_sentences(&sentences))
}

fn bad_request(msg: &str) -> Reply {
    (400, json!({ "error": msg }).to_string())
}

fn score_json(mock: &MockEvidenceScorer, claim: &str, tokens: &Value) -> Option<Value> {
    let sub = subcontext_from_tokens(tokens.as_array()?)?;
    let scores = mock.score(claim, &sub).ok()?;
    Some(json!({ "token_probs": scores.probs }))
}

/// Answers the full `/v1` protocol from in-memory mock models. Token
/// arrays are rejoined with single spaces, which reproduces the segment
/// text under whitespace tokenization.
pub fn mock_model_handler(
    evidence: MockEvidenceScorer,
    verdict: MockVerdictClassifier,
) -> impl Fn(&RecordedRequest) -> Reply + Send + Sync + 'static {
    move |req| {
        let body = req.json();
        let Some(claim) = body["claim"].as_str() else {
            return bad_request("missing claim");
        };
        match req.path.as_str() {
            "/v1/evidence/score" => match score_json(&evidence, claim, &body["tokens"]) {
                Some(v) => (200, v.to_string()),
                None => bad_request("bad tokens"),
            },
            "/v1/evidence/score_batch" => {
                let Some(items) = body["items"].as_array() else {
                    return bad_request("missing items");
                };
                let results: Option<Vec<Value>> =
                    items.iter().map(|it| score_json(&evidence, claim, &it["tokens"])).collect();
                match results {
                    Some(r) => (200, json!({ "results": r }).to_string()),
                    None => bad_request("bad tokens"),
                }
            }
            "/v1/verdict/three" | "/v1/verdict/binary" => {
                let ev = body["evidence"].as_str().unwrap_or_default();
                let probs: Vec<f64> = if req.path.ends_with("three") {
                    verdict.classify3(claim, ev).map(|p| p.as_array().to_vec())
                } else {
                    verdict.classify2(claim, ev).map(|p| p.as_array().to_vec())
                }
                .unwrap_or_default();
                (200, json!({ "probs": probs }).to_string())
            }
            _ => (404, json!({ "error": "unknown route" }).to_string()),
        }
    }
}
