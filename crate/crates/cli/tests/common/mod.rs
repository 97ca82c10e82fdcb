//! Seeded synthetic datasets shared by the CLI and acceptance tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semfact_core::{Verdict, VerificationRecord};

/// Record kinds, chosen round-robin by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Gold sentence shares most claim words; TF-IDF finds it.
    Easy,
    /// A distractor shares more claim words than the gold sentence, so
    /// TF-IDF alone picks the wrong sentence.
    Hard,
    /// No gold evidence.
    Nei,
}

pub fn kind_of(i: usize) -> Kind {
    match i % 3 {
        0 => Kind::Easy,
        1 => Kind::Hard,
        _ => Kind::Nei,
    }
}

fn word(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(4..8)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn sentence(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        s.replace_range(0..1, &first.to_uppercase());
    }
    s.push('.');
    s
}

/// `shared` claim words plus fillers, shuffled, at least `len` words.
fn mixed(rng: &mut ChaCha8Rng, claim: &[String], shared: usize, len: usize) -> String {
    let mut picked: Vec<String> = claim.choose_multiple(rng, shared).cloned().collect();
    while picked.len() < len {
        picked.push(format!("x{}", word(rng)));
    }
    picked.shuffle(rng);
    sentence(&picked)
}

/// `n` labelled records; claims have 6 words, sentences 7 to 10, so no
/// sentence is short enough to be merged.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<VerificationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let claim_words: Vec<String> = (0..6).map(|_| word(&mut rng)).collect();
            let kind = kind_of(i);
            let fillers = rng.gen_range(2..9);
            let mut sentences: Vec<String> = (0..fillers)
                .map(|_| {
                    let len = rng.gen_range(7..11);
                    mixed(&mut rng, &claim_words, 0, len)
                })
                .collect();
            let (gold_shared, distractor_shared) = match kind {
                Kind::Easy => (5, 1),
                Kind::Hard => (1, 4),
                Kind::Nei => (0, 2),
            };
            let len = rng.gen_range(7..11);
            let distractor = mixed(&mut rng, &claim_words, distractor_shared, len);
            sentences.insert(rng.gen_range(0..=sentences.len()), distractor);
            let gold = (kind != Kind::Nei).then(|| {
                let len = rng.gen_range(7..11);
                mixed(&mut rng, &claim_words, gold_shared, len)
            });
            if let Some(g) = &gold {
                sentences.insert(rng.gen_range(0..=sentences.len()), g.clone());
            }
            let verdict = match kind {
                Kind::Nei => Verdict::Nei,
                _ if rng.gen_bool(0.5) => Verdict::Supported,
                _ => Verdict::Refuted,
            };
            VerificationRecord {
                id: format!("syn-{i:04}"),
                claim: sentence(&claim_words),
                context: sentences.join(" "),
                gold_verdict: Some(verdict),
                gold_evidence: gold,
            }
        })
        .collect()
}

pub fn write_dataset(dir: &std::path::Path, name: &str, records: &[VerificationRecord]) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(records).unwrap()).unwrap();
    path
}
