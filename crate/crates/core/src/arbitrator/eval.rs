use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Decision;
use crate::corpus::{REPLY, WAIT};
use crate::error::{Error, Result};

/// Fraction of positions where prediction equals gold.
pub fn accuracy(predictions: &[u8], gold: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Contract("accuracy of zero predictions".into()));
    }
    if predictions.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            gold.len()
        )));
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Independent coin flips answering reply with probability `reply_prob`.
pub fn random_policy(n: usize, reply_prob: f64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.gen_bool(reply_prob) {
                REPLY
            } else {
                WAIT
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassCounts {
    pub precision: f64,
    pub recall: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArbitratorReport {
    pub total: usize,
    pub accuracy: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: [[u64; 2]; 2],
    pub wait: ClassCounts,
    pub reply: ClassCounts,
    /// Share of gold reply labels.
    pub reply_prior: f64,
    pub random_accuracy: f64,
    /// Expected accuracy of the random policy under the gold label mix.
    pub random_expected: f64,
    pub generation_failures: usize,
}

impl ArbitratorReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.confusion;
        let _ = writeln!(s, "samples: {}", self.total);
        let _ = writeln!(s, "accuracy: {:.6}", self.accuracy);
        let _ = writeln!(s, "random_accuracy: {:.6}", self.random_accuracy);
        let _ = writeln!(s, "random_expected: {:.6}", self.random_expected);
        let _ = writeln!(s, "reply_prior: {:.6}", self.reply_prior);
        for (name, k) in [("wait", &self.wait), ("reply", &self.reply)] {
            let _ = writeln!(s, "{name}_precision: {:.6}", k.precision);
            let _ = writeln!(s, "{name}_recall: {:.6}", k.recall);
            let _ = writeln!(s, "{name}_support: {}", k.support);
        }
        let _ = writeln!(s, "confusion_wait_as_wait: {}", c[0][0]);
        let _ = writeln!(s, "confusion_wait_as_reply: {}", c[0][1]);
        let _ = writeln!(s, "confusion_reply_as_wait: {}", c[1][0]);
        let _ = writeln!(s, "confusion_reply_as_reply: {}", c[1][1]);
        let _ = writeln!(s, "generation_failures: {}", self.generation_failures);
        s
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores decisions against gold labels, with a seeded uniform random
/// policy alongside.
pub fn evaluate_decisions(
    decisions: &[Decision],
    gold: &[u8],
    seed: u64,
) -> Result<ArbitratorReport> {
    let predicted: Vec<u8> = decisions.iter().map(|d| d.label).collect();
    let acc = accuracy(&predicted, gold)?;
    let mut confusion = [[0u64; 2]; 2];
    for (&p, &g) in predicted.iter().zip(gold) {
        confusion[g as usize][p as usize] += 1;
    }
    let class = |k: usize| ClassCounts {
        precision: ratio(confusion[k][k], confusion[0][k] + confusion[1][k]),
        recall: ratio(confusion[k][k], confusion[k][0] + confusion[k][1]),
        support: confusion[k][0] + confusion[k][1],
    };
    let reply_prior = ratio(confusion[1][0] + confusion[1][1], gold.len() as u64);
    let random = random_policy(gold.len(), 0.5, seed);
    Ok(ArbitratorReport {
        total: gold.len(),
        accuracy: acc,
        confusion,
        wait: class(0),
        reply: class(1),
        reply_prior,
        random_accuracy: accuracy(&random, gold)?,
        random_expected: 0.5 * reply_prior + 0.5 * (1.0 - reply_prior),
        generation_failures: decisions.iter().filter(|d| d.generation_failed).count(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub sample_id: String,
    pub label: u8,
    pub p_wait: f64,
    pub p_reply: f64,
    pub imagined_agent: Vec<String>,
    pub imagined_user: Vec<String>,
}

impl DecisionRecord {
    pub fn new(sample_id: &str, d: &Decision) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            label: d.label,
            p_wait: d.probs[0],
            p_reply: d.probs[1],
            imagined_agent: d.imagined_agent.clone(),
            imagined_user: d.imagined_user.clone(),
        }
    }
}

pub fn write_decisions(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
