use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Corpus-level n-gram counts behind a BLEU score.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuStats {
    pub matched: Vec<u64>,
    pub total: Vec<u64>,
    pub candidate_length: usize,
    pub reference_length: usize,
    pub score: f64,
}

fn counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU with one reference per candidate: clipped n-gram precisions
/// pooled over the corpus, their geometric mean for n = 1..=max_n, times the
/// brevity penalty `min(1, exp(1 - r/c))`. Any order with no candidate
/// n-grams or no matches gives 0.
pub fn bleu<T: Eq + Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<BleuStats> {
    if candidates.is_empty() {
        return Err(Error::Contract("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Contract("max_n must be at least 1".into()));
    }
    let mut matched = vec![0u64; max_n];
    let mut total = vec![0u64; max_n];
    let (mut c_len, mut r_len) = (0, 0);
    for (cand, reference) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += reference.len();
        for n in 1..=max_n {
            let rc = counts(reference, n);
            for (gram, k) in counts(cand, n) {
                matched[n - 1] += k.min(rc.get(gram).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    let score = if total.contains(&0) || matched.contains(&0) {
        0.0
    } else {
        let log_p = matched
            .iter()
            .zip(&total)
            .map(|(&m, &t)| (m as f64 / t as f64).ln())
            .sum::<f64>()
            / max_n as f64;
        let bp = if c_len > r_len {
            1.0
        } else {
            (1.0 - r_len as f64 / c_len as f64).exp()
        };
        bp * log_p.exp()
    };
    Ok(BleuStats {
        matched,
        total,
        candidate_length: c_len,
        reference_length: r_len,
        score,
    })
}
