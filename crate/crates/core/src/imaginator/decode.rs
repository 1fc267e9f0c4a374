use std::cmp::Ordering;

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.7;

/// Anything that yields next-token log-probabilities from a state.
pub trait StepModel {
    type State: Clone;

    fn start(&self) -> Self::State;
    fn bos(&self) -> usize;
    fn eos(&self) -> usize;
    /// Log-probabilities over the vocabulary and the successor state for each
    /// `(state, previous token)` pair.
    fn step(&self, items: &[(&Self::State, usize)]) -> Result<Vec<(Vec<f64>, Self::State)>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Generated ids without the trailing EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / n^alpha`, `n` counting the EOS when present.
    pub score: f64,
    pub finished: bool,
}

#[derive(Clone)]
struct Hypothesis<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
    finished: bool,
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(alpha)
}

/// Higher score first, then the lexicographically smaller sequence.
fn better(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

fn finish<S>(h: Hypothesis<S>, eos: usize, alpha: f64) -> Decoded {
    let score = normalized(h.log_prob, h.tokens.len(), alpha);
    let mut tokens = h.tokens;
    if h.finished {
        debug_assert_eq!(tokens.last(), Some(&eos));
        tokens.pop();
    }
    Decoded {
        tokens,
        log_prob: h.log_prob,
        score,
        finished: h.finished,
    }
}

/// Takes the best next token at every step (ties to the lowest id) until EOS
/// or `max_len` tokens.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize, alpha: f64) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let eos = model.eos();
    let mut state = model.start();
    let mut prev = model.bos();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut finished = false;
    while tokens.len() < max_len {
        let (lp, next) = model
            .step(&[(&state, prev)])?
            .pop()
            .expect("one row per item");
        // compare cumulative values so the choice matches a width-1 beam exactly
        let mut best = 0;
        for t in 1..lp.len() {
            if log_prob + lp[t] > log_prob + lp[best] {
                best = t;
            }
        }
        log_prob += lp[best];
        tokens.push(best);
        state = next;
        prev = best;
        if best == eos {
            finished = true;
            break;
        }
    }
    Ok(finish(
        Hypothesis {
            tokens,
            log_prob,
            state: (),
            finished,
        },
        eos,
        alpha,
    ))
}

/// Plain length-wise beam search: keep the top `width` expansions by
/// cumulative log-probability, retire those ending in EOS, and return the
/// best retired (or still live at `max_len`) hypothesis by normalized score.
pub fn standard_beam<M: StepModel>(
    model: &M,
    width: usize,
    max_len: usize,
    alpha: f64,
) -> Result<Decoded> {
    if width == 0 || max_len == 0 {
        return Err(Error::Contract(
            "beam width and max_len must be at least 1".into(),
        ));
    }
    let eos = model.eos();
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.start(),
        finished: false,
    }];
    let mut pool: Vec<Hypothesis<()>> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let items: Vec<(&M::State, usize)> = live
            .iter()
            .map(|h| (&h.state, h.tokens.last().copied().unwrap_or(model.bos())))
            .collect();
        let outs = model.step(&items)?;
        // all live hypotheses have equal length, so sequence order is parent
        // order followed by the new token
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (p, (lp, _)) in outs.iter().enumerate() {
            candidates.extend(
                lp.iter()
                    .enumerate()
                    .map(|(t, &l)| (p, t, live[p].log_prob + l)),
            );
        }
        candidates.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| live[a.0].tokens.cmp(&live[b.0].tokens))
                .then_with(|| a.1.cmp(&b.1))
        });
        candidates.truncate(width);
        let mut next = Vec::new();
        for (p, t, log_prob) in candidates {
            let mut tokens = live[p].tokens.clone();
            tokens.push(t);
            if t == eos {
                pool.push(Hypothesis {
                    tokens,
                    log_prob,
                    state: (),
                    finished: true,
                });
            } else {
                next.push(Hypothesis {
                    tokens,
                    log_prob,
                    state: outs[p].1.clone(),
                    finished: false,
                });
            }
        }
        live = next;
    }
    pool.extend(live.into_iter().map(|h| Hypothesis {
        tokens: h.tokens,
        log_prob: h.log_prob,
        state: (),
        finished: false,
    }));
    let best = pool
        .into_iter()
        .min_by(|a, b| {
            better(
                (normalized(a.log_prob, a.tokens.len(), alpha), &a.tokens),
                (normalized(b.log_prob, b.tokens.len(), alpha), &b.tokens),
            )
        })
        .expect("beam search keeps at least one hypothesis");
    Ok(finish(best, eos, alpha))
}

/// Beam search whose result is the best over every width from 1 to `width`,
/// which makes the returned score non-decreasing in the width and never
/// worse than greedy decoding.
pub fn beam_decode<M: StepModel>(
    model: &M,
    width: usize,
    max_len: usize,
    alpha: f64,
) -> Result<Decoded> {
    if width == 0 {
        return Err(Error::Contract("beam width must be at least 1".into()));
    }
    let mut best = standard_beam(model, 1, max_len, alpha)?;
    for w in 2..=width {
        let d = standard_beam(model, w, max_len, alpha)?;
        let key = |d: &Decoded| {
            let mut full = d.tokens.clone();
            if d.finished {
                full.push(model.eos());
            }
            full
        };
        if better((d.score, &key(&d)), (best.score, &key(&best))) == Ordering::Less {
            best = d;
        }
    }
    Ok(best)
}
