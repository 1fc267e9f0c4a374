use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{Dialogue, Role};
use crate::error::{Error, Result};

/// Token/id map. Ids `0..RESERVED.len()` are fixed special and tag symbols;
/// corpus tokens follow in descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const BOS: usize = 2;
    pub const EOS: usize = 3;
    pub const SEP: usize = 4;
    pub const AGENT_TAG: usize = 5;
    pub const USER_TAG: usize = 6;
    pub const RESERVED: [&'static str; 7] = [
        "<pad>", "<unk>", "<s>", "</s>", "<sep>", "<agent>", "<user>",
    ];

    /// Vocabulary from an ordered `(token, frequency)` list of corpus tokens.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut tokens: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0; tokens.len()];
        let mut index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for (tok, freq) in counts {
            if index.contains_key(&tok) {
                if Self::RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                return Err(Error::Contract(format!("duplicate vocabulary token {tok}")));
            }
            index.insert(tok.clone(), tokens.len());
            tokens.push(tok);
            freqs.push(freq);
        }
        Ok(Self {
            tokens,
            freqs,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, or [`Self::UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens
            .get(id)
            .map(String::as_str)
            .unwrap_or(Self::RESERVED[Self::UNK])
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn role_tag(role: Role) -> usize {
        match role {
            Role::Agent => Self::AGENT_TAG,
            Role::User => Self::USER_TAG,
        }
    }

    pub fn is_special(id: usize) -> bool {
        id < Self::RESERVED.len()
    }

    /// Corpus (non-reserved) tokens in id order.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[Self::RESERVED.len()..]
    }

    /// Hex digest of the id assignment.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..16])
    }

    /// `token<TAB>frequency` lines, one per id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, f) in self.tokens.iter().zip(&self.freqs) {
            out.push_str(t);
            out.push('\t');
            out.push_str(&f.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let (tok, freq) = line.split_once('\t').ok_or_else(|| Error::Integrity {
                section: "vocabulary".into(),
                reason: format!("line {} lacks a frequency", i + 1),
            })?;
            let freq = freq.trim().parse().map_err(|_| Error::Integrity {
                section: "vocabulary".into(),
                reason: format!("line {} has a bad frequency", i + 1),
            })?;
            counts.push((tok.to_string(), freq));
        }
        let reserved: Vec<_> = counts
            .iter()
            .take(Self::RESERVED.len())
            .map(|(t, _)| t.as_str())
            .collect();
        if reserved != Self::RESERVED {
            return Err(Error::Integrity {
                section: "vocabulary".into(),
                reason: "reserved tokens missing or out of order".into(),
            });
        }
        Self::from_counts(counts.into_iter().skip(Self::RESERVED.len()))
    }
}

/// Tokens seen at least `min_freq` times, plus the reserved symbols.
pub fn build_vocabulary<'a>(
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
    min_freq: u64,
) -> Vocabulary {
    let min_freq = min_freq.max(1);
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for d in dialogues {
        for u in &d.utterances {
            for t in &u.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && !Vocabulary::RESERVED.contains(&t))
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_counts(kept).expect("counts have unique tokens")
}
