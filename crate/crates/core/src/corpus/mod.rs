//! Dialogue corpora: ingestion, slot masking, utterance splitting, tagging,
//! sample derivation, vocabulary, history encoding, and statistics.

mod encode;
mod ingest;
mod io;
mod mask;
pub mod pipeline;
mod samples;
mod split;
mod stats;
pub mod synth;
mod tokenize;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use encode::{decode_history, encode_history, EncodedToken, TagCaps};
pub use ingest::{ingest_source, ingest_str, IngestReport, SourceFormat};
pub use io::{
    read_arbitrator_samples, read_imaginator_samples, read_processed, write_arbitrator_samples,
    write_imaginator_samples, write_processed, CorpusHeader,
};
pub use mask::{mask_slots, SlotValues};
pub use samples::{
    derive_arbitrator_samples, derive_imaginator_samples, ArbitratorSample, ImaginatorSample,
    REPLY, WAIT,
};
pub use split::{split_utterances, SPLIT_PUNCTUATION};
pub use stats::{compute_stats, CorpusStats};
pub use tokenize::tokenize;
pub use vocab::{build_vocabulary, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Agent,
    User,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Agent => "agent",
            Role::User => "user",
        }
    }

    /// Small id used by tag embeddings; 0 is reserved for padding.
    pub fn tag_id(self) -> usize {
        match self {
            Role::Agent => 1,
            Role::User => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s.to_ascii_lowercase().as_str() {
            "agent" | "system" | "sys" | "a" => Some(Role::Agent),
            "user" | "usr" | "u" | "customer" => Some(Role::User),
            _ => None,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::parse(s).ok_or_else(|| Error::Config(format!("unknown role {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub turn: usize,
    pub subturn: usize,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(role: Role, turn: usize, subturn: usize, tokens: Vec<String>) -> Self {
        Self {
            role,
            turn,
            subturn,
            tokens,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    /// Builds a tagged dialogue from `(role, text)` messages. Consecutive
    /// user messages become subturns of one turn; consecutive agent messages
    /// are merged into a single utterance.
    pub fn from_messages<'a>(
        id: impl Into<String>,
        messages: impl IntoIterator<Item = (Role, &'a str)>,
    ) -> Result<Self> {
        let id = id.into();
        let mut utterances: Vec<Utterance> = Vec::new();
        for (i, (role, text)) in messages.into_iter().enumerate() {
            let tokens = tokenize(text);
            if tokens.is_empty() {
                return Err(Error::Ingestion {
                    locator: format!("{id}: message {i}"),
                    reason: "empty utterance".into(),
                });
            }
            match utterances.last_mut() {
                Some(prev) if prev.role == role && role == Role::Agent => {
                    prev.tokens.extend(tokens)
                }
                Some(prev) if prev.role == role => {
                    let (turn, subturn) = (prev.turn, prev.subturn + 1);
                    utterances.push(Utterance::new(role, turn, subturn, tokens));
                }
                Some(prev) => {
                    let turn = prev.turn + 1;
                    utterances.push(Utterance::new(role, turn, 0, tokens));
                }
                None => utterances.push(Utterance::new(role, 0, 0, tokens)),
            }
        }
        let d = Dialogue { id, utterances };
        d.validate()?;
        Ok(d)
    }

    /// Checks the tagging invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::Ingestion {
            locator: self.id.clone(),
            reason,
        };
        let first = self
            .utterances
            .first()
            .ok_or_else(|| bad("empty dialogue".into()))?;
        if first.turn != 0 || first.subturn != 0 {
            return Err(bad("first utterance must be turn 0, subturn 0".into()));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.tokens.is_empty() {
                return Err(bad(format!("utterance {i} has no tokens")));
            }
            if u.tokens
                .iter()
                .any(|t| t.is_empty() || t.chars().any(char::is_whitespace))
            {
                return Err(bad(format!("utterance {i} has a malformed token")));
            }
            if u.role == Role::Agent && u.subturn != 0 {
                return Err(bad(format!(
                    "agent utterance {i} has subturn {}",
                    u.subturn
                )));
            }
            if i == 0 {
                continue;
            }
            let prev = &self.utterances[i - 1];
            let same_turn =
                u.turn == prev.turn && u.role == prev.role && u.subturn == prev.subturn + 1;
            let next_turn = u.turn == prev.turn + 1 && u.role != prev.role && u.subturn == 0;
            if !(same_turn || next_turn) {
                return Err(bad(format!("utterance {i} breaks turn/subturn order")));
            }
        }
        Ok(())
    }

    /// Utterances grouped by turn, in order.
    pub fn turns(&self) -> Vec<&[Utterance]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.utterances.len() {
            if i == self.utterances.len() || self.utterances[i].turn != self.utterances[start].turn
            {
                out.push(&self.utterances[start..i]);
                start = i;
            }
        }
        out
    }
}
