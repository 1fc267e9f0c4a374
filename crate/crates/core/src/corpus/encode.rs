use serde::{Deserialize, Serialize};

use super::{Role, Utterance, Vocabulary};

/// Caps on tag values and history length used by the imaginator encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCaps {
    pub turn: usize,
    pub subturn: usize,
    pub max_history: usize,
}

impl Default for TagCaps {
    fn default() -> Self {
        Self {
            turn: 16,
            subturn: 8,
            max_history: 256,
        }
    }
}

/// One history position: the token plus its role, turn and subturn tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EncodedToken {
    pub token: usize,
    /// [`Role::tag_id`] of the speaker.
    pub role: usize,
    pub turn: usize,
    pub subturn: usize,
}

/// Flattens a history into tagged token records. Utterances are joined by a
/// separator record carrying the tags of the utterance that follows it, and
/// the result keeps only the newest `caps.max_history` records.
pub fn encode_history(
    history: &[Utterance],
    vocab: &Vocabulary,
    caps: &TagCaps,
) -> Vec<EncodedToken> {
    let mut out = Vec::new();
    for (i, u) in history.iter().enumerate() {
        let tags = |token| EncodedToken {
            token,
            role: u.role.tag_id(),
            turn: u.turn.min(caps.turn),
            subturn: u.subturn.min(caps.subturn),
        };
        if i > 0 {
            out.push(tags(Vocabulary::SEP));
        }
        out.extend(u.tokens.iter().map(|t| tags(vocab.id(t))));
    }
    if out.len() > caps.max_history {
        out.drain(..out.len() - caps.max_history);
    }
    out
}

/// Inverse of [`encode_history`] up to tag clamping and unknown tokens.
pub fn decode_history(encoded: &[EncodedToken], vocab: &Vocabulary) -> Vec<Utterance> {
    let mut out: Vec<Utterance> = Vec::new();
    let mut open = true;
    for e in encoded {
        if e.token == Vocabulary::SEP {
            open = false;
            continue;
        }
        let role = if e.role == Role::Agent.tag_id() {
            Role::Agent
        } else {
            Role::User
        };
        match out.last_mut() {
            Some(u) if open => u.tokens.push(vocab.token(e.token).to_string()),
            _ => out.push(Utterance::new(
                role,
                e.turn,
                e.subturn,
                vec![vocab.token(e.token).to_string()],
            )),
        }
        open = true;
    }
    out
}
