use serde::{Deserialize, Serialize};

use super::{Dialogue, Role, Utterance};

pub const WAIT: u8 = 0;
pub const REPLY: u8 = 1;

/// History up to and including a user message, with the wait/reply label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArbitratorSample {
    pub id: String,
    pub history: Vec<Utterance>,
    pub label: u8,
}

/// History and the utterance that follows it, for one role's generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImaginatorSample {
    pub id: String,
    pub history: Vec<Utterance>,
    pub target: Utterance,
    pub role: Role,
}

/// One sample per user utterance. The label is 1 (reply) when the next
/// utterance is the agent's or the user utterance ends the dialogue, and
/// 0 (wait) when another user subturn follows.
pub fn derive_arbitrator_samples(dialogue: &Dialogue) -> Vec<ArbitratorSample> {
    let us = &dialogue.utterances;
    us.iter()
        .enumerate()
        .filter(|(_, u)| u.role == Role::User)
        .map(|(i, _)| {
            let label = match us.get(i + 1) {
                Some(next) if next.role == Role::User => WAIT,
                _ => REPLY,
            };
            ArbitratorSample {
                id: format!("{}#{i}", dialogue.id),
                history: us[..=i].to_vec(),
                label,
            }
        })
        .collect()
}

/// One sample per utterance of `role` that has at least one utterance
/// before it; the history is everything before the target.
pub fn derive_imaginator_samples(dialogue: &Dialogue, role: Role) -> Vec<ImaginatorSample> {
    let us = &dialogue.utterances;
    (1..us.len())
        .filter(|&i| us[i].role == role)
        .map(|i| ImaginatorSample {
            id: format!("{}#{i}", dialogue.id),
            history: us[..i].to_vec(),
            target: us[i].clone(),
            role,
        })
        .collect()
}
