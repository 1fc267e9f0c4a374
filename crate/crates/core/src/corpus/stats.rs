use serde::{Deserialize, Serialize};

use super::samples::{derive_arbitrator_samples, WAIT};
use super::{Dialogue, Role};

/// Corpus summary with the same rows as the usual dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub vocabulary_size: Option<usize>,
    pub dialogues: usize,
    pub avg_turns_per_dialogue: f64,
    pub avg_split_user_turns: f64,
    pub avg_utterance_length: f64,
    pub avg_agent_utterance: f64,
    pub avg_user_utterance: f64,
    pub agent_wait_samples: usize,
    pub agent_reply_samples: usize,
}

fn mean(sum: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

pub fn compute_stats(dialogues: &[Dialogue]) -> CorpusStats {
    let (mut turns, mut user_turns, mut user_subturns) = (0, 0, 0);
    let (mut all_len, mut all_n) = (0, 0);
    let (mut agent_len, mut agent_n, mut user_len, mut user_n) = (0, 0, 0, 0);
    let (mut wait, mut reply) = (0, 0);
    for d in dialogues {
        for turn in d.turns() {
            turns += 1;
            if turn[0].role == Role::User {
                user_turns += 1;
                user_subturns += turn.len();
            }
        }
        for u in &d.utterances {
            all_len += u.tokens.len();
            all_n += 1;
            match u.role {
                Role::Agent => {
                    agent_len += u.tokens.len();
                    agent_n += 1;
                }
                Role::User => {
                    user_len += u.tokens.len();
                    user_n += 1;
                }
            }
        }
        for s in derive_arbitrator_samples(d) {
            if s.label == WAIT {
                wait += 1;
            } else {
                reply += 1;
            }
        }
    }
    CorpusStats {
        vocabulary_size: None,
        dialogues: dialogues.len(),
        avg_turns_per_dialogue: mean(turns, dialogues.len()),
        avg_split_user_turns: mean(user_subturns, user_turns),
        avg_utterance_length: mean(all_len, all_n),
        avg_agent_utterance: mean(agent_len, agent_n),
        avg_user_utterance: mean(user_len, user_n),
        agent_wait_samples: wait,
        agent_reply_samples: reply,
    }
}

impl CorpusStats {
    /// `Row Name: value` lines.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        if let Some(v) = self.vocabulary_size {
            out.push_str(&format!("Vocabulary Size: {v}\n"));
        }
        out.push_str(&format!("Dialogues: {}\n", self.dialogues));
        out.push_str(&format!(
            "Avg. Turns/Dialogue: {:.4}\n",
            self.avg_turns_per_dialogue
        ));
        out.push_str(&format!(
            "Avg. Split User Turns: {:.4}\n",
            self.avg_split_user_turns
        ));
        out.push_str(&format!(
            "Avg. Utterance Length: {:.4}\n",
            self.avg_utterance_length
        ));
        out.push_str(&format!(
            "Avg. Agent's Utterance: {:.4}\n",
            self.avg_agent_utterance
        ));
        out.push_str(&format!(
            "Avg. User's Utterance: {:.4}\n",
            self.avg_user_utterance
        ));
        out.push_str(&format!(
            "Agent Wait Samples: {}\n",
            self.agent_wait_samples
        ));
        out.push_str(&format!(
            "Agent Reply Samples: {}\n",
            self.agent_reply_samples
        ));
        out
    }
}
