use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dialogue, Role, Utterance};

/// Tokens after which a user message may be split.
pub const SPLIT_PUNCTUATION: &[&str] = &[".", "!", "?", ";"];

/// Deterministic per-dialogue stream: the corpus seed mixed with the id.
pub(crate) fn dialogue_rng(seed: u64, id: &str) -> ChaCha8Rng {
    // FNV-1a over the id keeps streams independent of corpus order.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Splits user utterances at sentence punctuation. Every internal boundary
/// (a punctuation token that is not the last token) is realized
/// independently with probability `p_split`; the punctuation stays on the
/// left segment. Segments of one turn are renumbered as subturns `0..j`.
pub fn split_utterances(dialogue: &Dialogue, p_split: f64, seed: u64) -> Dialogue {
    let p_split = p_split.clamp(0.0, 1.0);
    if p_split == 0.0 {
        return dialogue.clone();
    }
    let mut rng = dialogue_rng(seed, &dialogue.id);
    let mut utterances = Vec::with_capacity(dialogue.utterances.len());
    let mut subturn = 0;
    let mut current_turn = usize::MAX;
    for u in &dialogue.utterances {
        if u.turn != current_turn {
            current_turn = u.turn;
            subturn = 0;
        }
        if u.role != Role::User {
            utterances.push(u.clone());
            continue;
        }
        let mut segment = Vec::new();
        let last = u.tokens.len() - 1;
        for (i, tok) in u.tokens.iter().enumerate() {
            segment.push(tok.clone());
            let boundary = i < last && SPLIT_PUNCTUATION.contains(&tok.as_str());
            if boundary && rng.gen::<f64>() < p_split {
                utterances.push(Utterance::new(
                    Role::User,
                    u.turn,
                    subturn,
                    std::mem::take(&mut segment),
                ));
                subturn += 1;
            }
        }
        utterances.push(Utterance::new(Role::User, u.turn, subturn, segment));
        subturn += 1;
    }
    Dialogue {
        id: dialogue.id.clone(),
        utterances,
    }
}
