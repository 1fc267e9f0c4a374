use std::collections::{BTreeMap, HashMap};

use super::tokenize::tokenize;
use super::Dialogue;

/// Slot name to the literal values it covers.
pub type SlotValues = BTreeMap<String, Vec<String>>;

struct Pattern {
    tokens: Vec<String>,
    placeholder: String,
}

/// Replaces every occurrence of a mapped value with the single token
/// `[slot_name]`. Values are matched on token sequences, longest first.
pub fn mask_slots(dialogue: &Dialogue, values: &SlotValues) -> Dialogue {
    if values.is_empty() {
        return dialogue.clone();
    }
    let mut by_first: HashMap<&str, Vec<Pattern>> = HashMap::new();
    let mut patterns: Vec<Pattern> = Vec::new();
    for (slot, vals) in values {
        for v in vals {
            let tokens = tokenize(v);
            if tokens.is_empty() {
                continue;
            }
            patterns.push(Pattern {
                tokens,
                placeholder: format!("[{}]", slot.to_lowercase()),
            });
        }
    }
    patterns.sort_by(|a, b| {
        b.tokens
            .len()
            .cmp(&a.tokens.len())
            .then_with(|| a.tokens.cmp(&b.tokens))
            .then_with(|| a.placeholder.cmp(&b.placeholder))
    });
    for p in &patterns {
        by_first
            .entry(p.tokens[0].as_str())
            .or_default()
            .push(Pattern {
                tokens: p.tokens.clone(),
                placeholder: p.placeholder.clone(),
            });
    }

    let mut out = dialogue.clone();
    for u in &mut out.utterances {
        let mut masked = Vec::with_capacity(u.tokens.len());
        let mut i = 0;
        while i < u.tokens.len() {
            let hit = by_first
                .get(u.tokens[i].as_str())
                .and_then(|cands| cands.iter().find(|p| u.tokens[i..].starts_with(&p.tokens)));
            match hit {
                Some(p) => {
                    masked.push(p.placeholder.clone());
                    i += p.tokens.len();
                }
                None => {
                    masked.push(u.tokens[i].clone());
                    i += 1;
                }
            }
        }
        u.tokens = masked;
    }
    out
}
