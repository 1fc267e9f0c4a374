use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bleu, BleuStats, ImaginatorModel};
use crate::corpus::{ImaginatorSample, Role, Utterance, Vocabulary};
use crate::error::{Error, Result};

/// A generated response in surface tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Imagined {
    pub tokens: Vec<String>,
    pub score: f64,
}

/// Something that can imagine the next utterance of one role.
pub trait Imagine {
    fn role(&self) -> Role;
    fn imagine(&self, history: &[Utterance]) -> Result<Imagined>;
}

/// A trained model with the vocabulary and beam width used for decoding.
pub struct BeamImaginator<'a> {
    pub model: &'a ImaginatorModel,
    pub vocab: &'a Vocabulary,
    pub beam_width: usize,
}

impl<'a> BeamImaginator<'a> {
    pub fn new(model: &'a ImaginatorModel, vocab: &'a Vocabulary) -> Self {
        Self {
            model,
            vocab,
            beam_width: model.config.beam_width,
        }
    }
}

impl Imagine for BeamImaginator<'_> {
    fn role(&self) -> Role {
        self.model.role()
    }

    fn imagine(&self, history: &[Utterance]) -> Result<Imagined> {
        let d = self.model.generate(history, self.vocab, self.beam_width)?;
        Ok(Imagined {
            tokens: d
                .tokens
                .iter()
                .filter(|&&t| t != Vocabulary::PAD && t != Vocabulary::BOS)
                .map(|&t| self.vocab.token(t).to_string())
                .collect(),
            score: d.score,
        })
    }
}

/// Key identifying a history by its full tagged content.
pub fn history_key(history: &[Utterance]) -> String {
    history
        .iter()
        .map(|u| format!("{}:{}:{}:{}", u.role, u.turn, u.subturn, u.tokens.join(" ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Replays previously decoded outputs.
#[derive(Clone, Debug, Default)]
pub struct LookupImaginator {
    pub role: Option<Role>,
    pub table: HashMap<String, Imagined>,
}

impl LookupImaginator {
    pub fn record<'h>(
        source: &dyn Imagine,
        histories: impl IntoIterator<Item = &'h [Utterance]>,
    ) -> Result<Self> {
        let mut table = HashMap::new();
        for h in histories {
            let key = history_key(h);
            if let std::collections::hash_map::Entry::Vacant(e) = table.entry(key) {
                e.insert(source.imagine(h)?);
            }
        }
        Ok(Self {
            role: Some(source.role()),
            table,
        })
    }
}

impl Imagine for LookupImaginator {
    fn role(&self) -> Role {
        self.role.unwrap_or(Role::Agent)
    }

    fn imagine(&self, history: &[Utterance]) -> Result<Imagined> {
        self.table
            .get(&history_key(history))
            .cloned()
            .ok_or_else(|| Error::Contract("history not in lookup table".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub history_id: String,
    pub role: Role,
    pub generated_tokens: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct ImaginatorScores {
    pub bleu_on_agent_targets: f64,
    pub bleu_on_user_targets: f64,
    pub agent: BleuStats,
    pub user: BleuStats,
    pub transcripts: Vec<TranscriptRecord>,
}

/// Generates a response for every sample and scores each target-role
/// partition with corpus BLEU-4.
pub fn evaluate_imaginator(
    generator: &dyn Imagine,
    agent_targets: &[ImaginatorSample],
    user_targets: &[ImaginatorSample],
) -> Result<ImaginatorScores> {
    let mut transcripts = Vec::new();
    let mut run = |samples: &[ImaginatorSample]| -> Result<BleuStats> {
        let mut cands = Vec::with_capacity(samples.len());
        let mut refs = Vec::with_capacity(samples.len());
        for s in samples {
            let out = generator.imagine(&s.history)?;
            transcripts.push(TranscriptRecord {
                history_id: s.id.clone(),
                role: generator.role(),
                generated_tokens: out.tokens.clone(),
                score: out.score,
            });
            cands.push(out.tokens);
            refs.push(s.target.tokens.clone());
        }
        bleu(&cands, &refs, 4)
    };
    let agent = run(agent_targets)?;
    let user = run(user_targets)?;
    Ok(ImaginatorScores {
        bleu_on_agent_targets: agent.score,
        bleu_on_user_targets: user.score,
        agent,
        user,
        transcripts,
    })
}

pub fn write_transcripts(path: &Path, records: &[TranscriptRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
