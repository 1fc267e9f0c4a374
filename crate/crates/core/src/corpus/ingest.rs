use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::Deserialize;

use super::mask::SlotValues;
use super::{Dialogue, Role};
use crate::error::{Error, Result};

/// Supported raw corpus layouts.
///
/// * `MultiwozLike`: JSON lines `{"id", "turns": [{"speaker", "text"}], "slot_values"?: {slot: [value]}}`
/// * `DailyDialogueLike`: one dialogue per line, utterances separated by a
///   delimiter token (`__eou__` by default); speakers alternate starting with the user
/// * `GenericJsonl`: JSON lines `{"id", "utterances": [{"role", "text"}]}`
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SourceFormat {
    MultiwozLike,
    DailyDialogueLike { delimiter: String },
    GenericJsonl,
}

impl SourceFormat {
    pub fn daily_dialogue() -> Self {
        SourceFormat::DailyDialogueLike {
            delimiter: "__eou__".into(),
        }
    }
}

impl FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiwoz-like" | "multiwoz" => Ok(SourceFormat::MultiwozLike),
            "dailydialogue-like" | "dailydialogue" => Ok(SourceFormat::daily_dialogue()),
            "generic-jsonl" | "jsonl" => Ok(SourceFormat::GenericJsonl),
            other => Err(Error::Config(format!("unknown input format {other}"))),
        }
    }
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub dialogues: Vec<Dialogue>,
    /// Per-dialogue slot annotations, parallel to `dialogues`.
    pub slot_values: Vec<SlotValues>,
    /// Non-blank source records seen.
    pub records: usize,
    /// `(locator, reason)` for each rejected record.
    pub rejected: Vec<(String, String)>,
    pub skipped_empty: usize,
}

#[derive(Deserialize)]
struct MultiwozRecord {
    id: String,
    turns: Vec<SpeakerText>,
    #[serde(default)]
    slot_values: SlotValues,
}

#[derive(Deserialize)]
struct SpeakerText {
    speaker: String,
    text: String,
}

#[derive(Deserialize)]
struct GenericRecord {
    id: String,
    utterances: Vec<RoleText>,
}

#[derive(Deserialize)]
struct RoleText {
    role: String,
    text: String,
}

pub fn ingest_source(path: &Path, format: &SourceFormat) -> Result<IngestReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text, format, &path.display().to_string())
}

/// Parses a whole source text. `origin` prefixes record locators.
pub fn ingest_str(text: &str, format: &SourceFormat, origin: &str) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let locator = format!("{origin}:{}", lineno + 1);
        let parse_err = |e: serde_json::Error| Error::Ingestion {
            locator: locator.clone(),
            reason: e.to_string(),
        };
        let (id, messages, slots): (String, Vec<(String, String)>, SlotValues) = match format {
            SourceFormat::MultiwozLike => {
                let r: MultiwozRecord = serde_json::from_str(line).map_err(parse_err)?;
                let msgs = r.turns.into_iter().map(|t| (t.speaker, t.text)).collect();
                (r.id, msgs, r.slot_values)
            }
            SourceFormat::GenericJsonl => {
                let r: GenericRecord = serde_json::from_str(line).map_err(parse_err)?;
                let msgs = r.utterances.into_iter().map(|u| (u.role, u.text)).collect();
                (r.id, msgs, SlotValues::new())
            }
            SourceFormat::DailyDialogueLike { delimiter } => {
                let mut parts: Vec<&str> = line.split(delimiter.as_str()).collect();
                // a trailing delimiter leaves one blank tail
                if parts.len() > 1 && parts.last().is_some_and(|p| p.trim().is_empty()) {
                    parts.pop();
                }
                let msgs = parts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let role = if i % 2 == 0 { "user" } else { "agent" };
                        (role.to_string(), p.trim().to_string())
                    })
                    .collect();
                (format!("dd-{:06}", lineno + 1), msgs, SlotValues::new())
            }
        };

        if messages.is_empty() {
            report.skipped_empty += 1;
            continue;
        }
        let mut roles = Vec::with_capacity(messages.len());
        for (speaker, _) in &messages {
            let role = Role::parse(speaker).ok_or_else(|| Error::Ingestion {
                locator: locator.clone(),
                reason: format!("unknown speaker {speaker:?}"),
            })?;
            roles.push(role);
        }
        if let Some(i) = messages.iter().position(|(_, t)| t.trim().is_empty()) {
            report
                .rejected
                .push((locator, format!("empty utterance at position {i}")));
            continue;
        }
        let dialogue = Dialogue::from_messages(
            id,
            roles
                .into_iter()
                .zip(messages.iter().map(|(_, t)| t.as_str())),
        );
        match dialogue {
            Ok(d) => {
                report.dialogues.push(d);
                report.slot_values.push(slots);
            }
            // text made only of characters the tokenizer drops
            Err(e) => report.rejected.push((locator, e.to_string())),
        }
    }
    if report.skipped_empty > 0 || !report.rejected.is_empty() {
        warn!(
            "{origin}: skipped {} empty dialogues, rejected {} records",
            report.skipped_empty,
            report.rejected.len()
        );
    }
    Ok(report)
}
