use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::samples::{ArbitratorSample, ImaginatorSample};
use super::Dialogue;
use crate::error::{Error, Result};

/// First line of every processed JSON-lines file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub kind: String,
    pub seed: u64,
    pub p_split: f64,
    pub records: usize,
}

impl CorpusHeader {
    pub fn new(kind: &str, seed: u64, p_split: f64, records: usize) -> Self {
        Self {
            format: "ita-corpus/1".into(),
            kind: kind.into(),
            seed,
            p_split,
            records,
        }
    }
}

fn write_jsonl<T: Serialize>(path: &Path, header: &CorpusHeader, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut line = |v: String| writeln!(w, "{v}").map_err(|e| Error::io(path, e));
    line(serde_json::to_string(header)?)?;
    for item in items {
        line(serde_json::to_string(item)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<(CorpusHeader, Vec<T>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let locator = |n: usize| format!("{}:{}", path.display(), n + 1);
    let (n, first) = lines.next().ok_or_else(|| Error::Ingestion {
        locator: locator(0),
        reason: "missing header".into(),
    })?;
    let header: CorpusHeader = serde_json::from_str(first).map_err(|e| Error::Ingestion {
        locator: locator(n),
        reason: format!("bad header: {e}"),
    })?;
    if header.kind != kind {
        return Err(Error::Ingestion {
            locator: locator(n),
            reason: format!("expected {kind} records, found {}", header.kind),
        });
    }
    let items = lines
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Ingestion {
                locator: locator(n),
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<T>>>()?;
    Ok((header, items))
}

pub fn write_processed(path: &Path, header: &CorpusHeader, dialogues: &[Dialogue]) -> Result<()> {
    write_jsonl(path, header, dialogues)
}

pub fn read_processed(path: &Path) -> Result<(CorpusHeader, Vec<Dialogue>)> {
    let (h, ds): (CorpusHeader, Vec<Dialogue>) = read_jsonl(path, "dialogues")?;
    for d in &ds {
        d.validate()?;
    }
    Ok((h, ds))
}

pub fn write_arbitrator_samples(
    path: &Path,
    header: &CorpusHeader,
    samples: &[ArbitratorSample],
) -> Result<()> {
    write_jsonl(path, header, samples)
}

pub fn read_arbitrator_samples(path: &Path) -> Result<(CorpusHeader, Vec<ArbitratorSample>)> {
    read_jsonl(path, "arbitrator-samples")
}

pub fn write_imaginator_samples(
    path: &Path,
    header: &CorpusHeader,
    samples: &[ImaginatorSample],
) -> Result<()> {
    write_jsonl(path, header, samples)
}

pub fn read_imaginator_samples(path: &Path) -> Result<(CorpusHeader, Vec<ImaginatorSample>)> {
    read_jsonl(path, "imaginator-samples")
}
