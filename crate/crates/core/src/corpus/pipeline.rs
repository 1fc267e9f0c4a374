//! End-to-end preprocessing: ingest, mask, split, tag, derive samples,
//! build the vocabulary and write everything with a manifest.

use std::path::{Path, PathBuf};

use log::info;
use sha2::{Digest, Sha256};

use super::{
    build_vocabulary, compute_stats, derive_arbitrator_samples, derive_imaginator_samples,
    ingest_source, mask_slots, split_utterances, write_arbitrator_samples,
    write_imaginator_samples, write_processed, ArbitratorSample, CorpusHeader, CorpusStats,
    Dialogue, ImaginatorSample, Role, SlotValues, SourceFormat, Vocabulary,
};
use crate::error::{Error, Result};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const ARBITRATOR_FILE: &str = "arbitrator.jsonl";
pub const AGENT_FILE: &str = "imaginator_agent.jsonl";
pub const USER_FILE: &str = "imaginator_user.jsonl";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const STATS_FILE: &str = "stats.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub input: PathBuf,
    pub format: SourceFormat,
    pub p_split: f64,
    pub seed: u64,
    pub min_freq: u64,
    pub out_dir: PathBuf,
    /// Extra slot values applied to every dialogue.
    pub slot_values: Option<PathBuf>,
    /// Reuse this vocabulary instead of building one.
    pub vocab: Option<PathBuf>,
}

/// Modified corpus and everything derived from it, in memory.
#[derive(Clone, Debug)]
pub struct Processed {
    pub dialogues: Vec<Dialogue>,
    pub arbitrator: Vec<ArbitratorSample>,
    pub agent: Vec<ImaginatorSample>,
    pub user: Vec<ImaginatorSample>,
    pub vocab: Vocabulary,
    pub stats: CorpusStats,
}

#[derive(Clone, Debug)]
pub struct PreprocessSummary {
    pub records: usize,
    pub rejected: usize,
    pub skipped_empty: usize,
    pub stats: CorpusStats,
    pub files: Vec<(String, u64, String)>,
}

/// Masks and splits dialogues; `slots[i]` pairs with `dialogues[i]`.
pub fn modify(
    dialogues: &[Dialogue],
    slots: &[SlotValues],
    global: &SlotValues,
    p_split: f64,
    seed: u64,
) -> Vec<Dialogue> {
    dialogues
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut values = global.clone();
            if let Some(own) = slots.get(i) {
                for (k, v) in own {
                    values
                        .entry(k.clone())
                        .or_default()
                        .extend(v.iter().cloned());
                }
            }
            split_utterances(&mask_slots(d, &values), p_split, seed)
        })
        .collect()
}

/// Derives samples, vocabulary and statistics for an already modified corpus.
pub fn derive(dialogues: Vec<Dialogue>, min_freq: u64, vocab: Option<Vocabulary>) -> Processed {
    let arbitrator = dialogues
        .iter()
        .flat_map(derive_arbitrator_samples)
        .collect();
    let agent = dialogues
        .iter()
        .flat_map(|d| derive_imaginator_samples(d, Role::Agent))
        .collect();
    let user = dialogues
        .iter()
        .flat_map(|d| derive_imaginator_samples(d, Role::User))
        .collect();
    let vocab = vocab.unwrap_or_else(|| build_vocabulary(&dialogues, min_freq));
    let mut stats = compute_stats(&dialogues);
    stats.vocabulary_size = Some(vocab.len());
    Processed {
        dialogues,
        arbitrator,
        agent,
        user,
        vocab,
        stats,
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a processed corpus directory. Identical inputs give
/// byte-identical files.
pub fn write_processed_dir(
    dir: &Path,
    p: &Processed,
    seed: u64,
    p_split: f64,
    min_freq: u64,
) -> Result<Vec<(String, u64, String)>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = |kind: &str, n: usize| CorpusHeader::new(kind, seed, p_split, n);
    write_processed(
        &dir.join(CORPUS_FILE),
        &header("dialogues", p.dialogues.len()),
        &p.dialogues,
    )?;
    write_arbitrator_samples(
        &dir.join(ARBITRATOR_FILE),
        &header("arbitrator-samples", p.arbitrator.len()),
        &p.arbitrator,
    )?;
    write_imaginator_samples(
        &dir.join(AGENT_FILE),
        &header("imaginator-samples", p.agent.len()),
        &p.agent,
    )?;
    write_imaginator_samples(
        &dir.join(USER_FILE),
        &header("imaginator-samples", p.user.len()),
        &p.user,
    )?;
    write_text(
        &dir.join(VOCAB_FILE),
        &format!(
            "# ita-vocabulary seed={seed} p_split={p_split} min_freq={min_freq} hash={}\n{}",
            p.vocab.hash(),
            p.vocab.to_text()
        ),
    )?;
    write_text(
        &dir.join(STATS_FILE),
        &format!("# seed={seed} p_split={p_split}\n{}", p.stats.to_report()),
    )?;

    let mut files = Vec::new();
    let mut manifest = format!("# seed={seed}\n");
    for name in [
        CORPUS_FILE,
        ARBITRATOR_FILE,
        AGENT_FILE,
        USER_FILE,
        VOCAB_FILE,
        STATS_FILE,
    ] {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let d = digest(&bytes);
        manifest.push_str(&format!("{name}\t{}\t{d}\n", bytes.len()));
        files.push((name.to_string(), bytes.len() as u64, d));
    }
    write_text(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(files)
}

pub fn load_vocab_file(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::from_text(&text)
}

fn load_slot_values(path: &Path) -> Result<SlotValues> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn run_preprocess(opts: &PreprocessOptions) -> Result<PreprocessSummary> {
    if !(0.0..=1.0).contains(&opts.p_split) {
        return Err(Error::Config(format!(
            "p_split {} outside [0, 1]",
            opts.p_split
        )));
    }
    let report = ingest_source(&opts.input, &opts.format)?;
    let global = match &opts.slot_values {
        Some(p) => load_slot_values(p)?,
        None => SlotValues::new(),
    };
    let vocab = opts.vocab.as_deref().map(load_vocab_file).transpose()?;
    let modified = modify(
        &report.dialogues,
        &report.slot_values,
        &global,
        opts.p_split,
        opts.seed,
    );
    let processed = derive(modified, opts.min_freq, vocab);
    let files = write_processed_dir(
        &opts.out_dir,
        &processed,
        opts.seed,
        opts.p_split,
        opts.min_freq,
    )?;
    info!(
        "preprocessed {} dialogues into {}",
        processed.dialogues.len(),
        opts.out_dir.display()
    );
    Ok(PreprocessSummary {
        records: report.records,
        rejected: report.rejected.len(),
        skipped_empty: report.skipped_empty,
        stats: processed.stats,
        files,
    })
}

/// Everything `run_preprocess` wrote, read back.
#[derive(Clone, Debug)]
pub struct ProcessedDir {
    pub dialogues: Vec<Dialogue>,
    pub arbitrator: Vec<ArbitratorSample>,
    pub agent: Vec<ImaginatorSample>,
    pub user: Vec<ImaginatorSample>,
    pub vocab: Vocabulary,
    pub seed: u64,
}

pub fn read_processed_dir(dir: &Path) -> Result<ProcessedDir> {
    let (h, dialogues) = super::read_processed(&dir.join(CORPUS_FILE))?;
    let (_, arbitrator) = super::read_arbitrator_samples(&dir.join(ARBITRATOR_FILE))?;
    let (_, agent) = super::read_imaginator_samples(&dir.join(AGENT_FILE))?;
    let (_, user) = super::read_imaginator_samples(&dir.join(USER_FILE))?;
    let vocab = load_vocab_file(&dir.join(VOCAB_FILE))?;
    Ok(ProcessedDir {
        dialogues,
        arbitrator,
        agent,
        user,
        vocab,
        seed: h.seed,
    })
}

impl ProcessedDir {
    /// The in-memory equivalent of writing `p` and reading it back.
    pub fn from_processed(p: Processed, seed: u64) -> Self {
        Self {
            dialogues: p.dialogues,
            arbitrator: p.arbitrator,
            agent: p.agent,
            user: p.user,
            vocab: p.vocab,
            seed,
        }
    }
}
