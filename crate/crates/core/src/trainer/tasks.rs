use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    run_training, Checkpoint, CheckpointMeta, MetricsLog, ModelSpec, TrainConfig, TrainOutcome,
    Trainable,
};
use crate::arbitrator::{
    accuracy, evaluate_decisions, ArbitratorInput, ArbitratorMode, ArbitratorModel,
    ArbitratorReport, DecisionRecord, EncoderKind,
};
use crate::autodiff::{Adam, ParamStore};
use crate::corpus::pipeline::ProcessedDir;
use crate::corpus::{ArbitratorSample, ImaginatorSample, Role, Vocabulary};
use crate::error::{Error, Result};
use crate::imaginator::{bleu, BeamImaginator, EncodedSample, ImaginatorModel, Imagine};

const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Dialogue id of a sample id (`<dialogue>#<index>`).
pub fn dialogue_of(sample_id: &str) -> &str {
    sample_id.rsplit_once('#').map_or(sample_id, |(d, _)| d)
}

/// Assigns whole dialogues to splits: ids are sorted, shuffled with `seed`,
/// and the first `valid_fraction` go to validation, the next
/// `test_fraction` to test, the rest to training.
pub fn partition_dialogues<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    seed: u64,
    valid_fraction: f64,
    test_fraction: f64,
) -> BTreeMap<String, Split> {
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len() as f64;
    let n_valid = ((n * valid_fraction).round() as usize)
        .max(1)
        .min(ids.len());
    let n_test = ((n * test_fraction).round() as usize).min(ids.len() - n_valid);
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_valid {
                Split::Valid
            } else if i < n_valid + n_test {
                Split::Test
            } else {
                Split::Train
            };
            (id.to_string(), split)
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct SplitData<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

pub fn split_by_dialogue<T: Clone>(
    samples: &[T],
    id_of: impl Fn(&T) -> &str,
    partition: &BTreeMap<String, Split>,
) -> Result<SplitData<T>> {
    let mut out = SplitData {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for s in samples {
        let id = id_of(s);
        let dst = match partition.get(dialogue_of(id)) {
            Some(Split::Train) => &mut out.train,
            Some(Split::Valid) => &mut out.valid,
            Some(Split::Test) => &mut out.test,
            None => {
                return Err(Error::Contract(format!(
                    "sample {id} belongs to no known dialogue"
                )))
            }
        };
        dst.push(s.clone());
    }
    Ok(out)
}

fn corpus_partition(data: &ProcessedDir, cfg: &TrainConfig) -> BTreeMap<String, Split> {
    partition_dialogues(
        data.dialogues.iter().map(|d| d.id.as_str()),
        cfg.seed,
        cfg.valid_fraction,
        cfg.test_fraction,
    )
}

/// Imaginator training: teacher-forced loss, validated by greedy-decoding
/// BLEU-4 on at most `valid_limit` samples.
pub struct ImaginatorTask<'a> {
    pub model: ImaginatorModel,
    pub vocab: &'a Vocabulary,
    pub valid_limit: usize,
}

impl Trainable for ImaginatorTask<'_> {
    type Train = EncodedSample;
    type Valid = ImaginatorSample;

    fn params(&self) -> &ParamStore {
        &self.model.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn train_batch(&mut self, batch: &[&EncodedSample], opt: &mut Adam) -> Result<f64> {
        self.model.train_step(batch, opt)
    }

    fn validate(&self, samples: &[ImaginatorSample]) -> Result<f64> {
        let greedy = BeamImaginator {
            model: &self.model,
            vocab: self.vocab,
            beam_width: 1,
        };
        let mut cands = Vec::new();
        let mut refs = Vec::new();
        for s in samples.iter().take(self.valid_limit) {
            cands.push(greedy.imagine(&s.history)?.tokens);
            refs.push(s.target.tokens.clone());
        }
        Ok(bleu(&cands, &refs, 4)?.score)
    }

    fn metric(&self) -> &'static str {
        "bleu"
    }
}

pub struct ImaginatorRun {
    pub model: ImaginatorModel,
    pub outcome: TrainOutcome,
    pub split: SplitData<ImaginatorSample>,
}

impl ImaginatorRun {
    pub fn checkpoint(&self, cfg: &TrainConfig, vocab: &Vocabulary) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                model: ModelSpec::Imaginator(self.model.config.clone()),
                vocab_hash: vocab.hash(),
                epoch: self.outcome.best_epoch,
                metric: "bleu".into(),
                best_value: Some(self.outcome.best_metric),
            },
            train: cfg.clone(),
            vocab: vocab.clone(),
            params: self.model.store.clone(),
            optimizer: Some(self.outcome.optimizer.clone()),
        }
    }
}

/// Trains the `role` imaginator on the training dialogues of `data`.
pub fn train_imaginator(
    data: &ProcessedDir,
    role: Role,
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<ImaginatorRun> {
    cfg.validate()?;
    let samples = match role {
        Role::Agent => &data.agent,
        Role::User => &data.user,
    };
    let split = split_by_dialogue(samples, |s| &s.id, &corpus_partition(data, cfg))?;
    let model = ImaginatorModel::new(cfg.imaginator(role, data.vocab.len()), cfg.seed)?;
    let encoded: Vec<EncodedSample> = split
        .train
        .iter()
        .map(|s| model.encode_sample(s, &data.vocab))
        .collect();
    let mut task = ImaginatorTask {
        model,
        vocab: &data.vocab,
        valid_limit: cfg.valid_limit,
    };
    let name = format!("imaginator-{role}");
    let outcome = run_training(&mut task, cfg, &encoded, &split.valid, log, &name)?;
    Ok(ImaginatorRun {
        model: task.model,
        outcome,
        split,
    })
}

/// Arbitrator training: cross-entropy on prepared inputs, validated by
/// accuracy.
pub struct ArbitratorTask {
    pub model: ArbitratorModel,
}

impl Trainable for ArbitratorTask {
    type Train = ArbitratorInput;
    type Valid = ArbitratorInput;

    fn params(&self) -> &ParamStore {
        &self.model.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn train_batch(&mut self, batch: &[&ArbitratorInput], opt: &mut Adam) -> Result<f64> {
        self.model.train_step(batch, opt)
    }

    fn validate(&self, samples: &[ArbitratorInput]) -> Result<f64> {
        let mut predicted = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_BATCH) {
            let refs: Vec<&ArbitratorInput> = chunk.iter().collect();
            predicted.extend(self.model.decide_batch(&refs)?.into_iter().map(|d| d.label));
        }
        let gold: Vec<u8> = samples.iter().map(|s| s.label).collect();
        accuracy(&predicted, &gold)
    }

    fn metric(&self) -> &'static str {
        "accuracy"
    }
}

/// Model inputs for every sample; in ITA mode each history is imagined
/// once here, so later epochs reuse the responses.
pub fn prepare_inputs(
    model: &ArbitratorModel,
    vocab: &Vocabulary,
    samples: &[ArbitratorSample],
    imaginators: Option<(&dyn Imagine, &dyn Imagine)>,
) -> Result<Vec<ArbitratorInput>> {
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        out.push(model.prepare(&s.id, &s.history, s.label, vocab, imaginators)?);
        if imaginators.is_some() && (i + 1) % 1000 == 0 {
            log::info!(
                "imagined responses for {}/{} histories",
                i + 1,
                samples.len()
            );
        }
    }
    Ok(out)
}

/// Decodes every history with `imaginator`, in order.
pub fn imagine_all(
    imaginator: &dyn Imagine,
    samples: &[ArbitratorSample],
) -> Result<Vec<Vec<String>>> {
    samples
        .iter()
        .map(|s| Ok(imaginator.imagine(&s.history)?.tokens))
        .collect()
}

pub struct ArbitratorRun {
    pub model: ArbitratorModel,
    pub outcome: TrainOutcome,
    pub split: SplitData<ArbitratorSample>,
}

impl ArbitratorRun {
    pub fn checkpoint(&self, cfg: &TrainConfig, vocab: &Vocabulary) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                model: ModelSpec::Arbitrator(self.model.config.clone()),
                vocab_hash: vocab.hash(),
                epoch: self.outcome.best_epoch,
                metric: "accuracy".into(),
                best_value: Some(self.outcome.best_metric),
            },
            train: cfg.clone(),
            vocab: vocab.clone(),
            params: self.model.store.clone(),
            optimizer: Some(self.outcome.optimizer.clone()),
        }
    }
}

/// Trains an arbitrator on the training dialogues of `data`. ITA mode needs
/// the agent and user imaginators; their beam outputs (width
/// `cfg.beam_width`) are decoded once per sample and reused every epoch.
pub fn train_arbitrator(
    data: &ProcessedDir,
    encoder: EncoderKind,
    mode: ArbitratorMode,
    cfg: &TrainConfig,
    imaginators: Option<(&ImaginatorModel, &ImaginatorModel)>,
    log: &mut MetricsLog,
) -> Result<ArbitratorRun> {
    cfg.validate()?;
    let split = split_by_dialogue(&data.arbitrator, |s| &s.id, &corpus_partition(data, cfg))?;
    let model = ArbitratorModel::new(cfg.arbitrator(data.vocab.len(), encoder, mode), cfg.seed)?;
    let beams = imaginators.map(|(a, u)| {
        let g = |m| BeamImaginator {
            model: m,
            vocab: &data.vocab,
            beam_width: cfg.beam_width,
        };
        (g(a), g(u))
    });
    let dyn_pair = beams
        .as_ref()
        .map(|(a, u)| (a as &dyn Imagine, u as &dyn Imagine));
    if mode == ArbitratorMode::Ita && dyn_pair.is_none() {
        return Err(Error::Contract(
            "ITA mode needs agent and user imaginators".into(),
        ));
    }
    let train = prepare_inputs(&model, &data.vocab, &split.train, dyn_pair)?;
    let valid = prepare_inputs(&model, &data.vocab, &split.valid, dyn_pair)?;
    let mut task = ArbitratorTask { model };
    let name = format!("arbitrator-{}-{}", encoder.as_str(), mode.as_str());
    let outcome = run_training(&mut task, cfg, &train, &valid, log, &name)?;
    Ok(ArbitratorRun {
        model: task.model,
        outcome,
        split,
    })
}

/// Decides every sample and scores the decisions, alongside a seeded
/// uniform random policy.
pub fn evaluate_arbitrator(
    model: &ArbitratorModel,
    vocab: &Vocabulary,
    samples: &[ArbitratorSample],
    imaginators: Option<(&dyn Imagine, &dyn Imagine)>,
    seed: u64,
) -> Result<(ArbitratorReport, Vec<DecisionRecord>)> {
    let inputs = prepare_inputs(model, vocab, samples, imaginators)?;
    let mut decisions = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let refs: Vec<&ArbitratorInput> = chunk.iter().collect();
        decisions.extend(model.decide_batch(&refs)?);
    }
    let gold: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let report = evaluate_decisions(&decisions, &gold, seed)?;
    let records = samples
        .iter()
        .zip(&decisions)
        .map(|(s, d)| DecisionRecord::new(&s.id, d))
        .collect();
    Ok((report, records))
}
