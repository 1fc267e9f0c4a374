//! Training loop, data splits, checkpoints and metrics logs.

mod checkpoint;
mod config;
mod metrics;
mod tasks;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, ParamStore};
use crate::error::{Error, Result};

pub use checkpoint::{sidecar_path, Checkpoint, CheckpointMeta, ModelSpec, MAGIC, VERSION};
pub use config::TrainConfig;
pub use metrics::{read_metrics, MetricsLog, MetricsRecord};
pub use tasks::{
    dialogue_of, evaluate_arbitrator, imagine_all, partition_dialogues, prepare_inputs,
    split_by_dialogue, train_arbitrator, train_imaginator, ArbitratorRun, ArbitratorTask,
    ImaginatorRun, ImaginatorTask, Split, SplitData,
};

/// A model with a training step and a validation score (higher is better).
pub trait Trainable {
    type Train;
    type Valid;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn train_batch(&mut self, batch: &[&Self::Train], opt: &mut Adam) -> Result<f64>;
    fn validate(&self, samples: &[Self::Valid]) -> Result<f64>;
    fn metric(&self) -> &'static str;
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Mean per-batch loss of each epoch.
    pub train_losses: Vec<f64>,
    pub valid_metrics: Vec<f64>,
    pub optimizer: Adam,
}

/// Mini-batch training with a fresh shuffle per epoch (seeded by
/// `seed ^ epoch`), validation after every epoch, and early stopping once
/// `patience` epochs pass without improvement (`patience = 0` stops after
/// the first). The best epoch's parameters are restored at the end.
pub fn run_training<T: Trainable>(
    task: &mut T,
    cfg: &TrainConfig,
    train: &[T::Train],
    valid: &[T::Valid],
    log: &mut MetricsLog,
    name: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training(format!("{name}: empty training split")));
    }
    if valid.is_empty() {
        return Err(Error::Training(format!("{name}: empty validation split")));
    }
    let start = Instant::now();
    let mut opt = Adam::new(cfg.adam(), task.params());
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stale = 0;
    let mut train_losses = Vec::new();
    let mut valid_metrics = Vec::new();
    let record = |log: &mut MetricsLog, epoch, split: &str, metric: &str, value| {
        log.push(MetricsRecord {
            model: name.to_string(),
            epoch,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
            seconds: start.elapsed().as_secs_f64(),
        })
    };
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch as u64));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&T::Train> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = task.train_batch(&batch, &mut opt).map_err(|e| {
                Error::Training(format!("{name} epoch {epoch} batch {batches}: {e}"))
            })?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "{name} epoch {epoch} batch {batches}: loss is {loss}"
                )));
            }
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        train_losses.push(mean);
        record(log, epoch, "train", "loss", mean)?;
        let score = task.validate(valid)?;
        if !score.is_finite() {
            return Err(Error::Training(format!(
                "{name} epoch {epoch}: validation {} is {score}",
                task.metric()
            )));
        }
        valid_metrics.push(score);
        record(log, epoch, "valid", task.metric(), score)?;
        if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
            best = Some((epoch, score, task.params().clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_metric, params) = best.expect("at least one epoch ran");
    task.params_mut().copy_values_from(&params)?;
    Ok(TrainOutcome {
        epochs_run: train_losses.len(),
        best_epoch,
        best_metric,
        train_losses,
        valid_metrics,
        optimizer: opt,
    })
}
