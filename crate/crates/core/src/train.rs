//! Supervised training with dev-F1 checkpoint selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{LrSchedule, RunConfig};
use crate::densenet::{stack_spectrograms, DenseNet, ModelWeights};
use crate::error::{Error, Result};
use crate::features::Spectrogram;
use crate::labels::WeakLabelSet;
use crate::pipeline::{infer_probs, tagging_f1, targets_tensor, Clip};
use crate::rng::{rng_for, STREAM_SHUFFLE};
use crate::tensor::AdamState;

/// Borrowed view of a labelled clip for training or monitoring.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub spec: &'a Spectrogram,
    pub labels: &'a WeakLabelSet,
}

pub fn examples(clips: &[Clip]) -> Vec<Example<'_>> {
    clips
        .iter()
        .map(|c| Example {
            spec: &c.spec,
            labels: &c.record.weak,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: String,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: DenseNet,
    pub epochs_run: usize,
    /// Zero-based epoch whose weights were kept, when a dev set was given.
    pub best_epoch: Option<usize>,
    pub best_dev_f1: Option<f64>,
    pub history: Vec<EpochLog>,
}

struct Best {
    f1: f64,
    epoch: usize,
    weights: ModelWeights,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    train: &'a [Example<'a>],
    dev: Option<&'a [Example<'a>]>,
    shuffle_seed: u64,
    model: DenseNet,
    epoch: usize,
    best: Option<Best>,
    history: Vec<EpochLog>,
}

impl Run<'_> {
    fn epoch(&mut self, adam: &mut AdamState, lr: f64, phase: &str) -> Result<Option<f64>> {
        adam.set_lr(lr as f32);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng_for(
            self.shuffle_seed,
            STREAM_SHUFFLE,
            self.epoch as u64,
        ));
        let n_classes = self.model.spec.n_classes;
        let mut loss_sum = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let specs: Vec<&Spectrogram> = batch.iter().map(|&i| self.train[i].spec).collect();
            let labels: Vec<&WeakLabelSet> = batch.iter().map(|&i| self.train[i].labels).collect();
            let input = stack_spectrograms(&specs)?;
            let targets = targets_tensor(&labels, n_classes);
            let loss = self.model.train_step(&input, &targets, adam)?;
            if !loss.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite loss at epoch {}",
                    self.epoch
                )));
            }
            loss_sum += loss as f64 * batch.len() as f64;
        }
        let dev_f1 = match self.dev {
            Some(dev) => {
                let specs: Vec<&Spectrogram> = dev.iter().map(|e| e.spec).collect();
                let labels: Vec<&WeakLabelSet> = dev.iter().map(|e| e.labels).collect();
                let probs = infer_probs(&self.model, &specs, self.cfg.batch_size)?;
                Some(tagging_f1(&probs, &labels, self.cfg.monitor_threshold))
            }
            None => None,
        };
        let log = EpochLog {
            epoch: self.epoch,
            phase: phase.to_string(),
            lr,
            train_loss: loss_sum / self.train.len() as f64,
            dev_f1,
        };
        log::info!(
            "epoch {} [{}] lr={} loss={:.5} dev_f1={}",
            log.epoch,
            phase,
            lr,
            log.train_loss,
            dev_f1.map_or("-".into(), |f| format!("{f:.4}"))
        );
        self.history.push(log);
        if let Some(f1) = dev_f1 {
            if self.best.as_ref().is_none_or(|b| f1 > b.f1) {
                self.best = Some(Best {
                    f1,
                    epoch: self.epoch,
                    weights: self.model.weights.clone(),
                });
            }
        }
        self.epoch += 1;
        Ok(dev_f1)
    }

    fn restore_best(&mut self) {
        if let Some(b) = &self.best {
            self.model.weights = b.weights.clone();
        }
    }
}

/// Trains `model` under `cfg`. Batches are reshuffled every epoch from
/// `(shuffle_seed, epoch)`.
///
/// With a dev set, the weights with the best dev tagging F1 are returned.
/// The finetune schedule stops the main phase after `patience` epochs
/// without improvement, restores the best weights, and continues for
/// `finetune_epochs` at the lower rate with fresh optimizer moments.
pub fn train_model(
    model: DenseNet,
    cfg: &RunConfig,
    shuffle_seed: u64,
    train: &[Example<'_>],
    dev: Option<&[Example<'_>]>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if dev.is_some_and(|d| d.is_empty()) {
        return Err(Error::Invalid("dev set is empty".into()));
    }
    let mut adam = AdamState::new(&model.weights.params, cfg.adam());
    let mut run = Run {
        cfg,
        train,
        dev,
        shuffle_seed,
        model,
        epoch: 0,
        best: None,
        history: Vec::new(),
    };
    for e in 0..cfg.max_epochs {
        run.epoch(&mut adam, cfg.lr_at(e), "main")?;
        if let (Some(p), Some(b)) = (cfg.patience, &run.best) {
            if run.epoch - 1 - b.epoch >= p {
                log::info!("no dev improvement for {p} epochs; stopping main phase");
                break;
            }
        }
    }
    if let LrSchedule::Finetune {
        finetune_epochs,
        finetune_lr,
    } = cfg.schedule
    {
        if finetune_epochs > 0 {
            run.restore_best();
            adam = AdamState::new(&run.model.weights.params, cfg.adam());
            for _ in 0..finetune_epochs {
                run.epoch(&mut adam, finetune_lr, "finetune")?;
            }
        }
    }
    run.restore_best();
    Ok(TrainOutcome {
        epochs_run: run.epoch,
        best_epoch: run.best.as_ref().map(|b| b.epoch),
        best_dev_f1: run.best.as_ref().map(|b| b.f1),
        model: run.model,
        history: run.history,
    })
}
