//! Training loop: shuffled batches, cross-entropy, Adam, per-epoch
//! validation and early stopping.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{make_batches, SequenceDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{hr_at_k, rank_targets};
use crate::model::{cross_entropy, EchoMambaModel, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{apply_grads, ParamStore, Session};
use crate::rng::{stream, Rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Train on every prefix of each sequence instead of one row per user.
    pub all_prefixes: bool,
    /// Drop items already in the input window when ranking.
    pub mask_seen: bool,
    /// Record elapsed seconds in each log line.
    pub log_wall_time: bool,
    /// Error out on the first non-finite value any op produces.
    pub finite_checks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 2048,
            eval_batch_size: 4096,
            epochs: 300,
            patience: 10,
            seed: 42,
            all_prefixes: false,
            mask_seen: false,
            log_wall_time: true,
            finite_checks: false,
        }
    }
}

/// One JSON line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_hr10: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestState<F> {
    pub epoch: usize,
    pub val_hr10: f64,
    pub params: Vec<Vec<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_hr10: f64,
    pub stopped_early: bool,
}

pub struct Trainer<F: Scalar> {
    pub model: EchoMambaModel,
    pub store: ParamStore<F>,
    pub adam: AdamState<F>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub dropout_rng: Rng,
    pub shuffle_rng: Rng,
    pub best: Option<BestState<F>>,
    pub stale_epochs: usize,
    pub history: Vec<EpochLog>,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = EchoMambaModel::new(&mut store, model_config, &mut stream(config.seed, Stream::Init))?;
        let adam = AdamState::new(
            &store,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            model,
            store,
            adam,
            dropout_rng: stream(config.seed, Stream::Dropout),
            shuffle_rng: stream(config.seed, Stream::Shuffle),
            config,
            epoch: 0,
            best: None,
            stale_epochs: 0,
            history: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    /// One optimizer step on a batch; returns its loss.
    pub fn step(&mut self, batch: &crate::data::Batch, batch_index: usize) -> Result<f64> {
        let grads = {
            let mut s = Session::train(&self.store, &mut self.dropout_rng).with_finite_checks(self.config.finite_checks);
            let logits = self.model.logits(&mut s, batch)?;
            let loss = cross_entropy(&mut s.tape, logits, &batch.targets)?;
            let value = s.tape.value(loss)[0].f64();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch + 1,
                    batch: batch_index,
                });
            }
            (s.backward(loss)?, value)
        };
        apply_grads(&mut self.store, grads.0)?;
        self.adam.step(&mut self.store)?;
        Ok(grads.1)
    }

    /// Mean training loss of one pass over the shuffled training rows.
    pub fn train_epoch(&mut self, ds: &SequenceDataset) -> Result<f64> {
        let examples = ds.examples(Split::Train, self.config.all_prefixes);
        if examples.is_empty() {
            return Err(Error::contract("no training rows"));
        }
        let batches = make_batches(
            ds,
            &examples,
            self.config.batch_size,
            self.model.config.max_len,
            Some(&mut self.shuffle_rng),
        )?;
        let mut total = 0.0;
        for (i, batch) in batches.iter().enumerate() {
            total += self.step(batch, i)? * batch.size() as f64;
        }
        Ok(total / examples.len() as f64)
    }

    pub fn validate(&self, ds: &SequenceDataset) -> Result<f64> {
        let ranks = rank_targets(
            &self.model,
            &self.store,
            ds,
            Split::Validation,
            self.config.eval_batch_size,
            self.config.mask_seen,
        )?;
        hr_at_k(&ranks, 10)
    }

    /// Trains until the epoch budget or patience runs out. Writes one JSON
    /// line per epoch to `log` and, when given, a checkpoint after each.
    pub fn fit(&mut self, ds: &SequenceDataset, log: &mut dyn Write, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
        let start = Instant::now();
        let mut stopped_early = false;
        while self.epoch < self.config.epochs {
            if self.stale_epochs >= self.config.patience {
                stopped_early = true;
                break;
            }
            let train_loss = self.train_epoch(ds)?;
            let val_hr10 = self.validate(ds)?;
            self.epoch += 1;
            if self.best.as_ref().is_none_or(|b| val_hr10 > b.val_hr10) {
                self.best = Some(BestState {
                    epoch: self.epoch,
                    val_hr10,
                    params: self.store.iter().map(|p| p.tensor.data().to_vec()).collect(),
                });
                self.stale_epochs = 0;
            } else {
                self.stale_epochs += 1;
            }
            let entry = EpochLog {
                epoch: self.epoch,
                train_loss,
                val_hr10,
                wall_seconds: self.config.log_wall_time.then(|| start.elapsed().as_secs_f64()),
            };
            let line = serde_json::to_string(&entry).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(log, "{line}").map_err(|e| Error::io("training log", e))?;
            self.history.push(entry);
            if let Some(path) = checkpoint {
                self.save(path)?;
            }
        }
        let best = self.best.as_ref();
        Ok(TrainOutcome {
            epochs_run: self.epoch,
            best_epoch: best.map_or(0, |b| b.epoch),
            best_val_hr10: best.map_or(0.0, |b| b.val_hr10),
            stopped_early,
        })
    }

    /// Copies the best-validation parameters back into the store.
    pub fn restore_best(&mut self) {
        if let Some(best) = &self.best {
            for (p, v) in self.store.iter_mut().zip(&best.params) {
                p.tensor.data_mut().copy_from_slice(v);
            }
        }
    }
}
