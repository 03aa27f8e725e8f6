use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use stemkit_neural::checkpoint::Checkpoint;
use stemkit_neural::{Adam, ForwardCtx, PlateauSchedule, Tape};

use crate::error::{ModelError, Result};
use crate::model::MrxModel;

/// One training chunk: the mixture and its source stems.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub mixture: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
}

/// Splits full-length tracks into consecutive non-overlapping chunks of
/// `chunk` samples; a trailing partial chunk is dropped.
pub fn chunk_examples(mixture: &[f64], sources: &[Vec<f64>], chunk: usize) -> Vec<Example> {
    (0..mixture.len() / chunk.max(1))
        .map(|k| {
            let r = k * chunk..(k + 1) * chunk;
            Example {
                mixture: mixture[r.clone()].to_vec(),
                sources: sources.iter().map(|s| s[r.clone()].to_vec()).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds initialization and the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 300,
            batch_size: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation set is given; the schedule then follows the
    /// training loss.
    pub val_loss: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainerState {
    config: TrainConfig,
    epoch: usize,
    adam_step: u64,
    schedule: PlateauSchedule,
    history: History,
}

/// Owns the model and optimizer state across epochs.
pub struct Trainer {
    pub model: MrxModel,
    pub config: TrainConfig,
    adam: Adam,
    schedule: PlateauSchedule,
    epoch: usize,
    history: History,
}

impl Trainer {
    pub fn new(model: MrxModel, config: TrainConfig) -> Self {
        Self {
            adam: Adam::new(config.lr),
            schedule: PlateauSchedule::new(config.lr),
            model,
            config,
            epoch: 0,
            history: History::default(),
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr
    }

    /// One optimizer step on a batch; returns the loss before the update.
    pub fn step(&mut self, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::train();
        let chunks: Vec<&[f64]> = batch.iter().map(|e| e.mixture.as_slice()).collect();
        let refs: Vec<&[Vec<f64>]> = batch.iter().map(|e| e.sources.as_slice()).collect();
        let loss = self.model.loss(&mut tape, &mut ctx, &chunks, &refs)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        drop(tape);
        let store = self.model.store_mut();
        ctx.commit(store)?;
        self.adam.lr = self.schedule.lr;
        self.adam.step(store, grads.param_grads())?;
        Ok(value)
    }

    /// Mean loss in evaluation mode (running statistics, no updates).
    pub fn evaluate(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut total = 0.0;
        for e in examples {
            let mut tape = Tape::inference();
            let loss = self
                .model
                .loss(&mut tape, &mut ForwardCtx::eval(), &[&e.mixture], &[&e.sources])?;
            total += tape.value(loss).item();
        }
        Ok(total / examples.len() as f64)
    }

    /// Shuffles `train` with a stream derived from the seed and epoch, runs
    /// one pass, then updates the learning-rate schedule.
    pub fn run_epoch(&mut self, train: &[Example], val: &[Example]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64 + 1);
        order.shuffle(&mut rng);
        let lr = self.schedule.lr;
        let mut total = 0.0;
        let mut steps = 0;
        for group in order.chunks(self.config.batch_size.max(1)) {
            let batch: Vec<&Example> = group.iter().map(|&i| &train[i]).collect();
            total += self.step(&batch)?;
            steps += 1;
        }
        let train_loss = total / steps as f64;
        let val_loss = if val.is_empty() { None } else { Some(self.evaluate(val)?) };
        self.schedule.step(val_loss.unwrap_or(train_loss));
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss,
            val_loss,
            lr,
        };
        self.history.epochs.push(record.clone());
        Ok(record)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let state = TrainerState {
            config: self.config.clone(),
            epoch: self.epoch,
            adam_step: self.adam.steps(),
            schedule: self.schedule.clone(),
            history: self.history.clone(),
        };
        let mut extra = serde_json::Map::new();
        extra.insert("trainer".into(), serde_json::to_value(state).expect("state serializes"));
        let mut ck = self.model.to_checkpoint(extra);
        for (name, t) in self.adam.state_tensors(self.model.store()) {
            ck.push(&name, t, false);
        }
        ck
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)?;
        Ok(())
    }

    /// Restores model, optimizer, schedule and history from a checkpoint
    /// written by [`Trainer::save`].
    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let model = MrxModel::from_checkpoint(&ck)?;
        let state: TrainerState = serde_json::from_value(ck.meta["trainer"].clone())
            .map_err(|e| ModelError::Checkpoint(format!("trainer state: {e}")))?;
        let mut adam = Adam::new(state.schedule.lr);
        adam.load_state(model.store(), state.adam_step, ck.named())?;
        Ok(Self {
            model,
            config: state.config,
            adam,
            schedule: state.schedule,
            epoch: state.epoch,
            history: state.history,
        })
    }
}
