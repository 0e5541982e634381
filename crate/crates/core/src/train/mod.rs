//! NAdam training with checkpointing, learning-rate reduction and early
//! stopping.

mod callbacks;
mod optim;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment_variant, finalize, Sample, VARIANTS};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossInputs, LossWeights};
use crate::model::Model;
use crate::tensor::{Tape, Tensor};

pub use callbacks::{CallbackConfig, CallbackState, Event};
pub use optim::{NAdam, NAdamConfig};

/// Indexed source of `([3, H, W] image, [1, H, W] mask)` training pairs.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<(Tensor, Tensor)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pairs already at network resolution.
#[derive(Clone, Debug, Default)]
pub struct TensorDataset {
    pub items: Vec<(Tensor, Tensor)>,
}

impl TensorDataset {
    pub fn new(items: Vec<(Tensor, Tensor)>) -> Self {
        Self { items }
    }
}

impl SampleSource for TensorDataset {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn get(&self, index: usize) -> Result<(Tensor, Tensor)> {
        self.items
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Data(format!("sample {index} out of range")))
    }
}

/// The 60 augmented variants of every sample, produced on demand and
/// resized to `size = (height, width)`. Index `i` is variant `i % 60` of
/// sample `i / 60`.
#[derive(Clone, Debug)]
pub struct AugmentedDataset {
    pub samples: Vec<Sample>,
    pub size: (u32, u32),
}

impl SampleSource for AugmentedDataset {
    fn len(&self) -> usize {
        self.samples.len() * VARIANTS
    }

    fn get(&self, index: usize) -> Result<(Tensor, Tensor)> {
        let s = self
            .samples
            .get(index / VARIANTS)
            .ok_or_else(|| Error::Data(format!("sample {index} out of range")))?;
        Ok(finalize(&augment_variant(s, index % VARIANTS)?, self.size))
    }
}

/// Unaugmented samples resized to `size = (height, width)`.
#[derive(Clone, Debug)]
pub struct ResizedDataset {
    pub samples: Vec<Sample>,
    pub size: (u32, u32),
}

impl SampleSource for ResizedDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn get(&self, index: usize) -> Result<(Tensor, Tensor)> {
        let s = self
            .samples
            .get(index)
            .ok_or_else(|| Error::Data(format!("sample {index} out of range")))?;
        Ok(finalize(s, self.size))
    }
}

/// Seeded shuffle into `(train, val)` with round(fraction · n) validation
/// items, at least one on each side.
pub fn split_train_val<T: Clone>(records: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let n = records.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 records to split, got {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split_train_val", "fraction must be in (0, 1)"));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| records[i].clone()).collect::<Vec<_>>()
    };
    Ok((pick(train_idx), pick(val_idx)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub loss: LossWeights,
    pub optimizer: NAdamConfig,
    pub callbacks: CallbackConfig,
    /// written whenever the validation loss improves
    pub checkpoint_path: Option<PathBuf>,
    /// reload the best weights into the model when training ends
    pub restore_best: bool,
    /// redraw the train/validation partition every epoch
    pub resample_val_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            val_fraction: 0.15,
            seed: 0,
            max_epochs: 1000,
            loss: LossWeights::default(),
            optimizer: NAdamConfig::default(),
            callbacks: CallbackConfig::default(),
            checkpoint_path: None,
            restore_best: true,
            resample_val_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("train", "batch_size must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("train", "val_fraction must be in (0, 1)"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::invalid("train", "learning rate must be positive"));
        }
        if !(self.callbacks.lr_factor > 0.0 && self.callbacks.lr_factor < 1.0) {
            return Err(Error::invalid("train", "lr_factor must be in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// rate used during this epoch
    pub lr: f64,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .rev()
            .find(|r| r.events.contains(&Event::Checkpoint))
    }

    pub fn stopped_early(&self) -> bool {
        self.epochs.iter().any(|r| r.events.contains(&Event::Stop))
    }

    /// Columns `epoch,train_loss,val_loss,lr,event`; several events on one
    /// epoch are joined with `;`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss", "lr", "event"])?;
        for r in &self.epochs {
            let events: Vec<String> = r.events.iter().map(Event::to_string).collect();
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.lr.to_string(),
                events.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn load_batch(source: &dyn SampleSource, indices: &[usize]) -> Result<(Tensor, Tensor)> {
    let pairs = indices
        .iter()
        .map(|&i| source.get(i))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<&Tensor> = pairs.iter().map(|p| &p.0).collect();
    let masks: Vec<&Tensor> = pairs.iter().map(|p| &p.1).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Mean combined loss over `indices` in inference mode, weighted by batch size.
pub fn evaluate_loss(
    model: &Model,
    source: &dyn SampleSource,
    indices: &[usize],
    batch_size: usize,
    weights: LossWeights,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = load_batch(source, chunk)?;
        let mut tape = Tape::new();
        let params = model.bind(&mut tape, false);
        let xv = tape.constant(x);
        let p = model.forward(&mut tape, &params, xv, false, 0)?;
        let loss = combined_loss(&mut tape, &LossInputs::new(p, &y), weights)?;
        total += tape.value(loss).item()? as f64 * chunk.len() as f64;
    }
    Ok(total / indices.len().max(1) as f64)
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut NAdam,
    x: Tensor,
    y: &Tensor,
    weights: LossWeights,
    dropout_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let xv = tape.constant(x);
    let p = model.forward(&mut tape, &params, xv, true, dropout_seed)?;
    let loss = combined_loss(&mut tape, &LossInputs::new(p, y), weights)?;
    let value = tape.value(loss).item()? as f64;
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let grads: Vec<Tensor> = params
        .iter()
        .zip(model.values())
        .map(|(&v, current)| tape.take_grad(v).unwrap_or_else(|| Tensor::zeros_like(current)))
        .collect();
    opt.step(model.values_mut(), &grads)?;
    Ok(value)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Trains `model` on `train`, validating on `val` after every epoch.
///
/// Each epoch shuffles the training order (seeded), runs one NAdam step per
/// batch, then computes the validation loss with dropout off and applies the
/// callbacks. A non-finite training loss aborts with its epoch and batch.
pub fn fit(
    model: &mut Model,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let pool = Pooled { train, val };
    let n_train = train.len();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut opt = NAdam::new(cfg.optimizer);
    let mut state = CallbackState::new(cfg.callbacks, cfg.optimizer.lr);
    let mut best_values: Option<Vec<Tensor>> = None;
    let mut log = TrainingLog::default();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0));
        if cfg.resample_val_each_epoch {
            order.shuffle(&mut rng);
        }
        let (train_idx, val_idx) = order.split_at(n_train);
        let mut train_idx = train_idx.to_vec();
        train_idx.shuffle(&mut rng);

        let lr = state.lr;
        opt.set_lr(lr);
        let mut loss_sum = 0.0;
        for (b, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            let (x, y) = load_batch(&pool, chunk)?;
            let loss = train_step(model, &mut opt, x, &y, cfg.loss, mix(cfg.seed, epoch as u64, b as u64 + 1))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / n_train as f64;
        let val_loss = evaluate_loss(model, &pool, val_idx, cfg.batch_size, cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }

        let events = state.on_epoch_end(epoch, val_loss);
        if events.contains(&Event::Checkpoint) {
            if let Some(path) = &cfg.checkpoint_path {
                model.save_weights(path)?;
            }
            if cfg.restore_best {
                best_values = Some(model.values().to_vec());
            }
        }
        log::info!(
            "epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e}{}",
            events.iter().map(|e| format!(" [{e}]")).collect::<String>()
        );
        let stop = events.contains(&Event::Stop);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            events,
        });
        if stop {
            break;
        }
    }

    if let Some(best) = best_values {
        model.values_mut().clone_from_slice(&best);
    }
    Ok(log)
}

/// Training items first, then validation items, under one index space.
struct Pooled<'a> {
    train: &'a dyn SampleSource,
    val: &'a dyn SampleSource,
}

impl SampleSource for Pooled<'_> {
    fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    fn get(&self, index: usize) -> Result<(Tensor, Tensor)> {
        let n = self.train.len();
        if index < n {
            self.train.get(index)
        } else {
            self.val.get(index - n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let records: Vec<u32> = (0..100).collect();
        let (train, val) = split_train_val(&records, 0.15, 9).unwrap();
        assert_eq!((train.len(), val.len()), (85, 15));
        let mut all: Vec<u32> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, records);
        assert_eq!(split_train_val(&records, 0.15, 9).unwrap().1, val);
        assert_eq!(split_train_val(&[1, 2], 0.15, 0).unwrap().1.len(), 1);
        assert!(split_train_val(&[1], 0.15, 0).is_err());
    }
}
