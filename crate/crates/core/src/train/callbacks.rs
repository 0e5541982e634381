//! Checkpoint, learning-rate reduction and early stopping, driven by the
//! validation loss at the end of each epoch.
//!
//! Two counters run side by side. `epochs_since_improve` counts epochs since
//! the best validation loss and triggers the stop; `epochs_since_lr_change`
//! counts the same stagnation but restarts after every reduction, so a long
//! plateau halves the rate once per `lr_patience` epochs instead of every
//! epoch. When both fire on the same epoch, stopping wins.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CallbackConfig {
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub stop_patience: usize,
}

impl Default for CallbackConfig {
    fn default() -> Self {
        Self {
            lr_patience: 25,
            lr_factor: 0.5,
            stop_patience: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    /// strictly better validation loss; weights saved
    Checkpoint,
    ReduceLr { from: f64, to: f64 },
    Stop,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Checkpoint => f.write_str("checkpoint"),
            Event::ReduceLr { .. } => f.write_str("reduce_lr"),
            Event::Stop => f.write_str("stop"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CallbackState {
    pub cfg: CallbackConfig,
    pub best_val_loss: f64,
    pub best_epoch: Option<usize>,
    pub epochs_since_improve: usize,
    pub epochs_since_lr_change: usize,
    pub lr: f64,
}

impl CallbackState {
    pub fn new(cfg: CallbackConfig, lr: f64) -> Self {
        Self {
            cfg,
            best_val_loss: f64::INFINITY,
            best_epoch: None,
            epochs_since_improve: 0,
            epochs_since_lr_change: 0,
            lr,
        }
    }

    /// Updates the state for `epoch` (1-based) and returns what happened.
    pub fn on_epoch_end(&mut self, epoch: usize, val_loss: f64) -> Vec<Event> {
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = Some(epoch);
            self.epochs_since_improve = 0;
            self.epochs_since_lr_change = 0;
            return vec![Event::Checkpoint];
        }
        self.epochs_since_improve += 1;
        self.epochs_since_lr_change += 1;
        if self.epochs_since_improve >= self.cfg.stop_patience {
            return vec![Event::Stop];
        }
        if self.epochs_since_lr_change >= self.cfg.lr_patience {
            let from = self.lr;
            self.lr *= self.cfg.lr_factor;
            self.epochs_since_lr_change = 0;
            return vec![Event::ReduceLr { from, to: self.lr }];
        }
        Vec::new()
    }
}
