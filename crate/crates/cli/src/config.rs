//! Run configuration: built-in defaults, then a TOML file, then
//! `VSEG_<SECTION>_<KEY>` environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use vseg_core::data::EvalConfig;
use vseg_core::losses::LossWeights;
use vseg_core::model::{ModelConfig, WidthFactor};
use vseg_core::preprocess::PreprocessConfig;
use vseg_core::train::{CallbackConfig, NAdamConfig, TrainConfig};

use crate::CliError;

pub const ENV_PREFIX: &str = "VSEG_";

/// Protocol value that trains one model on every record, with no test set.
pub const ALL_RECORDS: &str = "none";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub preprocess: Preprocess,
    pub augment: Augment,
    pub model: ModelSection,
    pub train: Train,
    pub eval: Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            output_dir: "runs".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    pub clip_limit: f64,
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub gamma: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        Self {
            clip_limit: d.clip_limit,
            tiles_x: d.tiles.0,
            tiles_y: d.tiles.1,
            gamma: d.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augment {
    pub enabled: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width_factor: String,
    pub input_height: usize,
    pub input_width: usize,
    pub groups: usize,
    pub gn_epsilon: f64,
    pub dropout: f64,
    pub skip_connections: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_weights: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            width_factor: d.width_factor.to_string(),
            input_height: d.input_size.0,
            input_width: d.input_size.1,
            groups: d.groups,
            gn_epsilon: d.gn_epsilon,
            dropout: d.dropout_rate,
            skip_connections: d.skip_connections,
            init_weights: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Train {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub protocol: String,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub max_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bce_weight: f64,
    pub jaccard_weight: f64,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub stop_patience: usize,
    pub resample_val_each_epoch: bool,
}

impl Default for Train {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: None,
            protocol: "random_15".into(),
            batch_size: t.batch_size,
            val_fraction: t.val_fraction,
            max_epochs: t.max_epochs,
            lr: t.optimizer.lr,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            epsilon: t.optimizer.epsilon,
            bce_weight: t.loss.bce,
            jaccard_weight: t.loss.jaccard,
            lr_patience: t.callbacks.lr_patience,
            lr_factor: t.callbacks.lr_factor,
            stop_patience: t.callbacks.stop_patience,
            resample_val_each_epoch: t.resample_val_each_epoch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub threshold: f64,
    pub pooled: bool,
    pub native_resolution: bool,
}

impl Default for Eval {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            threshold: e.threshold,
            pooled: e.pooled,
            native_resolution: e.native_resolution,
        }
    }
}

/// Every accepted key with a one-line description, in file order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("paths", "data_dir", "dataset root holding images/ and masks/"),
    ("paths", "output_dir", "where weights, logs and reports are written"),
    ("preprocess", "clip_limit", "CLAHE clip limit, in multiples of the mean bin height"),
    ("preprocess", "tiles_x", "CLAHE tiles across"),
    ("preprocess", "tiles_y", "CLAHE tiles down"),
    ("preprocess", "gamma", "gamma exponent applied after CLAHE"),
    ("augment", "enabled", "train on the 60 crop/rotation/flip variants of every image"),
    ("model", "width_factor", "channel width multiplier, e.g. 1/8 or 0.25"),
    ("model", "input_height", "network input height, a multiple of 32"),
    ("model", "input_width", "network input width, a multiple of 32"),
    ("model", "groups", "group norm group count"),
    ("model", "gn_epsilon", "group norm epsilon"),
    ("model", "dropout", "dropout rate before the head"),
    ("model", "skip_connections", "concatenate encoder features in the decoder"),
    ("model", "init_weights", "weight archive to start training from (partial loads allowed)"),
    ("train", "seed", "random seed; required for training"),
    ("train", "protocol", "drive_fixed, stare_loocv, chase_first20, hrf_5percat, random_15 or none"),
    ("train", "batch_size", "images per optimizer step"),
    ("train", "val_fraction", "share of each fold's training images held out for validation"),
    ("train", "max_epochs", "upper bound on epochs per fold"),
    ("train", "lr", "initial NAdam learning rate"),
    ("train", "beta1", "NAdam first-moment decay"),
    ("train", "beta2", "NAdam second-moment decay"),
    ("train", "epsilon", "NAdam denominator epsilon"),
    ("train", "bce_weight", "weight of binary cross-entropy in the loss"),
    ("train", "jaccard_weight", "weight of the soft Jaccard distance in the loss"),
    ("train", "lr_patience", "epochs without improvement before the rate is reduced"),
    ("train", "lr_factor", "learning rate multiplier on reduction"),
    ("train", "stop_patience", "epochs without improvement before training stops"),
    ("train", "resample_val_each_epoch", "redraw the train/validation partition every epoch"),
    ("eval", "threshold", "probability at or above which a pixel counts as vessel"),
    ("eval", "pooled", "sum confusion counts per fold instead of averaging per image"),
    ("eval", "native_resolution", "score at the mask's resolution instead of the network's"),
];

fn defaults_table() -> Table {
    Table::try_from(RunConfig::default()).expect("defaults serialize")
}

/// `--help` appendix listing every key, its default and its environment
/// variable.
pub fn help_text() -> String {
    let defaults = defaults_table();
    let mut out = String::from("Configuration keys (TOML file sections; env override VSEG_<SECTION>_<KEY>):\n");
    let mut section = "";
    for &(sec, key, doc) in KEYS {
        if sec != section {
            out.push_str(&format!("\n  [{sec}]\n"));
            section = sec;
        }
        let default = defaults
            .get(sec)
            .and_then(Value::as_table)
            .and_then(|t| t.get(key))
            .map(Value::to_string)
            .unwrap_or_else(|| "unset".into());
        out.push_str(&format!("    {key:<24} default {default:<12} {doc}\n"));
    }
    out
}

/// Parses an override value as a TOML literal when the key's default is not
/// a string, so `VSEG_TRAIN_MAX_EPOCHS=5` becomes an integer.
fn parse_value(raw: &str, default: Option<&Value>) -> Value {
    if matches!(default, Some(Value::String(_))) {
        return Value::String(raw.to_string());
    }
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `VSEG_<SECTION>_<KEY>=value` pairs on top of `table`.
pub fn apply_env<I>(table: &mut Table, vars: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let defaults = defaults_table();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let lower = rest.to_ascii_lowercase();
        let Some((section, key)) = lower.split_once('_') else {
            return Err(CliError::Config(format!("{name}: expected VSEG_<SECTION>_<KEY>")));
        };
        if !KEYS.iter().any(|&(s, k, _)| s == section && k == key) {
            return Err(CliError::Config(format!("{name}: unknown setting {section}.{key}")));
        }
        let default = defaults.get(section).and_then(Value::as_table).and_then(|t| t.get(key));
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(sec) = entry else {
            return Err(CliError::Config(format!("{section} must be a table")));
        };
        sec.insert(key.to_string(), parse_value(&raw, default));
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, overlaid by `file` (if any) and then by the environment.
    pub fn load(file: Option<&Path>) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        apply_env(&mut table, std::env::vars())?;
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self, CliError> {
        Self::deserialize(table).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn width_factor(&self) -> Result<WidthFactor, CliError> {
        self.model
            .width_factor
            .parse()
            .map_err(|e: vseg_core::Error| CliError::Config(format!("model.width_factor: {e}")))
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            clip_limit: self.preprocess.clip_limit,
            tiles: (self.preprocess.tiles_x, self.preprocess.tiles_y),
            gamma: self.preprocess.gamma,
        }
    }

    pub fn model_config(&self, seed: u64) -> Result<ModelConfig, CliError> {
        let m = &self.model;
        let cfg = ModelConfig {
            input_size: (m.input_height, m.input_width),
            width_factor: self.width_factor()?,
            groups: m.groups,
            gn_epsilon: m.gn_epsilon,
            dropout_rate: m.dropout,
            skip_connections: m.skip_connections,
            seed,
            ..ModelConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.train.seed.ok_or_else(|| {
            CliError::Config("a seed is required: set train.seed, VSEG_TRAIN_SEED or --seed".into())
        })
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let cfg = TrainConfig {
            batch_size: t.batch_size,
            val_fraction: t.val_fraction,
            seed,
            max_epochs: t.max_epochs,
            loss: LossWeights {
                bce: t.bce_weight,
                jaccard: t.jaccard_weight,
            },
            optimizer: NAdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            callbacks: CallbackConfig {
                lr_patience: t.lr_patience,
                lr_factor: t.lr_factor,
                stop_patience: t.stop_patience,
            },
            checkpoint_path: None,
            restore_best: true,
            resample_val_each_epoch: t.resample_val_each_epoch,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> Result<EvalConfig, CliError> {
        let size = |v: usize| u32::try_from(v).map_err(|_| CliError::Config("input size too large".into()));
        let preprocess = self.preprocess_config();
        preprocess.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(EvalConfig {
            input_size: (size(self.model.input_height)?, size(self.model.input_width)?),
            threshold: self.eval.threshold,
            preprocess,
            pooled: self.eval.pooled,
            native_resolution: self.eval.native_resolution,
        })
    }
}
