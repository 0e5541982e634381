//! Inception-encoder U-Net: construction, initialization, forward pass and
//! weight (de)serialization.

mod arch;
mod archive;
mod config;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

use arch::{Architecture, ParamKind};

pub use arch::ParamSpec;
pub use archive::WeightArchive;
pub use config::{ModelConfig, WidthFactor};

/// Outcome of a weight import, by parameter name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// archive records that matched no parameter, or matched with another shape
    pub skipped: Vec<String>,
    /// model parameters the archive did not provide
    pub missing: Vec<String>,
}

/// Samples `shape` from Normal(0, 2 / fan_in).
pub fn gaussian_tensor(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape.to_vec(), |_| normal.sample(rng) as f32)
}

/// Number of scalar parameters `cfg` would allocate.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    Architecture::new(cfg).specs.iter().map(ParamSpec::numel).sum()
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    arch: Architecture,
    values: Vec<Tensor>,
}

impl Model {
    /// Builds the network and draws its initial weights from `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let arch = Architecture::new(&cfg);
        let values = arch.specs.iter().map(|s| Tensor::zeros(s.shape.clone())).collect();
        let mut model = Self { cfg, arch, values };
        model.init_gaussian(model.cfg.seed);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.arch.specs
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.arch.specs.iter().position(|s| s.name == name)
    }

    /// Conv kernels ~ Normal(0, 2/fan_in), biases and GN shifts 0, GN scales 1.
    /// Draws are consumed in parameter order from one seeded stream.
    pub fn init_gaussian(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, value) in self.arch.specs.iter().zip(self.values.iter_mut()) {
            *value = match spec.kind {
                ParamKind::Weight { fan_in } => gaussian_tensor(&spec.shape, fan_in, &mut rng),
                ParamKind::Bias | ParamKind::Beta => Tensor::zeros(spec.shape.clone()),
                ParamKind::Gamma => Tensor::ones(spec.shape.clone()),
            };
        }
    }

    /// Puts every parameter on `tape`, as trainable leaves or as constants.
    /// The returned vars are indexed like [`Model::specs`].
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| {
                let v = v.cast::<T>();
                if trainable {
                    tape.param(v)
                } else {
                    tape.constant(v)
                }
            })
            .collect()
    }

    /// Probability map `[n, 1, h, w]` for `x: [n, c, h, w]`. `training`
    /// only switches dropout on; `seed` picks its mask.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        training: bool,
        seed: u64,
    ) -> Result<Var> {
        if params.len() != self.values.len() {
            return Err(Error::invalid(
                "forward",
                format!("expected {} parameter vars, got {}", self.values.len(), params.len()),
            ));
        }
        let (_, c, h, w) = tape.try_value(x)?.dims4("forward")?;
        if c != self.cfg.input_channels {
            return Err(Error::shape(
                "forward",
                tape.value(x).shape(),
                &[0, self.cfg.input_channels, h, w],
            ));
        }
        config::check_spatial(h, w)?;
        self.arch.forward(tape, params, x, training, seed)
    }

    /// Inference on a fresh tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &params, xv, false, 0)?;
        Ok(tape.value(y).clone())
    }

    pub fn to_archive(&self) -> WeightArchive {
        let mut archive = WeightArchive::new();
        for (spec, value) in self.arch.specs.iter().zip(&self.values) {
            archive
                .push(spec.name.clone(), value.clone())
                .expect("parameter names are unique");
        }
        archive
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load_weights(&mut self, path: impl AsRef<Path>, strict: bool) -> Result<LoadReport> {
        let archive = WeightArchive::load(path)?;
        self.apply_archive(&archive, strict)
    }

    /// Copies every archive record whose name and shape match a parameter.
    /// In strict mode any unmatched record or uncovered parameter is an
    /// error and the model is left unchanged.
    pub fn apply_archive(&mut self, archive: &WeightArchive, strict: bool) -> Result<LoadReport> {
        let mut report = LoadReport::default();
        let mut updates = Vec::new();
        for (name, tensor) in archive.iter() {
            match self.index_of(name) {
                Some(i) if self.values[i].shape() == tensor.shape() => {
                    updates.push((i, tensor));
                    report.loaded.push(name.to_string());
                }
                Some(i) => {
                    if strict {
                        return Err(Error::WeightMismatch(format!(
                            "record {name:?} has shape {:?} but the model expects {:?}",
                            tensor.shape(),
                            self.values[i].shape()
                        )));
                    }
                    report.skipped.push(name.to_string());
                }
                None => {
                    if strict {
                        return Err(Error::WeightMismatch(format!(
                            "record {name:?} does not name a model parameter"
                        )));
                    }
                    report.skipped.push(name.to_string());
                }
            }
        }
        let covered: std::collections::HashSet<usize> = updates.iter().map(|&(i, _)| i).collect();
        report.missing = (0..self.values.len())
            .filter(|i| !covered.contains(i))
            .map(|i| self.arch.specs[i].name.clone())
            .collect();
        if strict && !report.missing.is_empty() {
            return Err(Error::WeightMismatch(format!(
                "archive lacks {} parameter(s), first {:?}",
                report.missing.len(),
                report.missing[0]
            )));
        }
        for (i, tensor) in updates {
            self.values[i] = tensor.clone();
        }
        log::info!(
            "weights: {} loaded, {} skipped, {} missing",
            report.loaded.len(),
            report.skipped.len(),
            report.missing.len()
        );
        Ok(report)
    }
}
