//! Retinal vessel segmentation toolkit.
//!
//! A small reverse-mode autodiff engine ([`tensor`]) carries the network
//! building blocks ([`nn`]), the BCE + soft-Jaccard training objective
//! ([`losses`]) and an Inception-encoder U-Net ([`model`]). Around it sit the
//! image conditioning ([`preprocess`]) and 60-fold augmentation
//! ([`augment`]) pipelines, the NAdam training loop with its callbacks
//! ([`train`]), and dataset splitting and evaluation ([`data`]).

pub mod augment;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
