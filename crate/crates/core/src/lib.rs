//! Learning representations by predicting frozen random projectors.
//!
//! An encoder is trained so that small predictor heads can reproduce, batch
//! by batch, the cosine-similarity structure of the outputs of several
//! frozen, randomly initialized projector networks. Projectors are chosen
//! for diversity from a larger random pool by greedy determinant
//! maximization, training alternates between encoder and predictor updates,
//! and the learned representation is scored with a logistic-regression
//! probe.
//!
//! The numerical core is generic over [`Scalar`] (`f32` and `f64`); the
//! aliases below fix the `f32` storage type used for training runs and
//! checkpoints.

pub mod bbt;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod digest;
pub mod diversity;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Gradients, Tape, Tensor, Var};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Encoder32 = nn::EncoderModel<f32>;
pub type Projector32 = nn::ProjectorModel<f32>;
pub type Predictor32 = nn::PredictorModel<f32>;
pub type TrainState32 = pipeline::TrainState<f32>;
