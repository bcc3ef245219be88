//! Networks, initializers and optimizers.

mod init;
mod layer;
mod models;
mod optim;

pub use init::{apply_weight_dropout, init_beta, init_default_uniform, InitScheme, InitSpec};
pub use layer::{Activation, BoundMlp, DenseLayer, Mlp};
pub use models::{EncoderModel, PredictorModel, ProjectorModel};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
