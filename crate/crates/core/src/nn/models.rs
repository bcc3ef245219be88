use super::init::{init_default_uniform, InitSpec};
use super::layer::{BoundMlp, DenseLayer, Mlp};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

/// The trainable representation network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<T> {
    mlp: Mlp<T>,
}

impl<T: Scalar> EncoderModel<T> {
    /// Builds `input → hidden… → latent` with uniform fan-in initialization
    /// drawn from the `(seed, EncoderInit, stream_index)` stream.
    pub fn new(input_dim: usize, hidden: &[usize], latent_dim: usize, seed: u64, stream_index: u64) -> Result<Self> {
        let mut mlp = Mlp::zeros(&widths(input_dim, hidden, latent_dim))?;
        let mut rng = rng::stream(seed, Purpose::EncoderInit, stream_index);
        for layer in mlp.layers_mut() {
            init_default_uniform(layer, &mut rng);
        }
        Ok(Self { mlp })
    }

    pub fn from_mlp(mlp: Mlp<T>) -> Self {
        Self { mlp }
    }

    /// Same architecture, fresh parameters from the `(seed, RandomEncoder)`
    /// stream. Used for the untrained-encoder baseline.
    pub fn random_like(&self, seed: u64) -> Self {
        let mut mlp = self.mlp.clone();
        let mut rng = rng::stream(seed, Purpose::RandomEncoder, 0);
        for layer in mlp.layers_mut() {
            init_default_uniform(layer, &mut rng);
        }
        Self { mlp }
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.mlp.forward(x)
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundMlp<'t, T> {
        self.mlp.bind(tape, trainable)
    }

    pub fn digest(&self) -> String {
        self.mlp.digest()
    }
}

/// A frozen random target network.
///
/// Parameters are fixed at construction and there is no mutable access to
/// them; `forward` is a pure function of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorModel<T> {
    mlp: Mlp<T>,
    init: InitSpec,
    candidate_index: u64,
}

impl<T: Scalar> ProjectorModel<T> {
    /// Draws candidate `candidate_index` from the `(init.seed, ProjectorInit,
    /// candidate_index)` stream.
    pub fn generate(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        init: InitSpec,
        candidate_index: u64,
    ) -> Result<Self> {
        init.validate().map_err(Error::config)?;
        let mut mlp = Mlp::zeros(&widths(input_dim, hidden, output_dim))?;
        let mut rng = rng::stream(init.seed, Purpose::ProjectorInit, candidate_index);
        for layer in mlp.layers_mut() {
            init.apply(layer, &mut rng);
        }
        Ok(Self {
            mlp,
            init,
            candidate_index,
        })
    }

    /// Restores a projector from stored parameters.
    pub fn from_layers(layers: Vec<DenseLayer<T>>, init: InitSpec, candidate_index: u64) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::from_layers(layers)?,
            init,
            candidate_index,
        })
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn init_spec(&self) -> &InitSpec {
        &self.init
    }

    pub fn candidate_index(&self) -> u64 {
        self.candidate_index
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.mlp.forward(x)
    }

    pub fn digest(&self) -> String {
        self.mlp.digest()
    }
}

/// A low-capacity trainable head mapping representations to one
/// projector's output space.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel<T> {
    mlp: Mlp<T>,
}

impl<T: Scalar> PredictorModel<T> {
    /// Linear when `hidden == 0`, otherwise one ReLU hidden layer.
    pub fn new(latent_dim: usize, hidden: usize, output_dim: usize, seed: u64, stream_index: u64) -> Result<Self> {
        let hidden: Vec<usize> = if hidden == 0 { vec![] } else { vec![hidden] };
        let mut mlp = Mlp::zeros(&widths(latent_dim, &hidden, output_dim))?;
        let mut rng = rng::stream(seed, Purpose::PredictorInit, stream_index);
        for layer in mlp.layers_mut() {
            init_default_uniform(layer, &mut rng);
        }
        Ok(Self { mlp })
    }

    pub fn from_mlp(mlp: Mlp<T>) -> Self {
        Self { mlp }
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.mlp.forward(z)
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundMlp<'t, T> {
        self.mlp.bind(tape, trainable)
    }
}
