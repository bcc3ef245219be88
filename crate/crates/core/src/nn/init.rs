//! Parameter initializers for dense layers.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::DenseLayer;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `Uniform(±1/√fan_in)` for weights and biases.
    DefaultUniform,
    /// Weights `2·b − 1` with `b ~ Beta(0.5, 0.5)`, zero biases.
    Beta,
    /// [`InitScheme::Beta`] followed by a permanent weight-dropout mask.
    BetaWithDropout,
}

/// How a projector's parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub scheme: InitScheme,
    /// Fraction of weights zeroed; only read by `beta_with_dropout`.
    #[serde(default = "default_dropout_rate")]
    pub dropout_rate: f64,
    /// Set from the run seed; not serialized.
    #[serde(skip)]
    pub seed: u64,
}

fn default_dropout_rate() -> f64 {
    0.4
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            scheme: InitScheme::DefaultUniform,
            dropout_rate: default_dropout_rate(),
            seed: 0,
        }
    }
}

impl InitSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(format!(
                "init.dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        Ok(())
    }

    pub fn apply<T: Scalar, R: Rng + ?Sized>(&self, layer: &mut DenseLayer<T>, rng: &mut R) {
        match self.scheme {
            InitScheme::DefaultUniform => init_default_uniform(layer, rng),
            InitScheme::Beta => init_beta(layer, rng),
            InitScheme::BetaWithDropout => {
                init_beta(layer, rng);
                apply_weight_dropout(layer, self.dropout_rate, rng);
            }
        }
    }
}

pub fn init_default_uniform<T: Scalar, R: Rng + ?Sized>(layer: &mut DenseLayer<T>, rng: &mut R) {
    let bound = 1.0 / (layer.fan_in() as f64).sqrt();
    let mut draw = || T::lit(rng.random_range(-bound..=bound));
    layer.weight.data_mut().iter_mut().for_each(|w| *w = draw());
    layer.bias.data_mut().iter_mut().for_each(|b| *b = draw());
}

/// Inverse-CDF draw from Beta(0.5, 0.5): the arcsine law, `sin²(πu/2)`.
fn arcsine<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (FRAC_PI_2 * u).sin().powi(2)
}

pub fn init_beta<T: Scalar, R: Rng + ?Sized>(layer: &mut DenseLayer<T>, rng: &mut R) {
    layer
        .weight
        .data_mut()
        .iter_mut()
        .for_each(|w| *w = T::lit(2.0 * arcsine(rng) - 1.0));
    layer.bias.data_mut().iter_mut().for_each(|b| *b = T::zero());
}

/// Zeroes each weight independently with probability `rate`.
///
/// The mask is applied once; layers built this way are frozen, so it is
/// never resampled.
pub fn apply_weight_dropout<T: Scalar, R: Rng + ?Sized>(layer: &mut DenseLayer<T>, rate: f64, rng: &mut R) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if rate == 0.0 {
        return;
    }
    for w in layer.weight.data_mut() {
        if rng.random::<f64>() < rate {
            *w = T::zero();
        }
    }
}
