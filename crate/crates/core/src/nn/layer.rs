use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// `y = act(x·W + b)` with `W: fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, activation: Activation) -> Result<Self> {
        let (_, fan_out) = weight.dims2()?;
        if bias.shape() != [fan_out] {
            return Err(Error::shape("dense layer", weight.shape(), bias.shape()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.matmul(&self.weight)?;
        crate::tensor::add_row_bias_in_place(&mut y, &self.bias)?;
        if self.activation == Activation::Relu {
            y.data_mut().iter_mut().for_each(|v| *v = crate::tensor::relu(*v));
        }
        Ok(y)
    }
}

/// A stack of dense layers; ReLU between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Zero-initialized network with layer widths `dims[0] → … → dims[last]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!(
                "network needs at least two positive widths, got {dims:?}"
            )));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::zeros(w[0], w[1], act)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network without layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Contract(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::fan_out))
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match shape {
            [_, d] if *d == self.input_dim() => Ok(()),
            _ => Err(Error::shape("network input", shape, &[0, self.input_dim()])),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Registers the parameters on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundMlp<'t, T> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                (
                    tape.leaf(l.weight.clone(), trainable),
                    tape.leaf(l.bias.clone(), trainable),
                    l.activation,
                )
            })
            .collect();
        BoundMlp { layers }
    }

    /// Parameters in `[w0, b0, w1, b1, …]` order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.layer{i}.weight"), format!("{prefix}.layer{i}.bias")])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn digest(&self) -> String {
        crate::digest::tensors(self.params())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
pub struct BoundMlp<'t, T: Scalar> {
    layers: Vec<(Var<'t, T>, Var<'t, T>, Activation)>,
}

impl<'t, T: Scalar> BoundMlp<'t, T> {
    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = h.matmul(w)?.add_row_bias(b)?;
            if act == Activation::Relu {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    /// Parameter handles in the same order as [`Mlp::params`].
    pub fn params(&self) -> Vec<Var<'t, T>> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}
