use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameters of the Gaussian cluster benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d_signal: usize,
    pub d_noise: usize,
    pub classes: usize,
    pub sep: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            d_signal: 10,
            d_noise: 10,
            classes: 3,
            sep: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn generate<T: Scalar>(&self) -> Result<(Dataset<T>, Dataset<T>)> {
        make_synthetic_clusters(self.n, self.d_signal, self.d_noise, self.classes, self.sep, self.seed)
    }
}

/// Gaussian clusters around `sep`-scaled simplex corners.
///
/// Class `c` is centred on `sep · e_c` (the standard basis of the signal
/// subspace; classes beyond `d_signal` use `−sep · e_{c − d_signal}`). Every
/// coordinate gets unit Gaussian noise and `d_noise` pure-noise columns are
/// appended. Labels are balanced; rows are shuffled and split 75/25.
pub fn make_synthetic_clusters<T: Scalar>(
    n: usize,
    d_signal: usize,
    d_noise: usize,
    classes: usize,
    sep: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let mut errors = Vec::new();
    if classes < 2 {
        errors.push(format!("synthetic classes must be >= 2, got {classes}"));
    }
    if n < 10 * classes {
        errors.push(format!("synthetic n must be >= 10 * classes, got n = {n}"));
    }
    if d_signal == 0 || classes > 2 * d_signal {
        errors.push(format!(
            "synthetic d_signal must be >= 1 and >= classes / 2, got {d_signal} for {classes} classes"
        ));
    }
    if !(sep >= 0.0 && sep.is_finite()) {
        errors.push(format!("synthetic sep must be finite and >= 0, got {sep}"));
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }

    let dim = d_signal + d_noise;
    let mut rng = rng::stream(seed, Purpose::Synthetic, 0);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * dim);
    for &c in &labels {
        let (axis, sign) = if c < d_signal { (c, 1.0) } else { (c - d_signal, -1.0) };
        for j in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let centre = if j == axis { sign * sep } else { 0.0 };
            data.push(T::lit(centre + noise));
        }
    }
    let all = Dataset::new(Tensor::new(vec![n, dim], data)?, labels, classes, Split::Train)?;
    let n_train = n * 3 / 4;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n).collect();
    let train = all.subset(&train_idx)?;
    let mut test = all.subset(&test_idx)?;
    test.split = Split::Test;
    Ok((train, test))
}
