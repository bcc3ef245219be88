use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    /// Coupled L2 penalty: added to the gradient before the moment updates.
    pub weight_decay: f64,
    /// SGD momentum; ignored by Adam.
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.0,
            momentum: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self, prefix: &str, errors: &mut Vec<String>) {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            errors.push(format!("{prefix}.lr must be finite and >= 0, got {}", self.lr));
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            errors.push(format!("{prefix}.betas must lie in [0, 1), got {:?}", self.betas));
        }
        if !(self.eps > 0.0) {
            errors.push(format!("{prefix}.eps must be > 0, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            errors.push(format!("{prefix}.weight_decay must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errors.push(format!("{prefix}.momentum must lie in [0, 1), got {}", self.momentum));
        }
    }
}

/// Optimizer configuration plus per-parameter moment buffers.
///
/// For Adam `first`/`second` hold the first and second moments; for SGD
/// `first` holds the momentum velocity and `second` is unused. Buffers are
/// allocated on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn from_parts(config: OptimizerConfig, step: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// Applies one update. All gradients are validated before any parameter
    /// changes, so a NaN aborts without a partial step.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], names: &[String]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map_or("<unnamed>", String::as_str);
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer step", p.shape(), g.shape()));
            }
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter {name} at flat index {pos}"
                )));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Contract("moment buffers do not match the parameter set".into()));
        }
        self.step += 1;
        let cfg = self.config;
        let wd = cfg.weight_decay;
        match cfg.kind {
            OptimizerKind::Adam => {
                let [b1, b2] = cfg.betas;
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    let (m, v) = (m.data_mut(), v.data_mut());
                    for (i, (theta, &grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let x = theta.as_f64();
                        let gi = grad.as_f64() + wd * x;
                        let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                        let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                        m[i] = T::lit(mi);
                        v[i] = T::lit(vi);
                        let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
                        *theta = T::lit(x - update);
                    }
                }
            }
            OptimizerKind::Sgd => {
                for ((p, g), vel) in params.iter_mut().zip(grads).zip(self.first.iter_mut()) {
                    let vel = vel.data_mut();
                    for (i, (theta, &grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let x = theta.as_f64();
                        let gi = grad.as_f64() + wd * x;
                        let vi = cfg.momentum * vel[i].as_f64() + gi;
                        vel[i] = T::lit(vi);
                        *theta = T::lit(x - cfg.lr * vi);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn one_adam_step_moves_by_lr() {
        // m̂ = g, v̂ = g² after bias correction, so the step is lr·g/(|g| + eps).
        let mut opt = OptimizerState::<f64>::new(OptimizerConfig {
            lr: 0.1,
            ..OptimizerConfig::default()
        });
        let mut p = Tensor::scalar(1.0);
        opt.step(&mut [&mut p], &[Tensor::scalar(1.0)], &names(1)).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.item().unwrap() - expected).abs() < 1e-12);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut opt = OptimizerState::<f32>::new(OptimizerConfig::default());
        let mut p = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        for _ in 0..3 {
            opt.step(&mut [&mut p], &[Tensor::zeros(&[3])], &names(1)).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn plain_sgd_step() {
        let mut opt = OptimizerState::<f32>::new(OptimizerConfig::sgd(0.5));
        let mut p = Tensor::scalar(3.0);
        opt.step(&mut [&mut p], &[Tensor::scalar(2.0)], &names(1)).unwrap();
        assert_eq!(p.item(), Some(2.0));
    }

    #[test]
    fn nan_gradient_names_parameter_and_leaves_params_untouched() {
        let mut opt = OptimizerState::<f32>::new(OptimizerConfig::default());
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(1.0);
        let err = opt
            .step(
                &mut [&mut a, &mut b],
                &[Tensor::scalar(1.0), Tensor::scalar(f32::NAN)],
                &["enc.w".to_string(), "enc.b".to_string()],
            )
            .unwrap_err();
        assert!(err.to_string().contains("enc.b"), "{err}");
        assert_eq!(a.item(), Some(1.0));
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn weight_decay_is_coupled() {
        // SGD with wd: θ ← θ − lr·(g + wd·θ).
        let mut opt = OptimizerState::<f64>::new(OptimizerConfig {
            weight_decay: 0.1,
            ..OptimizerConfig::sgd(1.0)
        });
        let mut p = Tensor::scalar(2.0);
        opt.step(&mut [&mut p], &[Tensor::scalar(0.0)], &names(1)).unwrap();
        assert!((p.item().unwrap() - 1.8).abs() < 1e-12);
    }
}
