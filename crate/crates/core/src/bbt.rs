//! Batch-wise Barlow Twins divergence.
//!
//! For each projector `k`, the `m × m` matrix `C⁽ᵏ⁾` holds cosine
//! similarities between projector outputs `yᵢ` and predictor outputs `ŷⱼ`
//! across the batch. The loss pulls the diagonal to 1 and the off-diagonal
//! towards 0:
//!
//! ```text
//! L = Σₖ Σᵢ [ (1 − cᵢᵢ)² + λ Σ_{j≠i} cᵢⱼ² ]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Plain sum over batch rows and projectors.
    Sum,
    /// Each projector's term divided by the batch size.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BbtConfig {
    /// Weight of the squared off-diagonal similarities.
    pub lambda_offdiag: f64,
    pub eps: f64,
    pub reduction: Reduction,
}

impl Default for BbtConfig {
    fn default() -> Self {
        Self {
            lambda_offdiag: 0.005,
            eps: NORM_EPS,
            reduction: Reduction::Sum,
        }
    }
}

impl BbtConfig {
    pub fn with_lambda(lambda_offdiag: f64) -> Self {
        Self {
            lambda_offdiag,
            ..Self::default()
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.lambda_offdiag >= 0.0 && self.lambda_offdiag.is_finite()) {
            errors.push(format!(
                "bbt.lambda_offdiag must be finite and >= 0, got {}",
                self.lambda_offdiag
            ));
        }
        if !(self.eps > 0.0) {
            errors.push(format!("bbt.eps must be > 0, got {}", self.eps));
        }
    }
}

/// Batch cosine-similarity matrix between two row sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix<T> {
    pub values: Tensor<T>,
}

impl<T: Scalar> CosineMatrix<T> {
    pub fn size(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values.data()[i * self.size() + j]
    }
}

fn check_pair(y: &[usize], yhat: &[usize]) -> Result<usize> {
    if y != yhat || y.len() != 2 {
        return Err(Error::shape("cosine_matrix", y, yhat));
    }
    if y[0] < 2 {
        return Err(Error::Contract(format!(
            "cosine matrix needs a batch of at least 2 rows, got {}",
            y[0]
        )));
    }
    Ok(y[0])
}

/// `cᵢⱼ = ⟨yᵢ, ŷⱼ⟩ / (max(‖yᵢ‖, eps) · max(‖ŷⱼ‖, eps))`, recorded on the tape.
pub fn cosine_matrix<'t, T: Scalar>(y: Var<'t, T>, yhat: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
    check_pair(&y.shape(), &yhat.shape())?;
    let yn = y.row_l2_normalize(eps)?;
    let yhn = yhat.row_l2_normalize(eps)?;
    yn.matmul_transposed(yhn)
}

/// Plain-value version of [`cosine_matrix`].
pub fn cosine_matrix_values<T: Scalar>(y: &Tensor<T>, yhat: &Tensor<T>, eps: f64) -> Result<CosineMatrix<T>> {
    check_pair(y.shape(), yhat.shape())?;
    let values = y
        .row_l2_normalize(eps)?
        .matmul_transposed(&yhat.row_l2_normalize(eps)?)?;
    Ok(CosineMatrix { values })
}

/// One scalar loss term per projector.
pub fn bbt_loss_terms<'t, T: Scalar>(
    projector_outputs: &[Var<'t, T>],
    predictor_outputs: &[Var<'t, T>],
    cfg: &BbtConfig,
) -> Result<Vec<Var<'t, T>>> {
    if projector_outputs.is_empty() {
        return Err(Error::Contract("BBT loss needs at least one projector".into()));
    }
    if projector_outputs.len() != predictor_outputs.len() {
        return Err(Error::Contract(format!(
            "{} projector outputs but {} predictor outputs",
            projector_outputs.len(),
            predictor_outputs.len()
        )));
    }
    projector_outputs
        .iter()
        .zip(predictor_outputs)
        .enumerate()
        .map(|(k, (&y, &yhat))| {
            let (ys, yhs) = (y.shape(), yhat.shape());
            if ys != yhs {
                return Err(Error::Contract(format!(
                    "projector {k}: projector output {ys:?} vs predictor output {yhs:?}"
                )));
            }
            let c = cosine_matrix(y, yhat, cfg.eps).map_err(|e| Error::Contract(format!("projector {k}: {e}")))?;
            let term = c.bbt_penalty(cfg.lambda_offdiag)?;
            match cfg.reduction {
                Reduction::Sum => Ok(term),
                Reduction::Mean => term.scale(1.0 / ys[0] as f64),
            }
        })
        .collect()
}

/// Total loss over all projectors; gradients reach whichever inputs were
/// registered as requiring them.
pub fn bbt_loss<'t, T: Scalar>(
    projector_outputs: &[Var<'t, T>],
    predictor_outputs: &[Var<'t, T>],
    cfg: &BbtConfig,
) -> Result<Var<'t, T>> {
    let terms = bbt_loss_terms(projector_outputs, predictor_outputs, cfg)?;
    sum_terms(&terms)
}

pub(crate) fn sum_terms<'t, T: Scalar>(terms: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = total.add(t)?;
    }
    Ok(total)
}

/// Loss value without gradients.
pub fn bbt_loss_value<T: Scalar>(
    projector_outputs: &[Tensor<T>],
    predictor_outputs: &[Tensor<T>],
    cfg: &BbtConfig,
) -> Result<f64> {
    let tape = Tape::new();
    let ys: Vec<_> = projector_outputs.iter().map(|t| tape.constant(t.clone())).collect();
    let yhats: Vec<_> = predictor_outputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = bbt_loss(&ys, &yhats, cfg)?;
    let value = loss.value().item().expect("scalar").as_f64();
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let eye = t(&[[1.0, 0.0], [0.0, 1.0]]);
        let swap = t(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(cosine_matrix_values(&eye, &eye, NORM_EPS).unwrap().values, eye);
        assert_eq!(cosine_matrix_values(&eye, &swap, NORM_EPS).unwrap().values, swap);

        let y = t(&[[2.0, 1.0], [-1.0, 3.0], [0.5, 0.5]]);
        let yhat = t(&[[1.0, 0.5], [-0.5, 1.5], [0.25, 0.25]]);
        let c = cosine_matrix_values(&y, &yhat, NORM_EPS).unwrap();
        for i in 0..3 {
            assert!((c.get(i, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_batch_is_rejected() {
        let y = t(&[[1.0, 0.0]]);
        assert!(matches!(
            cosine_matrix_values(&y, &y, NORM_EPS),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn hand_evaluated_losses() {
        let eye = t(&[[1.0, 0.0], [0.0, 1.0]]);
        let swap = t(&[[0.0, 1.0], [1.0, 0.0]]);
        let cfg = BbtConfig::with_lambda(0.005);
        assert_eq!(bbt_loss_value(&[eye.clone()], &[eye.clone()], &cfg).unwrap(), 0.0);
        let l = bbt_loss_value(&[eye], &[swap], &cfg).unwrap();
        assert!((l - 2.01).abs() < 1e-12, "{l}");
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let cfg = BbtConfig::default();
        assert!(bbt_loss_value::<f64>(&[], &[], &cfg).is_err());
        let a = t(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = bbt_loss_value(&[a.clone(), a.clone()], &[a, b], &cfg).unwrap_err();
        assert!(err.to_string().contains("projector 1"), "{err}");
    }

    #[test]
    fn mean_reduction_divides_by_batch() {
        let y = t(&[[1.0, 0.2], [0.3, 1.0], [-1.0, 0.4]]);
        let yhat = t(&[[0.1, 1.0], [1.0, 0.0], [0.5, 0.5]]);
        let sum = bbt_loss_value(&[y.clone()], &[yhat.clone()], &BbtConfig::default()).unwrap();
        let mean_cfg = BbtConfig {
            reduction: Reduction::Mean,
            ..BbtConfig::default()
        };
        let mean = bbt_loss_value(&[y], &[yhat], &mean_cfg).unwrap();
        assert!((sum / 3.0 - mean).abs() < 1e-12);
    }
}
