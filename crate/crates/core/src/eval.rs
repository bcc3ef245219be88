//! Frozen-representation evaluation with a multinomial logistic-regression
//! probe.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::EncoderModel;
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows embedded per forward call.
const EMBED_CHUNK: usize = 4096;

/// Row-wise encoder output for the whole dataset, computed in chunks.
pub fn embed_dataset<T: Scalar>(encoder: &EncoderModel<T>, ds: &Dataset<T>) -> Result<Tensor<T>> {
    embed_features(encoder, &ds.features)
}

pub fn embed_features<T: Scalar>(encoder: &EncoderModel<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = features.dims2()?;
    if d != encoder.input_dim() {
        return Err(Error::Data(format!(
            "dataset has {d} features, encoder expects {}",
            encoder.input_dim()
        )));
    }
    let mut data = Vec::with_capacity(n * encoder.latent_dim());
    for start in (0..n).step_by(EMBED_CHUNK) {
        let end = (start + EMBED_CHUNK).min(n);
        let chunk = Tensor::new(vec![end - start, d], features.data()[start * d..end * d].to_vec())?;
        data.extend(encoder.forward(&chunk)?.into_data());
    }
    Tensor::new(vec![n, encoder.latent_dim()], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// L2 penalty on the weights (not the bias), added to the mean
    /// cross-entropy as `l2 / 2 · ‖W‖²`.
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
    /// First probe seed.
    pub seed: u64,
    /// Number of probe seeds, `seed, seed + 1, …`.
    pub seeds: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iters: 2000,
            tol: 1e-5,
            seed: 0,
            seeds: 1,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            errors.push(format!("probe.l2 must be finite and >= 0, got {}", self.l2));
        }
        if self.max_iters == 0 {
            errors.push("probe.max_iters must be >= 1".into());
        }
        if !(self.tol > 0.0) {
            errors.push(format!("probe.tol must be > 0, got {}", self.tol));
        }
        if self.seeds == 0 {
            errors.push("probe.seeds must be >= 1".into());
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }
}

/// A fitted linear classifier over raw (unstandardized) embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// `latent × classes`.
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
    /// Digest of the encoder whose embeddings the probe was fit on.
    pub encoder_digest: Option<String>,
    pub iterations: usize,
    pub converged: bool,
}

impl ProbeModel {
    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits<T: Scalar>(&self, embeddings: &Tensor<T>) -> Result<Tensor<f64>> {
        if embeddings.dims2()?.1 != self.weight.shape()[0] {
            return Err(Error::shape("probe", embeddings.shape(), self.weight.shape()));
        }
        embeddings.cast::<f64>().matmul(&self.weight)?.add_row_bias(&self.bias)
    }

    /// Arg-max class per row; ties go to the lowest class index.
    pub fn predict<T: Scalar>(&self, embeddings: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(embeddings)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Mean cross-entropy plus L2 penalty and its gradient with respect to
/// `theta = [W (d × c, row-major), b (c)]`.
fn objective(x: &[f64], y: &[usize], n: usize, d: usize, c: usize, l2: f64, theta: &[f64], grad: &mut [f64]) -> f64 {
    let (w, b) = theta.split_at(d * c);
    let mut wt = vec![0.0; c * d];
    for j in 0..d {
        for k in 0..c {
            wt[k * d + j] = w[j * c + k];
        }
    }
    let mut gwt = vec![0.0; c * d];
    let (gw, gb) = grad.split_at_mut(d * c);
    gb.fill(0.0);
    let mut row = vec![0.0; c];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (xi, &label) in x.chunks_exact(d).zip(y) {
        for (k, v) in row.iter_mut().enumerate() {
            *v = dot(xi, &wt[k * d..(k + 1) * d]) + b[k];
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let target_logit = row[label];
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        loss += z.ln() + max - target_logit;
        for (k, v) in row.iter().enumerate() {
            let r = (v / z - if k == label { 1.0 } else { 0.0 }) * inv_n;
            gb[k] += r;
            for (g, xj) in gwt[k * d..(k + 1) * d].iter_mut().zip(xi) {
                *g += r * xj;
            }
        }
    }
    for j in 0..d {
        for k in 0..c {
            gw[j * c + k] = gwt[k * d + j] + l2 * w[j * c + k];
        }
    }
    loss * inv_n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += p[l] * q[l];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1] / n` by power iteration.
fn gram_spectral_norm(x: &[f64], n: usize, d: usize) -> f64 {
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    let mut xv = vec![0.0; n];
    for _ in 0..100 {
        for (i, out) in xv.iter_mut().enumerate() {
            *out = dot(&x[i * d..(i + 1) * d], &v[..d]) + v[d];
        }
        let mut next = vec![0.0; d + 1];
        for (i, &s) in xv.iter().enumerate() {
            for (nj, xj) in next.iter_mut().zip(&x[i * d..(i + 1) * d]) {
                *nj += xj * s;
            }
            next[d] += s;
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt() / n as f64;
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-6 * norm;
        lambda = norm;
        v = next.iter().map(|a| a / (norm * n as f64)).collect();
        if converged {
            break;
        }
    }
    lambda
}

/// Fits a multinomial logistic regression by accelerated full-batch
/// gradient descent.
///
/// Features are z-scored with the training statistics internally and the
/// returned weights are mapped back to the raw embedding scale. The step is
/// `1 / L` with `L` the smoothness bound of the objective, and momentum is
/// restarted whenever it points uphill. The seed only sets the small random
/// starting point.
pub fn train_probe<T: Scalar>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeModel> {
    let (n, d) = embeddings.dims2()?;
    if n != labels.len() {
        return Err(Error::Data(format!("{n} embeddings but {} labels", labels.len())));
    }
    if classes < 2 || n < classes {
        return Err(Error::Data(format!(
            "probe needs at least 2 classes and one row per class, got {classes} classes and {n} rows"
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Data(format!(
            "probe training labels contain a single class ({})",
            labels[0]
        )));
    }

    let raw = embeddings.to_f64_vec();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for row in raw.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in raw.chunks(d) {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let x: Vec<f64> = raw
        .chunks(d)
        .flat_map(|row| row.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s))
        .collect();

    let c = classes;
    let size = d * c + c;
    let lipschitz = 0.5 * gram_spectral_norm(&x, n, d) * 1.05 + cfg.l2;
    let step = 1.0 / lipschitz;

    let mut rng = rng::stream(seed, Purpose::Probe, 0);
    let normal = Normal::new(0.0, 1e-3).expect("valid normal");
    let mut theta: Vec<f64> = (0..size).map(|_| normal.sample(&mut rng)).collect();
    let mut look = theta.clone();
    let mut grad = vec![0.0; size];
    let mut momentum_k = 0usize;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        objective(&x, labels, n, d, c, cfg.l2, &look, &mut grad);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !gnorm.is_finite() {
            return Err(Error::Numerical(format!("probe gradient is {gnorm} at iteration {it}")));
        }
        if gnorm < cfg.tol {
            theta.copy_from_slice(&look);
            converged = true;
            break;
        }
        let next: Vec<f64> = look.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
        let uphill: f64 = grad
            .iter()
            .zip(next.iter().zip(&theta))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        if uphill > 0.0 {
            momentum_k = 0;
        }
        let beta = momentum_k as f64 / (momentum_k as f64 + 3.0);
        momentum_k += 1;
        look = next.iter().zip(&theta).map(|(a, b)| a + beta * (a - b)).collect();
        theta = next;
    }

    let mut weight = vec![0.0; d * c];
    let mut bias = theta[d * c..].to_vec();
    for j in 0..d {
        for k in 0..c {
            let w = theta[j * c + k] / std[j];
            weight[j * c + k] = w;
            bias[k] -= mean[j] * w;
        }
    }
    Ok(ProbeModel {
        weight: Tensor::new(vec![d, c], weight)?,
        bias: Tensor::new(vec![c], bias)?,
        encoder_digest: None,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSource {
    /// A pretrained encoder.
    Lfr,
    /// Same architecture, untrained random parameters.
    RandomInit,
    /// No encoder; the probe sees the preprocessed features.
    RawFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of test rows whose arg-max class is correct.
    pub accuracy: f64,
    /// Accuracy restricted to each true class; null for absent classes.
    pub per_class: Vec<Option<f64>>,
    pub correct: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub encoder_source: EncoderSource,
    pub checkpoint_digest: Option<String>,
    pub probe_iterations: usize,
    pub probe_converged: bool,
}

/// Several probe seeds; `std` is the sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub runs: Vec<EvalReport>,
}

impl MultiSeedReport {
    pub fn from_runs(runs: Vec<EvalReport>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let std = if runs.len() > 1 {
            (runs.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean_accuracy: mean,
            std_accuracy: std,
            runs,
        }
    }
}

/// Fits a probe on `train` embeddings and scores it on `test` embeddings.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_embeddings<T: Scalar>(
    train_z: &Tensor<T>,
    train_labels: &[usize],
    test_z: &Tensor<T>,
    test_labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
    source: EncoderSource,
) -> Result<EvalReport> {
    if test_labels.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let probe = train_probe(train_z, train_labels, classes, cfg, seed)?;
    let predicted = probe.predict(test_z)?;
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(test_labels) {
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(EvalReport {
        accuracy: correct as f64 / test_labels.len() as f64,
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        correct,
        n_train: train_labels.len(),
        n_test: test_labels.len(),
        seed,
        encoder_source: source,
        checkpoint_digest: None,
        probe_iterations: probe.iterations,
        probe_converged: probe.converged,
    })
}

/// Embeds both splits with the frozen encoder, fits the probe on train and
/// reports test accuracy.
pub fn evaluate<T: Scalar>(
    encoder: &EncoderModel<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    cfg: &ProbeConfig,
    seed: u64,
    source: EncoderSource,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let train_z = embed_dataset(encoder, train)?;
    let test_z = embed_dataset(encoder, test)?;
    evaluate_embeddings(
        &train_z,
        &train.labels,
        &test_z,
        &test.labels,
        train.n_classes,
        cfg,
        seed,
        source,
    )
}

/// Probe on the preprocessed input features.
pub fn evaluate_raw<T: Scalar>(
    train: &Dataset<T>,
    test: &Dataset<T>,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_embeddings(
        &train.features,
        &train.labels,
        &test.features,
        &test.labels,
        train.n_classes,
        cfg,
        seed,
        EncoderSource::RawFeatures,
    )
}
