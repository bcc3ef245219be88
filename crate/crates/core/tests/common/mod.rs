//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use lfr::bbt::{bbt_loss, cosine_matrix, BbtConfig};
use lfr::nn::{Activation, EncoderModel, Mlp, PredictorModel};
use lfr::rng::{self, Purpose};
use lfr::{Tape, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-4;
/// Draws whose ReLU pre-activations come this close to the kink are
/// redrawn: central differences are meaningless across it.
const KINK_MARGIN: f64 = 1e-2;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Central differences of `f` with respect to every element of `x`.
fn central_diff(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = x.clone();
            minus.data_mut()[i] -= FD_STEP;
            (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn near_kink(mlp: &Mlp<f64>, x: &Tensor<f64>) -> bool {
    let mut h = x.clone();
    for layer in mlp.layers() {
        let pre = h.matmul(&layer.weight).unwrap().add_row_bias(&layer.bias).unwrap();
        if layer.activation == Activation::Relu && pre.data().iter().any(|v| v.abs() < KINK_MARGIN) {
            return true;
        }
        h = layer.forward(&h).unwrap();
    }
    false
}

/// Weight of the off-diagonal terms in the probe losses below.
const PROBE_LAMBDA: f64 = 0.5;

/// `Σᵢ (1 − cᵢᵢ)² + λ Σ_{i≠j} cᵢⱼ²` for a row-major `m × m` matrix.
pub fn penalty_oracle(c: &[f64], m: usize, lambda: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let v = c[i * m + j];
            total += if i == j { (1.0 - v) * (1.0 - v) } else { lambda * v * v };
        }
    }
    total
}

/// `cᵢⱼ = ⟨yᵢ, ŷⱼ⟩ / (‖yᵢ‖ ‖ŷⱼ‖)`, computed directly.
pub fn cosine_oracle(y: &Tensor<f64>, yhat: &Tensor<f64>) -> Vec<f64> {
    let (m, d) = y.dims2().unwrap();
    let row = |t: &Tensor<f64>, i: usize| t.data()[i * d..(i + 1) * d].to_vec();
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let (a, b) = (row(y, i), row(yhat, j));
            c[i * m + j] = a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / (norm(&a) * norm(&b));
        }
    }
    c
}

/// The network check loss: `penalty(out · Gᵀ)`, nonlinear so the upstream
/// gradient has full rank.
fn probe_loss(out: &Tensor<f64>, g: &Tensor<f64>) -> f64 {
    let (m, d) = out.dims2().unwrap();
    let mut p = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            p[i * m + j] = (0..d).map(|t| out.data()[i * d + t] * g.data()[j * d + t]).sum();
        }
    }
    penalty_oracle(&p, m, PROBE_LAMBDA)
}

/// Worst relative error over the parameters of `mlp` for
/// `probe_loss(mlp(x), g)`.
fn mlp_check(mlp: &Mlp<f64>, x: &Tensor<f64>, g: &Tensor<f64>) -> f64 {
    let tape = Tape::new();
    let bound = mlp.bind(&tape, true);
    let out = bound.forward(tape.constant(x.clone())).unwrap();
    let loss = out
        .matmul_transposed(tape.constant(g.clone()))
        .unwrap()
        .bbt_penalty(PROBE_LAMBDA)
        .unwrap();
    let params = bound.params();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (p, var) in params.iter().enumerate() {
        let analytic = grads.get(*var).unwrap().data().to_vec();
        let numeric = central_diff(mlp.params()[p], |perturbed| {
            let mut copy = mlp.clone();
            *copy.params_mut()[p] = perturbed.clone();
            probe_loss(&copy.forward(x).unwrap(), g)
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn dims(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Relative errors of the encoder gradient check on `configs` random
/// architectures and inputs.
pub fn encoder_gradient_errors(configs: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut draw = 0u64;
    while out.len() < configs {
        draw += 1;
        let mut rng = rng::stream(draw, Purpose::Synthetic, 100);
        let input = dims(&mut rng, 2, 6);
        let hidden: Vec<usize> = (0..dims(&mut rng, 1, 3)).map(|_| dims(&mut rng, 2, 7)).collect();
        let latent = dims(&mut rng, 2, 5);
        let m = dims(&mut rng, 2, 5);
        let enc = EncoderModel::<f64>::new(input, &hidden, latent, draw, 0).unwrap();
        let x = randn(&mut rng, &[m, input]);
        if near_kink(enc.mlp(), &x) {
            continue;
        }
        let g = randn(&mut rng, &[m, latent]);
        out.push(mlp_check(enc.mlp(), &x, &g));
    }
    out
}

pub fn predictor_gradient_errors(configs: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut draw = 0u64;
    while out.len() < configs {
        draw += 1;
        let mut rng = rng::stream(draw, Purpose::Synthetic, 200);
        let latent = dims(&mut rng, 2, 6);
        let hidden = if draw % 2 == 0 { 0 } else { dims(&mut rng, 2, 6) };
        let output = dims(&mut rng, 2, 5);
        let m = dims(&mut rng, 2, 5);
        let pred = PredictorModel::<f64>::new(latent, hidden, output, draw, 0).unwrap();
        let z = randn(&mut rng, &[m, latent]);
        if near_kink(pred.mlp(), &z) {
            continue;
        }
        let g = randn(&mut rng, &[m, output]);
        out.push(mlp_check(pred.mlp(), &z, &g));
    }
    out
}

/// Gradient of `penalty(C(y, ŷ))` with respect to both `y` and `ŷ`.
pub fn cosine_gradient_errors(configs: usize) -> Vec<f64> {
    (1..=configs as u64)
        .map(|draw| {
            let mut rng = rng::stream(draw, Purpose::Synthetic, 300);
            let m = dims(&mut rng, 2, 6);
            let d = dims(&mut rng, 2, 6);
            let y = randn(&mut rng, &[m, d]);
            let yhat = randn(&mut rng, &[m, d]);
            let value = |y: &Tensor<f64>, yhat: &Tensor<f64>| penalty_oracle(&cosine_oracle(y, yhat), m, PROBE_LAMBDA);
            let tape = Tape::new();
            let (vy, vyh) = (tape.param(y.clone()), tape.param(yhat.clone()));
            let c = cosine_matrix(vy, vyh, 1e-12).unwrap();
            let loss = c.bbt_penalty(PROBE_LAMBDA).unwrap();
            let grads = tape.backward(loss).unwrap();
            let gy = grads.get(vy).unwrap().data().to_vec();
            let gyh = grads.get(vyh).unwrap().data().to_vec();
            let ny = central_diff(&y, |p| value(p, &yhat));
            let nyh = central_diff(&yhat, |p| value(&y, p));
            rel_err(&gy, &ny).max(rel_err(&gyh, &nyh))
        })
        .collect()
}

/// Gradient of the summed loss over random `(K, m, d)` and λ with respect
/// to predictor and projector outputs.
pub fn bbt_gradient_errors(configs: usize) -> Vec<f64> {
    (1..=configs as u64)
        .map(|draw| {
            let mut rng = rng::stream(draw, Purpose::Synthetic, 400);
            let k = dims(&mut rng, 1, 4);
            let m = dims(&mut rng, 2, 6);
            let d = dims(&mut rng, 2, 6);
            let cfg = BbtConfig::with_lambda(if draw % 2 == 0 {
                0.005
            } else {
                rng.random_range(0.0..1.0)
            });
            let ys: Vec<_> = (0..k).map(|_| randn(&mut rng, &[m, d])).collect();
            let yhats: Vec<_> = (0..k).map(|_| randn(&mut rng, &[m, d])).collect();
            let tape = Tape::new();
            let vys: Vec<_> = ys.iter().map(|t| tape.param(t.clone())).collect();
            let vyhs: Vec<_> = yhats.iter().map(|t| tape.param(t.clone())).collect();
            let loss = bbt_loss(&vys, &vyhs, &cfg).unwrap();
            let grads = tape.backward(loss).unwrap();
            let mut worst: f64 = 0.0;
            for j in 0..k {
                let analytic_hat = grads.get(vyhs[j]).unwrap().data().to_vec();
                let numeric_hat = central_diff(&yhats[j], |p| {
                    let mut v = yhats.clone();
                    v[j] = p.clone();
                    bbt_oracle(&ys, &v, cfg.lambda_offdiag)
                });
                let analytic_y = grads.get(vys[j]).unwrap().data().to_vec();
                let numeric_y = central_diff(&ys[j], |p| {
                    let mut v = ys.clone();
                    v[j] = p.clone();
                    bbt_oracle(&v, &yhats, cfg.lambda_offdiag)
                });
                worst = worst
                    .max(rel_err(&analytic_hat, &numeric_hat))
                    .max(rel_err(&analytic_y, &numeric_y));
            }
            worst
        })
        .collect()
}

pub fn bbt_oracle(ys: &[Tensor<f64>], yhats: &[Tensor<f64>], lambda: f64) -> f64 {
    ys.iter()
        .zip(yhats)
        .map(|(y, yh)| penalty_oracle(&cosine_oracle(y, yh), y.rows(), lambda))
        .sum()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det_oracle(mut a: Vec<f64>, n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for t in 0..n {
                a.swap(pivot * n + t, col * n + t);
            }
            det = -det;
        }
        det *= a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for t in col..n {
                a[r * n + t] -= f * a[col * n + t];
            }
        }
    }
    det
}

/// `|det|` of the Gram matrix of the chosen vectors.
pub fn gram_det(vectors: &[Vec<f64>], chosen: &[usize]) -> f64 {
    let k = chosen.len();
    let mut g = vec![0.0; k * k];
    for (a, &i) in chosen.iter().enumerate() {
        for (b, &j) in chosen.iter().enumerate() {
            g[a * k + b] = vectors[i].iter().zip(&vectors[j]).map(|(p, q)| p * q).sum();
        }
    }
    det_oracle(g, k).abs()
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut with_last = subsets(n - 1, k - 1);
    for s in &mut with_last {
        s.push(n - 1);
    }
    let mut all = subsets(n - 1, k);
    all.extend(with_last);
    all
}

/// Index set maximizing `|det|`, enumerated independently of the library.
pub fn exhaustive_oracle(vectors: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for s in subsets(vectors.len(), k) {
        let d = gram_det(vectors, &s);
        if d > best.0 {
            best = (d, s);
        }
    }
    let mut chosen = best.1;
    chosen.sort_unstable();
    chosen
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// `k` orthonormal vectors among `n − k` near-duplicates of them (cosine
/// ≥ 0.99 to one member), in shuffled positions unless `orthogonal_first`.
/// Returns the vectors and the positions of the orthonormal members,
/// ascending.
pub fn planted_instance(
    seed: u64,
    n: usize,
    k: usize,
    dim: usize,
    orthogonal_first: bool,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng::stream(seed, Purpose::Synthetic, 600);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        basis.push(unit(v));
    }
    let mut items: Vec<(Vec<f64>, bool)> = basis.iter().map(|b| (b.clone(), true)).collect();
    while items.len() < n {
        let o = &basis[rng.random_range(0..k)];
        let noise: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let scale = rng.random_range(0.01..0.1) / norm(&noise);
        let v = unit(o.iter().zip(&noise).map(|(a, e)| a + scale * e).collect());
        let cos: f64 = v.iter().zip(o).map(|(x, y)| x * y).sum();
        assert!(cos >= 0.99);
        items.push((v, false));
    }
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        if !orthogonal_first {
            items.swap(i, j);
        }
    }
    let planted = items
        .iter()
        .enumerate()
        .filter(|(_, (_, p))| *p)
        .map(|(i, _)| i)
        .collect();
    (items.into_iter().map(|(v, _)| v).collect(), planted)
}

/// Signatures of `n` candidates whose outputs on an `m`-row probe batch are
/// independent Gaussian `m × p` matrices: the flattened row-cosine Gram.
pub fn gaussian_output_signatures(seed: u64, n: usize, m: usize, p: usize) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, Purpose::Synthetic, 700);
    (0..n)
        .map(|_| {
            let y = randn(&mut rng, &[m, p]);
            unit(cosine_oracle(&y, &y))
        })
        .collect()
}

pub fn to_signatures(vectors: &[Vec<f64>]) -> Vec<lfr::diversity::ProjectorSignature> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| lfr::diversity::ProjectorSignature::from_vector(v.clone(), i, 0).unwrap())
        .collect()
}
