//! Diversity-driven projector selection.
//!
//! Each candidate projector is summarized by a signature: its row-normalized
//! outputs on a shared probe batch give an `m × m` cosine Gram matrix, which
//! is flattened and scaled to unit length. `K` candidates are then chosen to
//! maximize `det(ÃÃᵀ)` over their stacked signatures `Ã`.
//!
//! [`select_diverse`] runs the greedy MAP approximation (each step adds the
//! candidate with the largest residual after projecting out the already
//! chosen signatures, which multiplies the determinant by the squared
//! residual norm) followed by single-swap local search. [`exhaustive_select`]
//! enumerates every subset and serves as the reference for small `N`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ProjectorModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Residual norms below this make the selected Gram matrix singular.
pub const SINGULAR_RESIDUAL: f64 = 1e-10;

/// Largest number of subsets [`exhaustive_select`] will enumerate.
pub const EXHAUSTIVE_BUDGET: u128 = 1_000_000;

const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorSignature {
    /// Unit-norm flattened cosine Gram matrix, length `m²`.
    pub vector: Vec<f64>,
    pub projector_index: usize,
    pub probe_batch_hash: u64,
}

impl ProjectorSignature {
    /// Wraps an arbitrary vector, normalizing it to unit length.
    pub fn from_vector(vector: Vec<f64>, projector_index: usize, probe_batch_hash: u64) -> Result<Self> {
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateSignature { index: projector_index });
        }
        Ok(Self {
            vector: vector.into_iter().map(|v| v / norm).collect(),
            projector_index,
            probe_batch_hash,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Chosen projector indices, ascending.
    pub chosen_indices: Vec<usize>,
    /// The same indices in the order the greedy pass added them.
    pub greedy_order: Vec<usize>,
    /// `log det(B)` of the chosen set; `-inf` when it is singular.
    #[serde(with = "log_det_serde")]
    pub log_det: f64,
    pub candidate_count: usize,
    /// Set when every remaining candidate was numerically dependent and slots
    /// were filled by lowest index.
    pub singular: bool,
    /// Local-search swaps applied after the greedy pass.
    pub swaps: usize,
}

// JSON has no infinities; a singular selection is written as null.
mod log_det_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Signature of one projector on `probe_batch`.
pub fn compute_signature<T: Scalar>(
    projector: &ProjectorModel<T>,
    projector_index: usize,
    probe_batch: &Tensor<T>,
    eps: f64,
) -> Result<ProjectorSignature> {
    let (m, _) = probe_batch.dims2()?;
    if m < 2 {
        return Err(Error::Contract(format!("probe batch needs at least 2 rows, got {m}")));
    }
    let y = projector.forward(probe_batch)?.row_l2_normalize(eps)?;
    let gram = y.matmul_transposed(&y)?;
    let vector = gram.to_f64_vec();
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateSignature { index: projector_index });
    }
    Ok(ProjectorSignature {
        vector: vector.into_iter().map(|v| v / norm).collect(),
        projector_index,
        probe_batch_hash: crate::digest::tensor_u64(probe_batch),
    })
}

/// Signatures for every candidate; degenerate candidates are skipped with a
/// warning and reported by index.
pub fn compute_signatures<T: Scalar>(
    candidates: &[ProjectorModel<T>],
    probe_batch: &Tensor<T>,
    eps: f64,
) -> Result<(Vec<ProjectorSignature>, Vec<usize>)> {
    let mut signatures = Vec::with_capacity(candidates.len());
    let mut discarded = Vec::new();
    for (i, p) in candidates.iter().enumerate() {
        match compute_signature(p, i, probe_batch, eps) {
            Ok(s) => signatures.push(s),
            Err(Error::DegenerateSignature { index }) => {
                warn!("discarding candidate projector {index}: zero output on the probe batch");
                discarded.push(index);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((signatures, discarded))
}

fn validate(signatures: &[ProjectorSignature], k: usize) -> Result<Vec<&ProjectorSignature>> {
    if k == 0 || k > signatures.len() {
        return Err(Error::Contract(format!(
            "cannot select {k} projectors from {} candidates",
            signatures.len()
        )));
    }
    let first = &signatures[0];
    for s in signatures {
        if s.vector.len() != first.vector.len() {
            return Err(Error::Contract(format!(
                "signature {} has length {}, expected {}",
                s.projector_index,
                s.vector.len(),
                first.vector.len()
            )));
        }
        if s.probe_batch_hash != first.probe_batch_hash {
            return Err(Error::Contract(
                "signatures were computed on different probe batches".into(),
            ));
        }
    }
    let mut sorted: Vec<&ProjectorSignature> = signatures.iter().collect();
    sorted.sort_by_key(|s| s.projector_index);
    if sorted.windows(2).any(|w| w[0].projector_index == w[1].projector_index) {
        return Err(Error::Contract("duplicate projector index among signatures".into()));
    }
    Ok(sorted)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gram(sorted: &[&ProjectorSignature]) -> Vec<f64> {
    let n = sorted.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(&sorted[i].vector, &sorted[j].vector);
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// `log |det|` of a square row-major matrix by LU with partial pivoting.
pub fn log_abs_det(matrix: &[f64], size: usize) -> f64 {
    assert_eq!(matrix.len(), size * size);
    let mut a = matrix.to_vec();
    let mut log_det = 0.0;
    for col in 0..size {
        let pivot = (col..size)
            .max_by(|&i, &j| a[i * size + col].abs().total_cmp(&a[j * size + col].abs()))
            .expect("non-empty range");
        let p = a[pivot * size + col];
        if p == 0.0 || !p.is_finite() {
            return f64::NEG_INFINITY;
        }
        if pivot != col {
            for j in 0..size {
                a.swap(col * size + j, pivot * size + j);
            }
        }
        log_det += p.abs().ln();
        for row in col + 1..size {
            let f = a[row * size + col] / p;
            if f != 0.0 {
                for j in col..size {
                    a[row * size + j] -= f * a[col * size + j];
                }
            }
        }
    }
    log_det
}

fn subset_log_det(g: &[f64], n: usize, subset: &[usize]) -> f64 {
    let k = subset.len();
    let mut sub = vec![0.0; k * k];
    for (a, &i) in subset.iter().enumerate() {
        for (b, &j) in subset.iter().enumerate() {
            sub[a * k + b] = g[i * n + j];
        }
    }
    log_abs_det(&sub, k)
}

fn improves(candidate: f64, incumbent: f64) -> bool {
    if incumbent == f64::NEG_INFINITY {
        return candidate > f64::NEG_INFINITY;
    }
    candidate > incumbent + TIE_TOLERANCE * incumbent.abs().max(1.0)
}

/// Greedy determinant maximization plus single-swap refinement.
///
/// Candidates are visited in ascending `projector_index` order regardless of
/// how they are passed in, and a later candidate only displaces an earlier
/// one when it is better beyond a relative tolerance of `1e-12`, so ties go
/// to the lowest index.
pub fn select_diverse(signatures: &[ProjectorSignature], k: usize) -> Result<SelectionResult> {
    let sorted = validate(signatures, k)?;
    let n = sorted.len();

    let mut residuals: Vec<Vec<f64>> = sorted.iter().map(|s| s.vector.clone()).collect();
    let mut scores: Vec<f64> = residuals.iter().map(|r| dot(r, r)).collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut singular = false;

    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            match best {
                None => best = Some(i),
                Some(b) if scores[i] > scores[b] * (1.0 + TIE_TOLERANCE) => best = Some(i),
                _ => {}
            }
        }
        let b = best.expect("k <= n leaves a candidate");
        if scores[b].sqrt() < SINGULAR_RESIDUAL {
            singular = true;
            for i in 0..n {
                if chosen.len() == k {
                    break;
                }
                if !taken[i] {
                    taken[i] = true;
                    chosen.push(i);
                }
            }
            break;
        }
        taken[b] = true;
        chosen.push(b);
        let norm = scores[b].sqrt();
        let q: Vec<f64> = residuals[b].iter().map(|v| v / norm).collect();
        for i in (0..n).filter(|&i| !taken[i]) {
            let proj = dot(&residuals[i], &q);
            residuals[i].iter_mut().zip(&q).for_each(|(r, qv)| *r -= proj * qv);
            scores[i] = dot(&residuals[i], &residuals[i]);
        }
    }
    let greedy_order: Vec<usize> = chosen.iter().map(|&i| sorted[i].projector_index).collect();

    let g = gram(&sorted);
    let mut swaps = 0;
    let mut log_det = subset_log_det(&g, n, &chosen);
    if !singular {
        // Single-swap local search: accept the best improving exchange until
        // none improves. Bounded because every accepted swap strictly
        // increases the determinant.
        loop {
            let mut best_swap: Option<(usize, usize, f64)> = None;
            for slot in 0..k {
                for cand in (0..n).filter(|&c| !chosen.contains(&c)) {
                    let mut trial = chosen.clone();
                    trial[slot] = cand;
                    let v = subset_log_det(&g, n, &trial);
                    let incumbent = best_swap.map_or(log_det, |(_, _, bv)| bv);
                    if improves(v, incumbent) {
                        best_swap = Some((slot, cand, v));
                    }
                }
            }
            match best_swap {
                Some((slot, cand, v)) => {
                    chosen[slot] = cand;
                    log_det = v;
                    swaps += 1;
                }
                None => break,
            }
        }
    } else {
        log_det = f64::NEG_INFINITY;
    }

    let mut chosen_indices: Vec<usize> = chosen.iter().map(|&i| sorted[i].projector_index).collect();
    chosen_indices.sort_unstable();
    Ok(SelectionResult {
        chosen_indices,
        greedy_order,
        log_det,
        candidate_count: n,
        singular,
        swaps,
    })
}

/// `C(n, k)`; once the running product passes a thousand times the
/// exhaustive budget the partial (smaller) value is returned, which is
/// enough for budget checks.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > EXHAUSTIVE_BUDGET * 1000 {
            return acc;
        }
    }
    acc
}

/// Exact argmax of `|det(B)|` by enumerating every `K`-subset in
/// lexicographic order of projector index; the first maximizer wins ties.
pub fn exhaustive_select(signatures: &[ProjectorSignature], k: usize) -> Result<SelectionResult> {
    let sorted = validate(signatures, k)?;
    let n = sorted.len();
    let count = binomial(n, k);
    if count > EXHAUSTIVE_BUDGET {
        return Err(Error::Contract(format!(
            "exhaustive selection of {k} from {n} needs {count} subsets, budget is {EXHAUSTIVE_BUDGET}"
        )));
    }
    let g = gram(&sorted);
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best_subset = subset.clone();
    let mut best = f64::NEG_INFINITY;
    let mut first = true;
    loop {
        let v = subset_log_det(&g, n, &subset);
        if first || improves(v, best) {
            best = v;
            best_subset.clone_from(&subset);
            first = false;
        }
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                let chosen_indices: Vec<usize> = best_subset.iter().map(|&i| sorted[i].projector_index).collect();
                return Ok(SelectionResult {
                    greedy_order: chosen_indices.clone(),
                    chosen_indices,
                    log_det: best,
                    candidate_count: n,
                    singular: best == f64::NEG_INFINITY,
                    swaps: 0,
                });
            }
            i -= 1;
            if subset[i] < n - k + i {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// `log det` of the Gram matrix of the given projector indices.
pub fn log_det_of(signatures: &[ProjectorSignature], indices: &[usize]) -> Result<f64> {
    let picked: Vec<&ProjectorSignature> = indices
        .iter()
        .map(|&i| {
            signatures
                .iter()
                .find(|s| s.projector_index == i)
                .ok_or_else(|| Error::Contract(format!("no signature for projector {i}")))
        })
        .collect::<Result<_>>()?;
    let g = gram(&picked);
    Ok(log_abs_det(&g, picked.len()))
}

/// Pairwise signature cosines among the given projector indices.
pub fn signature_cosines(signatures: &[ProjectorSignature], indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    let picked: Vec<&ProjectorSignature> = indices
        .iter()
        .map(|&i| {
            signatures
                .iter()
                .find(|s| s.projector_index == i)
                .ok_or_else(|| Error::Contract(format!("no signature for projector {i}")))
        })
        .collect::<Result<_>>()?;
    Ok(picked
        .iter()
        .map(|a| picked.iter().map(|b| dot(&a.vector, &b.vector)).collect())
        .collect())
}
