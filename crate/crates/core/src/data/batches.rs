use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One mini-batch: the source row indices and their features and labels.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub indices: Vec<usize>,
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Splits a seeded permutation of `0..n` into batches.
///
/// The permutation is a Fisher–Yates shuffle driven by the
/// `(seed, Shuffle, epoch)` stream. A trailing partial batch of at most half
/// the batch size is merged into the previous batch, otherwise it is kept
/// (or dropped with `drop_last`); for `batch_size >= 2` no batch ever has
/// fewer than two rows.
pub fn plan_batches(n: usize, batch_size: usize, seed: u64, epoch: u64, drop_last: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::config(format!("batch_size must be >= 2, got {batch_size}")));
    }
    if batch_size > n {
        return Err(Error::config(format!(
            "batch_size {batch_size} exceeds the {n} available rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::Shuffle, epoch));
    let mut plan: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let tail = n % batch_size;
    if tail != 0 {
        if drop_last {
            plan.pop();
        } else if 2 * tail <= batch_size {
            let last = plan.pop().expect("tail batch");
            plan.last_mut().expect("n >= batch_size").extend(last);
        }
    }
    Ok(plan)
}

pub struct BatchIterator<'a, T> {
    dataset: &'a Dataset<T>,
    plan: std::vec::IntoIter<Vec<usize>>,
    sizes: Vec<usize>,
}

impl<T> BatchIterator<'_, T> {
    pub fn batch_sizes(&self) -> &[usize] {
        &self.sizes
    }
}

impl<T: Scalar> Iterator for BatchIterator<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        let indices = self.plan.next()?;
        let features = self
            .dataset
            .features
            .select_rows(&indices)
            .expect("planned indices are in range");
        let labels = indices.iter().map(|&i| self.dataset.labels[i]).collect();
        Some(Batch {
            indices,
            features,
            labels,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.plan.size_hint()
    }
}

impl<T: Scalar> ExactSizeIterator for BatchIterator<'_, T> {}

pub fn batches<T: Scalar>(ds: &Dataset<T>, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchIterator<'_, T>> {
    let plan = plan_batches(ds.len(), batch_size, seed, epoch, false)?;
    let sizes = plan.iter().map(Vec::len).collect();
    Ok(BatchIterator {
        dataset: ds,
        plan: plan.into_iter(),
        sizes,
    })
}
