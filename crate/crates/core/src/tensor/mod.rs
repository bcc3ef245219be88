//! Dense row-major tensors and the define-by-run gradient tape.
//!
//! [`Tensor`] is a plain value: shape plus flat data. Differentiation happens
//! on a [`Tape`], which records operations on [`Var`] handles and replays them
//! backward. Reductions (norms, sums, losses) accumulate in `f64` regardless
//! of the element type.

mod tape;

pub use tape::{Gradients, Tape, Var};

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default guard for divisions by vector norms.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} holds {numel} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Contract(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend(row.iter().map(|&v| T::lit(v)));
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::Contract(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.data.len() / self.rows().max(1);
        &self.data[i * cols..(i + 1) * cols]
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let (rows, cols) = self.dims2()?;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Contract(format!("row index {i} out of range for {rows} rows")));
            }
            data.extend_from_slice(&self.data[i * cols..(i + 1) * cols]);
        }
        Self::new(vec![indices.len(), cols], data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        matmul_checked(self, rhs, false)
    }

    /// `self * rhsᵀ`.
    pub fn matmul_transposed(&self, rhs: &Self) -> Result<Self> {
        matmul_checked(self, rhs, true)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (rows, cols) = self.dims2()?;
        let mut data = vec![T::zero(); self.data.len()];
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = self.data[i * cols + j];
            }
        }
        Self::new(vec![cols, rows], data)
    }

    pub fn relu(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| relu(v)).collect(),
        }
    }

    pub fn add_row_bias(&self, bias: &Self) -> Result<Self> {
        let mut out = self.clone();
        add_row_bias_in_place(&mut out, bias)?;
        Ok(out)
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn row_l2_normalize(&self, eps: f64) -> Result<Self> {
        let (_, cols) = self.dims2()?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(cols.max(1)) {
            let scale = T::lit(1.0 / l2_norm(row).max(eps));
            row.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(out)
    }
}

#[inline]
/// NaN passes through so that a poisoned activation surfaces in the loss.
pub(crate) fn relu<T: Scalar>(v: T) -> T {
    if v < T::zero() {
        T::zero()
    } else {
        v
    }
}

pub(crate) fn l2_norm<T: Scalar>(row: &[T]) -> f64 {
    row.iter()
        .map(|v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn add_row_bias_in_place<T: Scalar>(x: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let (_, cols) = x.dims2()?;
    if bias.len() != cols || bias.shape.len() != 1 {
        return Err(Error::shape("add_row_bias", &x.shape, &bias.shape));
    }
    for row in x.data.chunks_mut(cols.max(1)) {
        for (v, &b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(())
}

fn matmul_checked<T: Scalar>(lhs: &Tensor<T>, rhs: &Tensor<T>, rhs_transposed: bool) -> Result<Tensor<T>> {
    let op = if rhs_transposed { "matmul_transposed" } else { "matmul" };
    let (m, p) = lhs.dims2().map_err(|_| Error::shape(op, &lhs.shape, &rhs.shape))?;
    let (r0, r1) = rhs.dims2().map_err(|_| Error::shape(op, &lhs.shape, &rhs.shape))?;
    let (inner, n) = if rhs_transposed { (r1, r0) } else { (r0, r1) };
    if inner != p {
        return Err(Error::shape(op, &lhs.shape, &rhs.shape));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        p,
        n,
        T::one(),
        &lhs.data,
        false,
        &rhs.data,
        rhs_transposed,
        T::zero(),
        &mut out,
    );
    Tensor::new(vec![m, n], out)
}
