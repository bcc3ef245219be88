use std::cell::RefCell;
use std::rc::Rc;

use super::{add_row_bias_in_place, l2_norm, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A define-by-run record of tensor operations.
///
/// Operations are appended in execution order, so every node's inputs have
/// smaller ids than the node itself and a reverse scan over ids is a reverse
/// topological order. [`Tape::backward`] consumes the record: afterwards the
/// tape is empty and starts a new generation, and handles from the old
/// generation become stale.
///
/// A tape is single-threaded by construction (it is `!Sync`).
pub struct Tape<T: Scalar> {
    inner: RefCell<Inner<T>>,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    generation: u64,
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

enum Op {
    Leaf,
    MatMul {
        lhs: usize,
        rhs: usize,
        rhs_transposed: bool,
    },
    AddRowBias {
        input: usize,
        bias: usize,
    },
    Relu {
        input: usize,
    },
    RowL2Normalize {
        input: usize,
        norms: Vec<f64>,
        eps: f64,
    },
    Sum {
        input: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    Add {
        lhs: usize,
        rhs: usize,
    },
    BbtPenalty {
        input: usize,
        lambda: f64,
    },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
    generation: u64,
}

/// Gradients produced by one backward pass, keyed by leaf variable.
#[derive(Debug)]
pub struct Gradients<T> {
    generation: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf that was registered with `requires_grad`.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                generation: 0,
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf that receives a gradient on backward.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
            generation: inner.generation,
        }
    }

    fn check(&self, var: &Var<'_, T>) -> Result<()> {
        let inner = self.inner.borrow();
        if !std::ptr::eq(var.tape, self) {
            return Err(Error::Contract("variable belongs to another tape".into()));
        }
        if var.generation != inner.generation || var.id >= inner.nodes.len() {
            return Err(Error::Contract(
                "stale variable: its tape was consumed by backward()".into(),
            ));
        }
        Ok(())
    }

    fn node_value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn node_requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Propagates gradients from a scalar `loss` to every leaf registered
    /// with `requires_grad`, then clears the tape.
    ///
    /// Leaves the loss does not depend on get an all-zero gradient.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        {
            let inner = self.inner.borrow();
            if inner.nodes.is_empty() {
                return Err(Error::Contract(
                    "backward() on an empty tape: record a new forward pass first".into(),
                ));
            }
        }
        self.check(&loss)?;
        let mut inner = self.inner.borrow_mut();
        let nodes = std::mem::take(&mut inner.nodes);
        let generation = inner.generation;
        inner.generation += 1;
        drop(inner);

        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    leaf_grads[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                op => backprop(op, node, &g, &nodes, &mut grads),
            }
        }

        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && leaf_grads[id].is_none() {
                leaf_grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            generation,
            grads: leaf_grads,
        })
    }
}

fn slot<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize) -> Option<&'g mut Vec<T>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backprop<T: Scalar>(op: &Op, node: &Node<T>, g: &[T], nodes: &[Node<T>], grads: &mut [Option<Vec<T>>]) {
    match *op {
        Op::Leaf => unreachable!(),
        Op::MatMul {
            lhs,
            rhs,
            rhs_transposed,
        } => {
            let a = &nodes[lhs].value;
            let b = &nodes[rhs].value;
            let (m, p) = (a.shape()[0], a.shape()[1]);
            let n = node.value.shape()[1];
            if let Some(da) = slot(grads, nodes, lhs) {
                // dA = G·Bᵀ (or G·B when the product used Bᵀ)
                T::gemm(m, n, p, T::one(), g, false, b.data(), !rhs_transposed, T::one(), da);
            }
            if let Some(db) = slot(grads, nodes, rhs) {
                if rhs_transposed {
                    // C = A·Bᵀ  =>  dB = Gᵀ·A
                    T::gemm(n, m, p, T::one(), g, true, a.data(), false, T::one(), db);
                } else {
                    // dB = Aᵀ·G
                    T::gemm(p, m, n, T::one(), a.data(), true, g, false, T::one(), db);
                }
            }
        }
        Op::AddRowBias { input, bias } => {
            let cols = node.value.shape()[1];
            if let Some(dx) = slot(grads, nodes, input) {
                dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
            if let Some(db) = slot(grads, nodes, bias) {
                let mut acc = vec![0.0f64; cols];
                for row in g.chunks(cols.max(1)) {
                    acc.iter_mut().zip(row).for_each(|(a, v)| *a += v.as_f64());
                }
                db.iter_mut().zip(acc).for_each(|(d, a)| *d += T::lit(a));
            }
        }
        Op::Relu { input } => {
            if let Some(dx) = slot(grads, nodes, input) {
                let y = node.value.data();
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                    if yv > T::zero() {
                        *d += gv;
                    }
                }
            }
        }
        Op::RowL2Normalize { input, ref norms, eps } => {
            let cols = node.value.shape()[1].max(1);
            let y = node.value.data();
            if let Some(dx) = slot(grads, nodes, input) {
                for (i, &norm) in norms.iter().enumerate() {
                    let range = i * cols..(i + 1) * cols;
                    let (yr, gr, dr) = (&y[range.clone()], &g[range.clone()], &mut dx[range]);
                    if norm > eps {
                        // d(x/‖x‖) = (g − y·⟨y, g⟩) / ‖x‖
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += T::lit((gv.as_f64() - yv.as_f64() * dot) / norm);
                        }
                    } else {
                        for (d, &gv) in dr.iter_mut().zip(gr) {
                            *d += T::lit(gv.as_f64() / eps);
                        }
                    }
                }
            }
        }
        Op::Sum { input } => {
            if let Some(dx) = slot(grads, nodes, input) {
                let g0 = g[0];
                dx.iter_mut().for_each(|d| *d += g0);
            }
        }
        Op::Scale { input, factor } => {
            if let Some(dx) = slot(grads, nodes, input) {
                let f = T::lit(factor);
                dx.iter_mut().zip(g).for_each(|(d, &v)| *d += f * v);
            }
        }
        Op::Add { lhs, rhs } => {
            for id in [lhs, rhs] {
                if let Some(dx) = slot(grads, nodes, id) {
                    dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
            }
        }
        Op::BbtPenalty { input, lambda } => {
            let c = &nodes[input].value;
            let m = c.shape()[0];
            let g0 = g[0].as_f64();
            if let Some(dc) = slot(grads, nodes, input) {
                for i in 0..m {
                    for j in 0..m {
                        let v = c.data()[i * m + j].as_f64();
                        let d = if i == j { -2.0 * (1.0 - v) } else { 2.0 * lambda * v };
                        dc[i * m + j] += T::lit(d * g0);
                    }
                }
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Forward value.
    ///
    /// # Panics
    /// If the tape has been consumed by `backward()` since this handle was
    /// created.
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.check(self).expect("value() on a stale variable");
        self.tape.node_value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.node_requires_grad(self.id)
    }

    fn unary(&self, value: Tensor<T>, op: Op) -> Var<'t, T> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.product(rhs, false)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_transposed(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.product(rhs, true)
    }

    fn product(self, rhs: Var<'t, T>, rhs_transposed: bool) -> Result<Var<'t, T>> {
        self.tape.check(&self)?;
        self.tape.check(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        let value = if rhs_transposed {
            a.matmul_transposed(&b)?
        } else {
            a.matmul(&b)?
        };
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(
            value,
            Op::MatMul {
                lhs: self.id,
                rhs: rhs.id,
                rhs_transposed,
            },
            rg,
        ))
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_row_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check(&self)?;
        self.tape.check(&bias)?;
        let mut value = (*self.value()).clone();
        add_row_bias_in_place(&mut value, &bias.value())?;
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            value,
            Op::AddRowBias {
                input: self.id,
                bias: bias.id,
            },
            rg,
        ))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(self) -> Result<Var<'t, T>> {
        self.tape.check(&self)?;
        let value = self.value().relu();
        Ok(self.unary(value, Op::Relu { input: self.id }))
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn row_l2_normalize(self, eps: f64) -> Result<Var<'t, T>> {
        self.tape.check(&self)?;
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("normalization eps must be > 0, got {eps}")));
        }
        let x = self.value();
        let (_, cols) = x.dims2()?;
        let mut out = (*x).clone();
        let mut norms = Vec::with_capacity(x.rows());
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let norm = l2_norm(row);
            let scale = T::lit(1.0 / norm.max(eps));
            row.iter_mut().for_each(|v| *v *= scale);
            norms.push(norm);
        }
        Ok(self.unary(
            out,
            Op::RowL2Normalize {
                input: self.id,
                norms,
                eps,
            },
        ))
    }

    /// Sum of all entries, accumulated in `f64`.
    pub fn sum(self) -> Result<Var<'t, T>> {
        self.tape.check(&self)?;
        let value = Tensor::scalar(T::lit(self.value().sum_f64()));
        Ok(self.unary(value, Op::Sum { input: self.id }))
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t, T>> {
        self.tape.check(&self)?;
        let x = self.value();
        let f = T::lit(factor);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * f).collect())?;
        Ok(self.unary(value, Op::Scale { input: self.id, factor }))
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check(&self)?;
        self.tape.check(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        if a.shape() != b.shape() {
            return Err(Error::shape("add", a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(
            value,
            Op::Add {
                lhs: self.id,
                rhs: rhs.id,
            },
            rg,
        ))
    }

    /// `Σᵢ (1 − cᵢᵢ)² + λ Σ_{i≠j} cᵢⱼ²` over a square matrix, accumulated in `f64`.
    pub fn bbt_penalty(self, lambda: f64) -> Result<Var<'t, T>> {
        self.tape.check(&self)?;
        let c = self.value();
        let (m, n) = c.dims2()?;
        if m != n {
            return Err(Error::shape("bbt_penalty", c.shape(), &[m, m]));
        }
        let mut on_diag = 0.0f64;
        let mut off_diag = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let v = c.data()[i * m + j].as_f64();
                if i == j {
                    on_diag += (1.0 - v) * (1.0 - v);
                } else {
                    off_diag += v * v;
                }
            }
        }
        let value = Tensor::scalar(T::lit(on_diag + lambda * off_diag));
        Ok(self.unary(value, Op::BbtPenalty { input: self.id, lambda }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_subgradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64(&[2], &[-1.0, 2.0]).unwrap());
        let loss = x.relu().unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn unused_parameter_gets_exact_zero_gradient() {
        let tape = Tape::<f32>::new();
        let x = tape.param(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let unused = tape.param(Tensor::from_f64(&[3], &[1.0, 1.0, 1.0]).unwrap());
        let loss = x.sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn second_backward_without_forward_fails() {
        let tape = Tape::<f32>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let loss = x.scale(2.0).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.is_empty());
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(&[2, 2]));
        let y = x.relu().unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let tape = Tape::<f64>::new();
        let w = tape.param(Tensor::from_f64(&[2, 1], &[1.0, -1.0]).unwrap());
        let x = tape.constant(Tensor::from_f64(&[1, 2], &[2.0, 3.0]).unwrap());
        let loss = x.matmul(w).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn tape_is_reusable_after_backward() {
        let tape = Tape::<f64>::new();
        let a = tape.param(Tensor::scalar(1.5));
        tape.backward(a.scale(3.0).unwrap()).unwrap();
        let b = tape.param(Tensor::scalar(1.5));
        let grads = tape.backward(b.scale(-2.0).unwrap()).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[-2.0]);
        assert!(grads.get(a).is_none());
    }
}
