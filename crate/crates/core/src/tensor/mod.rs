//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major array plus, when it was produced by
//! a differentiable operation, a handle into the graph that produced it.
//! Calling [`Tensor::backward`] on a scalar walks that graph in reverse
//! topological order and accumulates gradients into every tensor created with
//! `requires_grad`.
//!
//! Values are immutable once produced; operations are pure and safe to call
//! concurrently on distinct graphs. A single graph's backward pass is
//! single-threaded and reduces in a fixed order, so results are
//! deterministic bit-for-bit for a given seed and platform.
//!
//! Any non-finite value appearing in a forward result or a gradient is
//! reported as an error instead of propagating.

mod conv;
mod linear;
mod loss;
mod norm;
mod pool;
mod unary;

pub use conv::conv_out_extent;
pub use loss::{cross_entropy, mae_mean, mse_mean, mse_sum};
pub use norm::{batchnorm2d, BatchNormMode, RunningStats};

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use thiserror::Error;

use crate::element::Element;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("{op}: {msg}")]
    InvalidArg { op: &'static str, msg: String },
    #[error("{op}: non-finite value produced; step aborted")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {0}")]
    NonScalarLoss(String),
    #[error("backward: gradient already present; run forward again before a second backward")]
    BackwardAlreadyRun,
    #[error("{op}: class index {index} out of range for {classes} classes")]
    ClassOutOfRange {
        op: &'static str,
        index: usize,
        classes: usize,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    let mut s = String::new();
    for (i, d) in shape.iter().enumerate() {
        if i > 0 {
            s.push('x');
        }
        s.push_str(&format!("{d}"));
    }
    if shape.is_empty() {
        s.push_str("scalar");
    }
    s
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct BackwardArgs<'a, T: Element> {
    pub out_data: &'a [T],
    pub out_grad: &'a [T],
    pub parents: &'a [Tensor<T>],
}

type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Result<()>>;

struct Inner<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
    op: &'static str,
}

/// Dense N-dimensional array in row-major order.
///
/// Cloning is cheap: tensors share their storage through a reference count.
pub struct Tensor<T: Element> {
    inner: Rc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> core::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "Tensor<{}>(shape={}, op={})",
            T::DTYPE.as_str(),
            fmt_shape(&self.inner.shape),
            self.inner.op
        )
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn new_inner(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
        op: &'static str,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
                op,
            }),
        }
    }

    /// Leaf tensor from raw data. Errors when `shape` does not match the
    /// data length or the data contains non-finite values.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: fmt_shape(shape),
                right: format!("{} elements", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Self::new_inner(
            shape.to_vec(),
            data,
            false,
            Vec::new(),
            None,
            "leaf",
        ))
    }

    pub fn scalar(v: T) -> Self {
        Self::new_inner(vec![1], vec![v], false, Vec::new(), None, "leaf")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_inner(
            shape.to_vec(),
            vec![T::zero(); numel(shape)],
            false,
            Vec::new(),
            None,
            "leaf",
        )
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::new_inner(
            shape.to_vec(),
            vec![T::one(); numel(shape)],
            false,
            Vec::new(),
            None,
            "leaf",
        )
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::new_inner(
            shape.to_vec(),
            vec![v; numel(shape)],
            false,
            Vec::new(),
            None,
            "leaf",
        )
    }

    /// Leaf with entries drawn uniformly from `[lo, hi)`.
    pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::cast(rng.gen_range(lo..hi)))
            .collect();
        Self::new_inner(shape.to_vec(), data, false, Vec::new(), None, "leaf")
    }

    /// Mark this leaf as a gradient sink. Typically chained at construction:
    /// `Tensor::zeros(&[4]).requires_grad()`.
    pub fn requires_grad(self) -> Self {
        if self.inner.requires_grad {
            return self;
        }
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                data: self.inner.data.clone(),
                requires_grad: true,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                op: "leaf",
            }),
        }
    }

    /// Same data, detached from any graph and not requiring grad.
    pub fn detach(&self) -> Self {
        Self::new_inner(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            false,
            Vec::new(),
            None,
            "leaf",
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn is_requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Accumulated gradient, if backward has deposited one.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn item(&self) -> Result<T> {
        if self.len() != 1 {
            return Err(Error::InvalidArg {
                op: "item",
                msg: format!("expected scalar, got shape {}", fmt_shape(self.shape())),
            });
        }
        Ok(self.inner.data[0])
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.inner.shape.as_slice() {
            &[a, b] => Ok((a, b)),
            s => Err(Error::InvalidArg {
                op,
                msg: format!("expected rank-2 tensor, got shape {}", fmt_shape(s)),
            }),
        }
    }

    pub(crate) fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.inner.shape.as_slice() {
            &[a, b, c, d] => Ok((a, b, c, d)),
            s => Err(Error::InvalidArg {
                op,
                msg: format!("expected rank-4 tensor, got shape {}", fmt_shape(s)),
            }),
        }
    }

    /// Does the autodiff graph care about this tensor?
    pub(crate) fn wants_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.backward.is_some()
    }

    /// Result of a differentiable op. When no parent participates in a graph
    /// the node is folded into a plain constant.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        if parents.iter().any(|p| p.wants_grad()) {
            Ok(Self::new_inner(
                shape,
                data,
                false,
                parents,
                Some(backward),
                op,
            ))
        } else {
            Ok(Self::new_inner(shape, data, false, Vec::new(), None, op))
        }
    }

    pub(crate) fn accumulate_grad(&self, delta: Vec<T>) {
        debug_assert_eq!(delta.len(), self.len());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta),
        }
    }

    /// Reverse-mode differentiation from a scalar loss.
    ///
    /// Every tensor reachable from the loss that was created with
    /// `requires_grad` receives its accumulated gradient. Running backward a
    /// second time on the same graph is an error.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::NonScalarLoss(fmt_shape(self.shape())));
        }
        if self.inner.grad.borrow().is_some() {
            return Err(Error::BackwardAlreadyRun);
        }

        // Iterative DFS postorder; reversed it yields each node before any
        // of its parents, which is the order gradients must flow.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: BTreeSet<u64> = BTreeSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx < node.inner.parents.len() {
                let parent = node.inner.parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if parent.wants_grad() && !visited.contains(&parent.inner.id) {
                    visited.insert(parent.inner.id);
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        self.accumulate_grad(vec![T::one()]);

        for node in order.iter().rev() {
            let grad = node.inner.grad.borrow();
            let Some(grad) = grad.as_ref() else {
                continue; // not on any path that received gradient
            };
            if !grad.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: node.inner.op });
            }
            if let Some(backward) = &node.inner.backward {
                let args = BackwardArgs {
                    out_data: &node.inner.data,
                    out_grad: grad,
                    parents: &node.inner.parents,
                };
                backward(&args)?;
            }
        }
        Ok(())
    }

    /// Elementwise sum, used as residual connection. Shapes must match.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: fmt_shape(self.shape()),
                right: fmt_shape(rhs.shape()),
            });
        }
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| *a + *b)
            .collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|args: &BackwardArgs<'_, T>| {
                for parent in args.parents {
                    if parent.wants_grad() {
                        parent.accumulate_grad(args.out_grad.to_vec());
                    }
                }
                Ok(())
            }),
        )
    }

    /// Sum of all entries as a scalar.
    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let total = self.data().iter().fold(T::zero(), |acc, v| acc + *v);
        let n = self.len();
        Tensor::from_op(
            "sum_all",
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let p = &args.parents[0];
                if p.wants_grad() {
                    p.accumulate_grad(vec![args.out_grad[0]; n]);
                }
                Ok(())
            }),
        )
    }

    /// Select one entry of a rank-2 tensor as a scalar, keeping the graph.
    pub fn pick(&self, row: usize, col: usize) -> Result<Tensor<T>> {
        let (rows, cols) = self.dims2("pick")?;
        if row >= rows || col >= cols {
            return Err(Error::InvalidArg {
                op: "pick",
                msg: format!("index ({row},{col}) out of bounds for {rows}x{cols}"),
            });
        }
        let flat = row * cols + col;
        let len = self.len();
        Tensor::from_op(
            "pick",
            vec![1],
            vec![self.data()[flat]],
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let p = &args.parents[0];
                if p.wants_grad() {
                    let mut dx = vec![T::zero(); len];
                    dx[flat] = args.out_grad[0];
                    p.accumulate_grad(dx);
                }
                Ok(())
            }),
        )
    }

    /// Per-channel rescale: `y[n,c,..] = x[n,c,..] * s[n,c]`.
    ///
    /// `x` may be `[N,C,H,W]` or `[N,C]`; `s` is always `[N,C]`. This is the
    /// gating step both attention blocks end with.
    pub fn scale_channels(&self, scale: &Tensor<T>) -> Result<Tensor<T>> {
        let (sn, sc) = scale.dims2("scale_channels")?;
        let (n, c, spatial) = match self.shape() {
            &[n, c] => (n, c, 1),
            &[n, c, h, w] => (n, c, h * w),
            s => {
                return Err(Error::InvalidArg {
                    op: "scale_channels",
                    msg: format!("expected rank-2 or rank-4 input, got {}", fmt_shape(s)),
                })
            }
        };
        if (sn, sc) != (n, c) {
            return Err(Error::ShapeMismatch {
                op: "scale_channels",
                left: fmt_shape(self.shape()),
                right: fmt_shape(scale.shape()),
            });
        }
        let x = self.data();
        let s = scale.data();
        let mut out = vec![T::zero(); x.len()];
        for i in 0..n * c {
            let f = s[i];
            let base = i * spatial;
            for j in 0..spatial {
                out[base + j] = x[base + j] * f;
            }
        }
        Tensor::from_op(
            "scale_channels",
            self.shape().to_vec(),
            out,
            vec![self.clone(), scale.clone()],
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let xp = &args.parents[0];
                let sp = &args.parents[1];
                let x = xp.data();
                let s = sp.data();
                let dy = args.out_grad;
                if xp.wants_grad() {
                    let mut dx = vec![T::zero(); x.len()];
                    for i in 0..n * c {
                        let f = s[i];
                        let base = i * spatial;
                        for j in 0..spatial {
                            dx[base + j] = dy[base + j] * f;
                        }
                    }
                    xp.accumulate_grad(dx);
                }
                if sp.wants_grad() {
                    let mut ds = vec![T::zero(); s.len()];
                    for i in 0..n * c {
                        let base = i * spatial;
                        let mut acc = T::zero();
                        for j in 0..spatial {
                            acc += dy[base + j] * x[base + j];
                        }
                        ds[i] = acc;
                    }
                    sp.accumulate_grad(ds);
                }
                Ok(())
            }),
        )
    }
}
