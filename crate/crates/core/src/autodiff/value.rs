use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::AutodiffError;
use crate::tensor::Matrix;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Recorded operation linking a value to the values it was computed from.
///
/// Saved non-differentiable data (masks, slopes, ranges) lives next to the
/// parent links so the reverse rule can be replayed without the forward
/// output.
#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Affine(Value, f64),
    MatMul(Value, Value),
    Transpose(Value),
    AddRowBroadcast(Value, Value),
    SumRows(Value),
    BroadcastRows(Value),
    SumCols(Value),
    BroadcastCols(Value),
    SumAll(Value),
    Expand(Value),
    LeakyRelu(Value, f64),
    Sigmoid(Value),
    Softmax(Value),
    Abs(Value),
    Clamp(Value, f64, f64),
    SliceCols(Value, usize),
    PadCols(Value, usize),
    ConcatCols(Vec<Value>),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Value> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddRowBroadcast(a, b) => vec![a, b],
            Op::Affine(a, ..)
            | Op::Transpose(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::SumCols(a)
            | Op::BroadcastCols(a)
            | Op::SumAll(a)
            | Op::Expand(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Abs(a)
            | Op::Clamp(a, ..)
            | Op::SliceCols(a, ..)
            | Op::PadCols(a, ..) => vec![a],
            Op::ConcatCols(parts) => parts.iter().collect(),
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::AddRowBroadcast(..) => "add_row_broadcast",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::SumCols(..) => "sum_cols",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::SumAll(..) => "sum_all",
            Op::Expand(..) => "expand",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::Abs(..) => "abs",
            Op::Clamp(..) => "clamp",
            Op::SliceCols(..) => "slice_cols",
            Op::PadCols(..) => "pad_cols",
            Op::ConcatCols(..) => "concat_cols",
        }
    }
}

pub(crate) struct Inner {
    pub(crate) id: u64,
    pub(crate) data: Arc<Vec<f64>>,
    pub(crate) shape: Vec<usize>,
    pub(crate) op: Option<Op>,
}

/// Dense f64 tensor that optionally records how it was computed.
///
/// Constants carry no graph record. Variables are created with
/// [`Value::variable`] and every value computed from at least one variable
/// records its operation, so gradients (and gradients of gradients) can be
/// taken with [`super::grad`].
///
/// `Value` is immutable and cheap to clone; clones share both data and graph.
#[derive(Clone)]
pub struct Value {
    pub(crate) inner: Arc<Inner>,
}

impl Value {
    fn build(data: Vec<f64>, shape: Vec<usize>, op: Option<Op>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Value {
            inner: Arc::new(Inner {
                id: next_id(),
                data: Arc::new(data),
                shape,
                op,
            }),
        }
    }

    /// Wraps data as a constant. Panics if the shape does not match.
    pub fn constant(data: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Self::build(data, shape.to_vec(), None)
    }

    /// Wraps data as a differentiable leaf.
    pub fn variable(data: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Self::build(data, shape.to_vec(), Some(Op::Leaf))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(vec![0.0; shape.iter().product()], shape)
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self::constant(m.data().to_vec(), &[m.rows(), m.cols()])
    }

    /// Result of a primitive. Records `op` only when some parent is tracked.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Self {
        let tracked = op.parents().iter().any(|p| p.requires_grad());
        Self::build(data, shape, tracked.then_some(op))
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
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

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.inner.op.as_ref()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.op.is_some()
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.inner.op, Some(Op::Leaf))
    }

    /// Single element of a one-element value.
    pub fn item(&self) -> Result<f64, AutodiffError> {
        if self.len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: self.shape().to_vec(),
            });
        }
        Ok(self.inner.data[0])
    }

    /// Same data, no graph.
    pub fn detach(&self) -> Self {
        Value {
            inner: Arc::new(Inner {
                id: next_id(),
                data: Arc::clone(&self.inner.data),
                shape: self.inner.shape.clone(),
                op: None,
            }),
        }
    }

    /// Same data as a fresh leaf, cut from any upstream graph.
    pub fn detach_variable(&self) -> Self {
        Value {
            inner: Arc::new(Inner {
                id: next_id(),
                data: Arc::clone(&self.inner.data),
                shape: self.inner.shape.clone(),
                op: Some(Op::Leaf),
            }),
        }
    }

    /// Copies a rank-2 value out as a matrix.
    pub fn to_matrix(&self) -> Result<Matrix, AutodiffError> {
        let (rows, cols) = self.dims2("to_matrix")?;
        Ok(Matrix::new(rows, cols, self.data().to_vec()))
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            other => Err(AutodiffError::Rank {
                op,
                expected: 2,
                shape: other.to_vec(),
            }),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.op().map(Op::name).unwrap_or("const");
        f.debug_struct("Value")
            .field("shape", &self.shape())
            .field("op", &op)
            .field("data", &self.data())
            .finish()
    }
}
