//! Differentiable primitives.
//!
//! Every primitive checks operand shapes and records an [`Op`] when any
//! operand is tracked. Reverse rules live in `graph.rs` and are written in
//! terms of these same primitives, which is what makes gradients themselves
//! differentiable.

use super::value::{Op, Value};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

fn same_shape(op: &'static str, a: &Value, b: &Value) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn unary(a: &Value, op: Op, f: impl Fn(f64) -> f64) -> Value {
    let data = a.data().iter().map(|&v| f(v)).collect();
    Value::from_op(data, a.shape().to_vec(), op)
}

fn zip_with(a: &Value, b: &Value, op: Op, f: impl Fn(f64, f64) -> f64) -> Value {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Value::from_op(data, a.shape().to_vec(), op)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Value {
    pub fn add(&self, other: &Value) -> Result<Value> {
        same_shape("add", self, other)?;
        Ok(zip_with(self, other, Op::Add(self.clone(), other.clone()), |x, y| x + y))
    }

    pub fn sub(&self, other: &Value) -> Result<Value> {
        same_shape("sub", self, other)?;
        Ok(zip_with(self, other, Op::Sub(self.clone(), other.clone()), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Value) -> Result<Value> {
        same_shape("mul", self, other)?;
        Ok(zip_with(self, other, Op::Mul(self.clone(), other.clone()), |x, y| x * y))
    }

    /// `scale * self + shift` elementwise, with constant coefficients.
    pub fn affine(&self, scale: f64, shift: f64) -> Value {
        unary(self, Op::Affine(self.clone(), scale), |v| scale * v + shift)
    }

    pub fn scale(&self, c: f64) -> Value {
        self.affine(c, 0.0)
    }

    pub fn neg(&self) -> Value {
        self.affine(-1.0, 0.0)
    }

    /// `[n,k] x [k,m] -> [n,m]`
    pub fn matmul(&self, other: &Value) -> Result<Value> {
        let (n, k) = self.dims2("matmul")?;
        let (k2, m) = other.dims2("matmul")?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * m..(p + 1) * m];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(Value::from_op(out, vec![n, m], Op::MatMul(self.clone(), other.clone())))
    }

    pub fn transpose(&self) -> Result<Value> {
        let (n, m) = self.dims2("transpose")?;
        let a = self.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = a[i * m + j];
            }
        }
        Ok(Value::from_op(out, vec![m, n], Op::Transpose(self.clone())))
    }

    /// Adds a length-`m` vector to every row of an `[n,m]` matrix.
    pub fn add_row_broadcast(&self, row: &Value) -> Result<Value> {
        let (n, m) = self.dims2("add_row_broadcast")?;
        if row.shape() != [m] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: self.shape().to_vec(),
                rhs: row.shape().to_vec(),
            });
        }
        let a = self.data();
        let b = row.data();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            out.extend(a[i * m..(i + 1) * m].iter().zip(b).map(|(x, y)| x + y));
        }
        Ok(Value::from_op(out, vec![n, m], Op::AddRowBroadcast(self.clone(), row.clone())))
    }

    /// `[n,m] -> [m]`, summing over rows.
    pub fn sum_rows(&self) -> Result<Value> {
        let (n, m) = self.dims2("sum_rows")?;
        let a = self.data();
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(&a[i * m..(i + 1) * m]) {
                *o += v;
            }
        }
        Ok(Value::from_op(out, vec![m], Op::SumRows(self.clone())))
    }

    /// `[m] -> [n,m]`
    pub fn broadcast_rows(&self, n: usize) -> Result<Value> {
        let m = match self.shape() {
            [m] => *m,
            other => {
                return Err(AutodiffError::Rank {
                    op: "broadcast_rows",
                    expected: 1,
                    shape: other.to_vec(),
                })
            }
        };
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.data());
        }
        Ok(Value::from_op(out, vec![n, m], Op::BroadcastRows(self.clone())))
    }

    /// `[n,m] -> [n,1]`, summing within each row.
    pub fn sum_cols(&self) -> Result<Value> {
        let (n, m) = self.dims2("sum_cols")?;
        let a = self.data();
        let out = (0..n).map(|i| a[i * m..(i + 1) * m].iter().sum()).collect();
        Ok(Value::from_op(out, vec![n, 1], Op::SumCols(self.clone())))
    }

    /// `[n,1] -> [n,m]`
    pub fn broadcast_cols(&self, m: usize) -> Result<Value> {
        let (n, one) = self.dims2("broadcast_cols")?;
        if one != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_cols",
                lhs: self.shape().to_vec(),
                rhs: vec![n, m],
            });
        }
        let mut out = Vec::with_capacity(n * m);
        for &v in self.data() {
            out.extend(std::iter::repeat_n(v, m));
        }
        Ok(Value::from_op(out, vec![n, m], Op::BroadcastCols(self.clone())))
    }

    /// Sum of all elements as a rank-0 value.
    pub fn sum_all(&self) -> Value {
        let s = self.data().iter().sum();
        Value::from_op(vec![s], Vec::new(), Op::SumAll(self.clone()))
    }

    pub fn mean_all(&self) -> Value {
        let n = self.len().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Repeats a one-element value over `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Value> {
        let v = self.item()?;
        let n = shape.iter().product();
        Ok(Value::from_op(vec![v; n], shape.to_vec(), Op::Expand(self.clone())))
    }

    pub fn leaky_relu(&self, slope: f64) -> Value {
        unary(self, Op::LeakyRelu(self.clone(), slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&self) -> Value {
        unary(self, Op::Sigmoid(self.clone()), sigmoid_scalar)
    }

    /// Softmax across the columns of each row.
    pub fn softmax(&self) -> Result<Value> {
        let (n, m) = self.dims2("softmax")?;
        let a = self.data();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = &a[i * m..(i + 1) * m];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            out.extend(row.iter().map(|v| (v - max).exp()));
            let total: f64 = out[start..].iter().sum();
            out[start..].iter_mut().for_each(|v| *v /= total);
        }
        Ok(Value::from_op(out, vec![n, m], Op::Softmax(self.clone())))
    }

    pub fn abs(&self) -> Value {
        unary(self, Op::Abs(self.clone()), f64::abs)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Value {
        unary(self, Op::Clamp(self.clone(), lo, hi), |v| v.clamp(lo, hi))
    }

    /// Columns `start..start+len` of an `[n,m]` matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Value> {
        let (n, m) = self.dims2("slice_cols")?;
        if start + len > m {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: self.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let a = self.data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&a[i * m + start..i * m + start + len]);
        }
        Ok(Value::from_op(out, vec![n, len], Op::SliceCols(self.clone(), start)))
    }

    /// Places an `[n,len]` matrix at column `start` of a zero `[n,total]` matrix.
    pub fn pad_cols(&self, start: usize, total: usize) -> Result<Value> {
        let (n, len) = self.dims2("pad_cols")?;
        if start + len > total {
            return Err(AutodiffError::ShapeMismatch {
                op: "pad_cols",
                lhs: self.shape().to_vec(),
                rhs: vec![start, total],
            });
        }
        let a = self.data();
        let mut out = vec![0.0; n * total];
        for i in 0..n {
            out[i * total + start..i * total + start + len].copy_from_slice(&a[i * len..(i + 1) * len]);
        }
        Ok(Value::from_op(out, vec![n, total], Op::PadCols(self.clone(), start)))
    }

    /// Concatenates `[n, m_i]` matrices along columns.
    pub fn concat_cols(parts: &[Value]) -> Result<Value> {
        let first = parts.first().ok_or(AutodiffError::Empty { op: "concat_cols" })?;
        let (n, _) = first.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2("concat_cols")?;
            if r != n {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        Ok(Value::from_op(out, vec![n, total], Op::ConcatCols(parts.to_vec())))
    }
}

/// Mean squared error over all elements.
pub fn mse(a: &Value, b: &Value) -> Result<Value> {
    same_shape("mse", a, b)?;
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.mean_all())
}

/// Mean over rows of the row-wise l1 distance.
pub fn l1_distance(a: &Value, b: &Value) -> Result<Value> {
    same_shape("l1_distance", a, b)?;
    let (n, _) = a.dims2("l1_distance")?;
    Ok(a.sub(b)?.abs().sum_all().scale(1.0 / n.max(1) as f64))
}

/// Softmax applied independently to each `(start, len)` column span; other
/// columns pass through unchanged.
pub fn group_softmax(x: &Value, spans: &[(usize, usize)]) -> Result<Value> {
    let (_, m) = x.dims2("group_softmax")?;
    let mut sorted = spans.to_vec();
    sorted.sort_unstable();
    let mut parts = Vec::new();
    let mut cursor = 0;
    for (start, len) in sorted {
        if start < cursor || start + len > m {
            return Err(AutodiffError::ShapeMismatch {
                op: "group_softmax",
                lhs: x.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        if start > cursor {
            parts.push(x.slice_cols(cursor, start - cursor)?);
        }
        parts.push(x.slice_cols(start, len)?.softmax()?);
        cursor = start + len;
    }
    if cursor < m {
        parts.push(x.slice_cols(cursor, m - cursor)?);
    }
    Value::concat_cols(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let x = Value::scalar(0.0);
        assert_eq!(x.sigmoid().item().unwrap(), 0.5);
    }

    #[test]
    fn mse_identity_is_zero() {
        let a = Value::constant(vec![1.0, 0.0], &[2, 1]);
        assert_eq!(mse(&a, &a).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn equal_logits_split_evenly() {
        let x = Value::constant(vec![2.0, 2.0], &[1, 2]);
        let s = group_softmax(&x, &[(0, 2)]).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn group_softmax_leaves_other_columns() {
        let x = Value::constant(vec![7.0, 1.0, 1.0, -3.0], &[1, 4]);
        let s = group_softmax(&x, &[(1, 2)]).unwrap();
        assert_eq!(s.data(), &[7.0, 0.5, 0.5, -3.0]);
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let a = Value::zeros(&[2, 3]);
        let b = Value::zeros(&[2, 2]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
        assert!(a.add(&b).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn matmul_small() {
        let a = Value::constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Value::constant(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn l1_distance_is_row_mean() {
        let a = Value::constant(vec![0.2, 0.4], &[1, 2]);
        let b = Value::constant(vec![0.1, 0.6], &[1, 2]);
        let d = l1_distance(&a, &b).unwrap().item().unwrap();
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn constants_record_nothing() {
        let a = Value::constant(vec![1.0], &[1, 1]);
        assert!(!a.sigmoid().requires_grad());
        let v = Value::variable(vec![1.0], &[1, 1]);
        assert!(v.sigmoid().add(&a).unwrap().requires_grad());
    }
}
