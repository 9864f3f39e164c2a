use serde::{Deserialize, Serialize};

use super::graph::grad_with;
use super::value::Value;
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Ordered, named set of parameter tensors (one network block).
#[derive(Debug, Clone, Default)]
pub struct ParamBlock {
    names: Vec<String>,
    tensors: Vec<Value>,
}

impl ParamBlock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Value) {
        self.names.push(name.into());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Value] {
        &self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Value {
        &self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Copy whose tensors are fresh leaves holding the same data.
    pub fn to_leaves(&self) -> ParamBlock {
        ParamBlock {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Value::detach_variable).collect(),
        }
    }

    /// Copy whose tensors are untracked constants.
    pub fn detached(&self) -> ParamBlock {
        ParamBlock {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Value::detach).collect(),
        }
    }

    /// Concatenation of two blocks, in order.
    pub fn chain(&self, other: &ParamBlock) -> ParamBlock {
        let mut out = self.clone();
        out.names.extend(other.names.iter().cloned());
        out.tensors.extend(other.tensors.iter().cloned());
        out
    }

    /// Splits into the first `at` tensors and the rest.
    pub fn split_at(&self, at: usize) -> (ParamBlock, ParamBlock) {
        let head = ParamBlock {
            names: self.names[..at].to_vec(),
            tensors: self.tensors[..at].to_vec(),
        };
        let tail = ParamBlock {
            names: self.names[at..].to_vec(),
            tensors: self.tensors[at..].to_vec(),
        };
        (head, tail)
    }

    /// True when every tensor has identical shape and bit-identical data.
    pub fn bit_equal(&self, other: &ParamBlock) -> bool {
        self.len() == other.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    fn check_grads(&self, grads: &[Value]) -> Result<()> {
        if grads.len() != self.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "apply_grads",
                lhs: vec![self.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in self.tensors.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "apply_grads",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// One differentiable gradient-descent step: `params - step * d loss/d params`.
///
/// With `create_graph` the returned tensors stay connected to everything the
/// loss depended on, so an outer loss built from them can be differentiated
/// through the update (second-order terms included). Without it the inner
/// gradient is treated as a constant. `params` is not modified.
pub fn functional_step(params: &ParamBlock, loss: &Value, step: f64, create_graph: bool) -> Result<ParamBlock> {
    let grads = grad_with(loss, params.tensors(), create_graph)?;
    let tensors = params
        .tensors
        .iter()
        .zip(&grads)
        .map(|(p, g)| p.sub(&g.scale(step)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamBlock {
        names: params.names.clone(),
        tensors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// In-place optimizer for one [`ParamBlock`]; holds that block's state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Replaces each tensor of `params` by its updated value (a new leaf).
    pub fn apply(&mut self, params: &mut ParamBlock, grads: &[Value]) -> Result<()> {
        params.check_grads(grads)?;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors.iter_mut().zip(grads) {
                    let data = p.data().iter().zip(g.data()).map(|(w, d)| w - self.lr * d).collect();
                    *p = Value::variable(data, p.shape());
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = params.tensors.iter().map(|p| vec![0.0; p.len()]).collect();
                    self.second = self.first.clone();
                }
                self.step += 1;
                let bias1 = 1.0 - BETA1.powi(self.step as i32);
                let bias2 = 1.0 - BETA2.powi(self.step as i32);
                for (i, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    let mut data = p.data().to_vec();
                    for (j, (w, &d)) in data.iter_mut().zip(g.data()).enumerate() {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * d;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * d * d;
                        let m_hat = m[j] / bias1;
                        let v_hat = v[j] / bias2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                    *p = Value::variable(data, p.shape());
                }
            }
        }
        Ok(())
    }
}
