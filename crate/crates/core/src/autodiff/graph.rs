use std::collections::{HashMap, HashSet};

use super::value::{Op, Value};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

fn mask_of(a: &Value, f: impl Fn(f64) -> f64) -> Value {
    Value::constant(a.data().iter().map(|&v| f(v)).collect(), a.shape())
}

/// Vector-Jacobian products of `op` for upstream gradient `g`, one entry per
/// parent in `Op::parents` order.
///
/// Parents are used as-is when `create_graph` is set, so the returned values
/// are themselves differentiable; otherwise everything is detached and the
/// result is plain data.
fn vjp(op: &Op, g: &Value, create_graph: bool) -> Result<Vec<Value>> {
    let p = |v: &Value| if create_graph { v.clone() } else { v.detach() };
    Ok(match op {
        Op::Leaf => Vec::new(),
        Op::Add(..) => vec![g.clone(), g.clone()],
        Op::Sub(..) => vec![g.clone(), g.neg()],
        Op::Mul(a, b) => vec![g.mul(&p(b))?, g.mul(&p(a))?],
        Op::Affine(_, scale) => vec![g.scale(*scale)],
        Op::MatMul(a, b) => vec![
            g.matmul(&p(b).transpose()?)?,
            p(a).transpose()?.matmul(g)?,
        ],
        Op::Transpose(_) => vec![g.transpose()?],
        Op::AddRowBroadcast(..) => vec![g.clone(), g.sum_rows()?],
        Op::SumRows(a) => vec![g.broadcast_rows(a.shape()[0])?],
        Op::BroadcastRows(..) => vec![g.sum_rows()?],
        Op::SumCols(a) => vec![g.broadcast_cols(a.shape()[1])?],
        Op::BroadcastCols(..) => vec![g.sum_cols()?],
        Op::SumAll(a) => vec![g.expand(a.shape())?],
        Op::Expand(..) => vec![g.sum_all()],
        Op::LeakyRelu(a, slope) => {
            let s = *slope;
            vec![g.mul(&mask_of(a, |v| if v > 0.0 { 1.0 } else { s }))?]
        }
        Op::Sigmoid(a) => {
            let s = p(a).sigmoid();
            vec![g.mul(&s.mul(&s.affine(-1.0, 1.0))?)?]
        }
        Op::Softmax(a) => {
            let s = p(a).softmax()?;
            let m = a.shape()[1];
            let inner = g.mul(&s)?.sum_cols()?.broadcast_cols(m)?;
            vec![s.mul(&g.sub(&inner)?)?]
        }
        Op::Abs(a) => vec![g.mul(&mask_of(a, |v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        }))?],
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            vec![g.mul(&mask_of(a, |v| if v >= lo && v <= hi { 1.0 } else { 0.0 }))?]
        }
        Op::SliceCols(a, start) => vec![g.pad_cols(*start, a.shape()[1])?],
        Op::PadCols(a, start) => vec![g.slice_cols(*start, a.shape()[1])?],
        Op::ConcatCols(parts) => {
            let mut out = Vec::with_capacity(parts.len());
            let mut start = 0;
            for part in parts {
                let w = part.shape()[1];
                out.push(g.slice_cols(start, w)?);
                start += w;
            }
            out
        }
    })
}

/// Nodes reachable from `root` in reverse topological order (root first),
/// restricted to tracked nodes from which some target is reachable.
fn relevant_order(root: &Value, targets: &HashSet<u64>) -> Vec<Value> {
    let mut post: Vec<Value> = Vec::new();
    let mut relevant: HashSet<u64> = HashSet::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // (node, next parent index to explore)
    let mut stack: Vec<(Value, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, idx)) = stack.pop() {
        let parents: Vec<Value> = node
            .op()
            .map(|op| op.parents().into_iter().filter(|p| p.requires_grad()).cloned().collect())
            .unwrap_or_default();
        if idx < parents.len() {
            let next = parents[idx].clone();
            stack.push((node, idx + 1));
            if visited.insert(next.id()) {
                stack.push((next, 0));
            }
            continue;
        }
        if targets.contains(&node.id()) || parents.iter().any(|p| relevant.contains(&p.id())) {
            relevant.insert(node.id());
            post.push(node);
        }
    }
    post.reverse();
    post
}

/// Reverse-mode gradients of a one-element `loss` with respect to `wrt`.
///
/// Values outside the graph of `loss` (including constants) get a zero
/// gradient. With `create_graph`, the returned gradients are recorded so
/// they can be differentiated again.
pub fn grad_with(loss: &Value, wrt: &[Value], create_graph: bool) -> Result<Vec<Value>> {
    if loss.len() != 1 {
        return Err(AutodiffError::NotScalar {
            shape: loss.shape().to_vec(),
        });
    }
    let targets: HashSet<u64> = wrt.iter().filter(|w| w.requires_grad()).map(Value::id).collect();
    let mut grads: HashMap<u64, Value> = HashMap::new();
    if !targets.is_empty() && loss.requires_grad() {
        let order = relevant_order(loss, &targets);
        grads.insert(loss.id(), Value::constant(vec![1.0], loss.shape()));
        for node in &order {
            let Some(g) = grads.get(&node.id()).cloned() else {
                continue;
            };
            let op = node.op().expect("ordered nodes are tracked");
            if matches!(op, Op::Leaf) {
                continue;
            }
            let parents = op.parents();
            let contributions = vjp(op, &g, create_graph)?;
            for (parent, contrib) in parents.into_iter().zip(contributions) {
                if !parent.requires_grad() {
                    continue;
                }
                let merged = match grads.remove(&parent.id()) {
                    Some(prev) => prev.add(&contrib)?,
                    None => contrib,
                };
                grads.insert(parent.id(), merged);
            }
            // interior gradients are dead once propagated
            if !targets.contains(&node.id()) {
                grads.remove(&node.id());
            }
        }
    }
    Ok(wrt
        .iter()
        .map(|w| match grads.get(&w.id()) {
            Some(g) if create_graph => g.clone(),
            Some(g) => g.detach(),
            None => Value::zeros(w.shape()),
        })
        .collect())
}

/// First-order gradients of `loss` as plain data.
pub fn grad(loss: &Value, wrt: &[Value]) -> Result<Vec<Value>> {
    grad_with(loss, wrt, false)
}
