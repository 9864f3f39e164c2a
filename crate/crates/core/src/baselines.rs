//! Post-hoc counterfactual search against a frozen predictor.
//!
//! Each row starts at its input and follows plain gradient descent on
//! `(f(x_cf) - (1 - f(x)))^2 + lambda * mean_j (x_j - x_cf_j)^2`. After every
//! step the iterate is made feasible again: continuous slots are clamped to
//! `[0,1]` and every categorical span is projected onto the probability
//! simplex.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, mse, ParamBlock, Value};
use crate::data::{FeatureSchema, Segment};
use crate::model::{validity_target, ModelError};
use crate::tensor::Matrix;
use crate::vds::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VanillaCfConfig {
    pub steps: usize,
    pub lr: f64,
    pub lambda: f64,
    /// Use `1 - round(f(x))` as the target instead of `1 - f(x)`.
    pub hard_target: bool,
}

impl Default for VanillaCfConfig {
    fn default() -> Self {
        VanillaCfConfig {
            steps: 1000,
            lr: 0.05,
            lambda: 0.1,
            hard_target: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaCfOutput {
    /// Final feasible iterate.
    pub soft: Matrix,
    /// `soft` with every categorical span rounded to its argmax.
    pub hard: Matrix,
}

/// Euclidean projection of `v` onto `{p : p >= 0, sum p = 1}`.
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumulative += ui;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Clamps continuous slots and projects categorical spans of every row.
pub fn make_feasible(m: &mut Matrix, schema: &FeatureSchema) {
    let segments = schema.segments();
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        for seg in &segments {
            match *seg {
                Segment::Continuous { start, len } => {
                    row[start..start + len].iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                }
                Segment::Categorical { start, len } => project_simplex(&mut row[start..start + len]),
            }
        }
    }
}

/// Counterfactuals for every row of `x` under the frozen `theta_f`.
///
/// Without a schema the search is unconstrained and the hardened copy equals
/// the soft iterate.
pub fn vanilla_cf<P: Predictor + ?Sized>(
    x: &Matrix,
    predictor: &P,
    theta_f: &ParamBlock,
    schema: Option<&FeatureSchema>,
    cfg: &VanillaCfConfig,
) -> Result<VanillaCfOutput, ModelError> {
    let (n, d) = (x.rows(), x.cols());
    let theta = theta_f.detached();
    let xv = Value::from_matrix(x);
    let target = validity_target(&predictor.predict_value(&theta, &xv)?, cfg.hard_target);
    let rows = n as f64;
    let mut current = x.clone();
    for _ in 0..cfg.steps {
        let cf = Value::variable(current.data().to_vec(), &[n, d]);
        // per-row objectives summed over rows, so rows do not interact
        let validity = mse(&predictor.predict_value(&theta, &cf)?, &target)?.scale(rows);
        let cost = mse(&xv, &cf)?.scale(rows * cfg.lambda);
        let g = grad(&validity.add(&cost)?, std::slice::from_ref(&cf))?.remove(0);
        for (v, gv) in current.data_mut().iter_mut().zip(g.data()) {
            *v -= cfg.lr * gv;
        }
        if let Some(s) = schema {
            make_feasible(&mut current, s);
        }
    }
    let hard = match schema {
        Some(s) => s.harden(&current),
        None => current.clone(),
    };
    Ok(VanillaCfOutput { soft: current, hard })
}
