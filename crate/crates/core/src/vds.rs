//! Virtual data shift: a worst-case shifted predictor found by perturbing the
//! training batch.
//!
//! The attacker looks for per-row perturbations `delta` (inside a norm ball of
//! radius `epsilon`) such that a predictor re-fitted on `x + delta` invalidates
//! the given counterfactuals. Re-fitting is approximated by `unroll` plain
//! gradient steps that stay differentiable in `delta`; `delta` then takes a
//! signed (l-inf) or normalised (l2) ascent step on the validity loss of the
//! re-fitted predictor and is projected back into the ball.
//!
//! The shifted weights carry over between outer steps, but each outer step's
//! `delta` gradient only flows through that step's own unrolled updates.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{functional_step, grad, mse, ParamBlock, Value};
use crate::model::{validity_target, ModelError, ModelParams};
use crate::rng::{self, Rng};
use crate::tensor::Matrix;

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

impl std::str::FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linf" => Ok(Norm::Linf),
            "l2" => Ok(Norm::L2),
            other => Err(format!("unknown norm `{other}` (expected linf or l2)")),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::Linf => "linf",
            Norm::L2 => "l2",
        })
    }
}

/// Anything that maps `(theta_f, x)` to probabilities `[n,1]`.
pub trait Predictor: Sync {
    fn predict_value(&self, theta_f: &ParamBlock, x: &Value) -> Result<Value>;
}

impl Predictor for ModelParams {
    fn predict_value(&self, theta_f: &ParamBlock, x: &Value) -> Result<Value> {
        self.predict_with(theta_f, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Radius of the feasible region.
    pub epsilon: f64,
    /// Outer attack iterations.
    pub steps: usize,
    /// Inner gradient steps unrolled per outer iteration.
    pub unroll: usize,
    /// Learning rate of the unrolled steps.
    pub eta: f64,
    /// Outer step size; `None` means `2.5 * epsilon / steps`.
    pub alpha: Option<f64>,
    pub norm: Norm,
    pub seed: u64,
    /// Treat inner gradients as constants (drops second-order terms).
    pub first_order: bool,
    /// Use `1 - round(f(x))` instead of `1 - f(x)` as the validity target.
    pub hard_target: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.1,
            steps: 7,
            unroll: 2,
            eta: 0.003,
            alpha: None,
            norm: Norm::Linf,
            seed: 0,
            first_order: false,
            hard_target: false,
        }
    }
}

impl AttackConfig {
    pub fn step_size(&self) -> f64 {
        match self.alpha {
            Some(a) => a,
            None if self.steps > 0 => 2.5 * self.epsilon / self.steps as f64,
            None => 0.0,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.unroll < 1 {
            return Err("unroll must be >= 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.step_size() >= 0.0 && self.step_size().is_finite()) {
            return Err(format!("alpha must be >= 0, got {}", self.step_size()));
        }
        Ok(())
    }
}

/// Worst-case perturbations and the predictor weights they induce.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub delta: Matrix,
    pub shifted: ParamBlock,
}

/// Projects each `width`-sized row of `delta` into the `epsilon` ball.
pub fn project_rows(delta: &mut [f64], width: usize, epsilon: f64, norm: Norm) {
    match norm {
        Norm::Linf => delta.iter_mut().for_each(|v| *v = v.clamp(-epsilon, epsilon)),
        Norm::L2 => {
            if width == 0 {
                return;
            }
            for row in delta.chunks_mut(width) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > epsilon {
                    let s = epsilon / n;
                    row.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }
}

/// Row-wise projection of a perturbation matrix into the `epsilon` ball.
pub fn project(delta: &Matrix, epsilon: f64, norm: Norm) -> Matrix {
    let mut out = delta.clone();
    let w = out.cols();
    project_rows(out.data_mut(), w, epsilon, norm);
    out
}

/// Row norm in the configured geometry.
pub fn row_norm(row: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::Linf => row.iter().fold(0.0, |m, v| m.max(v.abs())),
        Norm::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Batch tensors that stay fixed for a whole attack.
pub struct AttackBatch {
    pub x: Value,
    pub y: Value,
    pub x_cf: Value,
    pub target: Value,
}

/// One outer iteration's look-ahead: unrolls `unroll` steps of
/// `shifted` on `MSE(f(x + delta), y)` and returns the gradient of the
/// shifted model's validity loss with respect to `delta`, together with the
/// stepped weights.
pub fn meta_gradient<P: Predictor + ?Sized>(
    predictor: &P,
    shifted: &ParamBlock,
    delta: &Value,
    batch: &AttackBatch,
    cfg: &AttackConfig,
) -> Result<(Value, ParamBlock)> {
    let inputs = batch.x.add(delta)?;
    let mut theta = shifted.to_leaves();
    for _ in 0..cfg.unroll {
        let inner = mse(&predictor.predict_value(&theta, &inputs)?, &batch.y)?;
        theta = functional_step(&theta, &inner, cfg.eta, !cfg.first_order)?;
    }
    let outer = mse(&predictor.predict_value(&theta, &batch.x_cf)?, &batch.target)?;
    let g = grad(&outer, std::slice::from_ref(delta))?.remove(0);
    Ok((g, theta))
}

/// Runs the attack with a generator seeded from `cfg.seed`.
pub fn vds<P: Predictor + ?Sized>(
    predictor: &P,
    theta_f: &ParamBlock,
    x: &Matrix,
    y: &[f64],
    x_cf: &Matrix,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    let mut r = rng::stream(cfg.seed, "vds", 0);
    vds_with_rng(predictor, theta_f, x, y, x_cf, cfg, &mut r)
}

/// Runs the attack on one batch. `theta_f` is only read; `x_cf` is treated
/// as fixed.
pub fn vds_with_rng<P: Predictor + ?Sized>(
    predictor: &P,
    theta_f: &ParamBlock,
    x: &Matrix,
    y: &[f64],
    x_cf: &Matrix,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    cfg.validate().map_err(ModelError::Dims)?;
    let (n, d) = (x.rows(), x.cols());
    if y.len() != n || x_cf.rows() != n || x_cf.cols() != d {
        return Err(ModelError::Dims(format!(
            "attack batch mismatch: x {n}x{d}, y {}, x_cf {}x{}",
            y.len(),
            x_cf.rows(),
            x_cf.cols()
        )));
    }
    let eps = cfg.epsilon;
    let mut delta: Vec<f64> = (0..n * d)
        .map(|_| if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 })
        .collect();
    project_rows(&mut delta, d, eps, cfg.norm);

    let frozen = theta_f.detached();
    let x_v = Value::from_matrix(x);
    let p = predictor.predict_value(&frozen, &x_v)?;
    let batch = AttackBatch {
        target: validity_target(&p, cfg.hard_target),
        x: x_v,
        y: Value::constant(y.to_vec(), &[n, 1]),
        x_cf: Value::from_matrix(x_cf),
    };
    let alpha = cfg.step_size();
    let mut shifted = frozen;
    for _ in 0..cfg.steps {
        let delta_v = Value::variable(delta.clone(), &[n, d]);
        let (g, next) = meta_gradient(predictor, &shifted, &delta_v, &batch, cfg)?;
        match cfg.norm {
            Norm::Linf => {
                for (v, gv) in delta.iter_mut().zip(g.data()) {
                    *v += alpha * sign(*gv);
                }
            }
            Norm::L2 => {
                for (row, grow) in delta.chunks_mut(d).zip(g.data().chunks(d)) {
                    let gn = grow.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if gn > 0.0 {
                        for (v, gv) in row.iter_mut().zip(grow) {
                            *v += alpha * gv / gn;
                        }
                    }
                }
            }
        }
        project_rows(&mut delta, d, eps, cfg.norm);
        debug_assert!(
            delta.chunks(d.max(1)).all(|r| row_norm(r, cfg.norm) <= eps * (1.0 + 1e-12)),
            "perturbation left the feasible region"
        );
        shifted = next.detached();
    }
    Ok(AttackOutcome {
        delta: Matrix::new(n, d, delta),
        shifted,
    })
}
