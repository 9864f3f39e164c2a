//! Finite-difference and hand-derived gradient oracles, shared by the
//! gradient tests and the acceptance suite.
#![allow(dead_code)]

use rand::Rng as _;
use recourse_core::autodiff::gradcheck::{central_difference, first_mismatch};
use recourse_core::autodiff::{functional_step, grad, mse, ParamBlock, Value};
use recourse_core::data::{Encoding, FeatureColumn, FeatureSchema};
use recourse_core::model::{proximity_loss, validity_loss, Dims, ModelParams};
use recourse_core::rng::{self, Rng};
use recourse_core::vds::{meta_gradient, AttackBatch, AttackConfig};

pub const H: f64 = 1e-5;

pub fn schema(continuous: usize, categories: &[usize]) -> FeatureSchema {
    let mut columns = Vec::new();
    let mut offset = 0;
    for i in 0..continuous {
        columns.push(FeatureColumn {
            name: format!("c{i}"),
            offset,
            encoding: Encoding::Continuous { min: 0.0, max: 1.0 },
        });
        offset += 1;
    }
    for (i, &n) in categories.iter().enumerate() {
        columns.push(FeatureColumn {
            name: format!("k{i}"),
            offset,
            encoding: Encoding::Categorical {
                categories: (0..n).map(|j| format!("v{j}")).collect(),
            },
        });
        offset += n;
    }
    FeatureSchema {
        columns,
        encoded_dim: offset,
    }
}

pub struct Case {
    pub model: ModelParams,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub rows: usize,
}

/// Network with `depth` hidden encoder layers and random widths.
pub fn random_case(index: u64, depth: usize) -> Case {
    let mut r: Rng = rng::stream(2024, "gradcheck", index);
    let s = schema(r.random_range(1..=3), &[r.random_range(2..=3)]);
    let d = s.encoded_dim;
    let mut encoder = vec![d];
    for _ in 0..depth {
        encoder.push(r.random_range(2..=5));
    }
    let latent = *encoder.last().unwrap();
    let dims = Dims {
        encoder,
        predictor: vec![latent, r.random_range(2..=4)],
        generator: vec![latent, r.random_range(2..=4)],
    };
    let mut model = ModelParams::init(&dims, &s, index).unwrap();
    // wider than the default init so second-order terms are not negligible
    let mut widen = |b: &ParamBlock| {
        let w: Vec<f64> = flat(b).iter().map(|_| r.random_range(-1.5..1.5)).collect();
        rebuild(b, &w)
    };
    model.theta_h = widen(&model.theta_h);
    model.theta_m = widen(&model.theta_m);
    model.theta_g = widen(&model.theta_g);
    let rows = r.random_range(2..=4);
    let x = (0..rows * d).map(|_| r.random::<f64>()).collect();
    let y = (0..rows).map(|_| f64::from(r.random_range(0..2u8))).collect();
    Case { model, x, y, rows }
}

pub fn flat(block: &ParamBlock) -> Vec<f64> {
    block.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
}

pub fn rebuild(template: &ParamBlock, flat: &[f64]) -> ParamBlock {
    let mut out = ParamBlock::new();
    let mut at = 0;
    for (name, t) in template.iter() {
        out.push(name, Value::variable(flat[at..at + t.len()].to_vec(), t.shape()));
        at += t.len();
    }
    out
}

pub fn compare(what: &str, analytic: &[f64], numeric: &[f64]) -> Result<(), String> {
    match first_mismatch(analytic, numeric) {
        Some((i, a, n)) => Err(format!("{what}: coordinate {i} analytic {a} vs numeric {n}")),
        None => Ok(()),
    }
}

pub fn check_predictor_weights(c: &Case) -> Result<(), String> {
    let m = &c.model;
    let d = m.schema.encoded_dim;
    let x = Value::constant(c.x.clone(), &[c.rows, d]);
    let y = Value::constant(c.y.clone(), &[c.rows, 1]);
    let probe = Value::constant(c.x.iter().map(|v| 1.0 - v).collect(), &[c.rows, d]);
    let target = Value::constant(vec![0.3; c.rows], &[c.rows, 1]);
    let loss_of = |theta: &ParamBlock| {
        let l1 = mse(&m.predict_with(theta, &x).unwrap(), &y).unwrap();
        let l2 = validity_loss(&m.predict_with(theta, &probe).unwrap(), &target).unwrap();
        l1.add(&l2).unwrap()
    };
    let theta = m.theta_f().to_leaves();
    let analytic: Vec<f64> = grad(&loss_of(&theta), theta.tensors())
        .unwrap()
        .iter()
        .flat_map(|g| g.data().to_vec())
        .collect();
    let numeric = central_difference(|w| loss_of(&rebuild(&theta, w)).data()[0], &flat(&theta), H);
    compare("predictor weights", &analytic, &numeric)
}

pub fn check_generator_weights(c: &Case) -> Result<(), String> {
    let m = &c.model;
    let d = m.schema.encoded_dim;
    let x = Value::constant(c.x.clone(), &[c.rows, d]);
    let theta_f = m.theta_f().detached();
    let target = Value::constant(c.y.iter().map(|v| 1.0 - v).collect(), &[c.rows, 1]);
    let loss_of = |theta_g: &ParamBlock| {
        let cf = m.generate_cf_with(&theta_f, theta_g, &x, &mut None).unwrap();
        let l2 = validity_loss(&m.predict_with(&theta_f, &cf).unwrap(), &target).unwrap();
        l2.add(&proximity_loss(&x, &cf).unwrap().scale(0.5)).unwrap()
    };
    let theta_g = m.theta_g.to_leaves();
    let analytic: Vec<f64> = grad(&loss_of(&theta_g), theta_g.tensors())
        .unwrap()
        .iter()
        .flat_map(|g| g.data().to_vec())
        .collect();
    let numeric = central_difference(|w| loss_of(&rebuild(&theta_g, w)).data()[0], &flat(&theta_g), H);
    compare("generator weights", &analytic, &numeric)
}

pub fn check_inputs(c: &Case) -> Result<(), String> {
    let m = &c.model;
    let shape = [c.rows, m.schema.encoded_dim];
    let theta = m.theta_f().detached();
    let y = Value::constant(c.y.clone(), &[c.rows, 1]);
    let loss_of = |x: &Value| mse(&m.predict_with(&theta, x).unwrap(), &y).unwrap();
    let x = Value::variable(c.x.clone(), &shape);
    let analytic = grad(&loss_of(&x), std::slice::from_ref(&x)).unwrap()[0].data().to_vec();
    let numeric = central_difference(|v| loss_of(&Value::constant(v.to_vec(), &shape)).data()[0], &c.x, H);
    compare("inputs", &analytic, &numeric)
}

/// Outer validity loss after `unroll` plain steps on the shifted batch, as a
/// function of the perturbation only.
pub fn unrolled_outer(c: &Case, batch: &AttackBatch, delta: &[f64], cfg: &AttackConfig) -> f64 {
    let m = &c.model;
    let inputs = batch.x.add(&Value::constant(delta.to_vec(), batch.x.shape())).unwrap();
    let mut theta = m.theta_f().to_leaves();
    for _ in 0..cfg.unroll {
        let inner = mse(&m.predict_with(&theta, &inputs).unwrap(), &batch.y).unwrap();
        theta = functional_step(&theta, &inner, cfg.eta, false).unwrap();
    }
    mse(&m.predict_with(&theta, &batch.x_cf).unwrap(), &batch.target).unwrap().data()[0]
}

/// Returns the largest gradient magnitude seen.
pub fn check_unrolled(c: &Case, unroll: usize, seed: u64) -> Result<f64, String> {
    let m = &c.model;
    let shape = [c.rows, m.schema.encoded_dim];
    let mut r = rng::stream(seed, "gradcheck.delta", unroll as u64);
    let delta: Vec<f64> = c.x.iter().map(|_| r.random_range(-0.2..0.2)).collect();
    let x = Value::constant(c.x.clone(), &shape);
    let batch = AttackBatch {
        x_cf: Value::constant(c.x.iter().map(|v| (v + 0.5) % 1.0).collect(), &shape),
        target: Value::constant(c.y.iter().map(|v| 0.9 - 0.8 * v).collect(), &[c.rows, 1]),
        y: Value::constant(c.y.clone(), &[c.rows, 1]),
        x,
    };
    let cfg = AttackConfig {
        unroll,
        eta: 0.5,
        ..Default::default()
    };
    let dv = Value::variable(delta.clone(), &shape);
    let (g, _) = meta_gradient(m, &m.theta_f(), &dv, &batch, &cfg).unwrap();
    let numeric = central_difference(|d| unrolled_outer(c, &batch, d, &cfg), &delta, H);
    compare(&format!("unrolled K={unroll}"), g.data(), &numeric)?;
    Ok(g.data().iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Predictor, generator and input gradients on 20 random networks of depth
/// 1 to 3. Returns the number of networks checked.
pub fn first_order_suite() -> Result<usize, String> {
    for i in 0..20u64 {
        let c = random_case(i, 1 + (i as usize % 3));
        check_predictor_weights(&c).map_err(|e| format!("net {i}: {e}"))?;
        check_generator_weights(&c).map_err(|e| format!("net {i}: {e}"))?;
        check_inputs(&c).map_err(|e| format!("net {i}: {e}"))?;
    }
    Ok(20)
}

/// Perturbation gradients through K in {1, 2} unrolled steps on 20 random
/// networks. Returns how many of the 40 cases had a gradient above 1e-4.
pub fn unrolled_suite() -> Result<usize, String> {
    let mut informative = 0;
    for i in 0..20u64 {
        let c = random_case(100 + i, 1 + (i as usize % 3));
        for k in [1, 2] {
            if check_unrolled(&c, k, i).map_err(|e| format!("net {i}: {e}"))? > 1e-4 {
                informative += 1;
            }
        }
    }
    Ok(informative)
}

/// Scalar model `f(u) = u * w`, T = K = 1: the perturbation gradient against
/// the chain rule written out by hand. Returns the absolute error of the
/// gradient and of the stepped weight.
pub fn one_parameter_chain_rule() -> (f64, f64) {
    struct Linear;
    impl recourse_core::vds::Predictor for Linear {
        fn predict_value(&self, theta: &ParamBlock, x: &Value) -> Result<Value, recourse_core::model::ModelError> {
            Ok(x.matmul(theta.get(0))?)
        }
    }
    let (w, x, y, z, delta, eta) = (0.8, 0.6, 1.0, 0.9, 0.05, 0.1);
    let t = 1.0 - w * x;
    let mut theta = ParamBlock::new();
    theta.push("w", Value::variable(vec![w], &[1, 1]));
    let batch = AttackBatch {
        x: Value::constant(vec![x], &[1, 1]),
        y: Value::constant(vec![y], &[1, 1]),
        x_cf: Value::constant(vec![z], &[1, 1]),
        target: Value::constant(vec![t], &[1, 1]),
    };
    let cfg = AttackConfig {
        unroll: 1,
        eta,
        ..Default::default()
    };
    let dv = Value::variable(vec![delta], &[1, 1]);
    let (g, stepped) = meta_gradient(&Linear, &theta, &dv, &batch, &cfg).unwrap();

    let u = x + delta;
    let w1 = w - eta * 2.0 * (w * u - y) * u;
    let dw1_du = -2.0 * eta * (2.0 * w * u - y);
    let expected = 2.0 * (w1 * z - t) * z * dw1_du;
    ((g.data()[0] - expected).abs(), (stepped.get(0).data()[0] - w1).abs())
}
