//! Reverse-mode gradients against central finite differences on randomly
//! drawn networks, including gradients taken through unrolled updates.

mod oracle;

use oracle::*;
use recourse_core::autodiff::Value;
use recourse_core::vds::{meta_gradient, AttackBatch, AttackConfig};

#[test]
fn twenty_random_networks_first_order() {
    assert_eq!(first_order_suite().unwrap(), 20);
}

#[test]
fn unrolled_perturbation_gradient() {
    let informative = unrolled_suite().unwrap();
    // guards against a suite that passes only through the absolute tolerance
    assert!(informative >= 30, "only {informative} of 40 cases had a sizeable gradient");
}

#[test]
fn first_order_unrolling_drops_perturbation_gradient() {
    let c = random_case(7, 2);
    let shape = [c.rows, c.model.schema.encoded_dim];
    let batch = AttackBatch {
        x: Value::constant(c.x.clone(), &shape),
        y: Value::constant(c.y.clone(), &[c.rows, 1]),
        x_cf: Value::constant(vec![0.5; c.x.len()], &shape),
        target: Value::constant(vec![0.5; c.rows], &[c.rows, 1]),
    };
    let cfg = AttackConfig {
        first_order: true,
        eta: 0.5,
        ..Default::default()
    };
    let dv = Value::variable(vec![0.05; c.x.len()], &shape);
    let (g, _) = meta_gradient(&c.model, &c.model.theta_f(), &dv, &batch, &cfg).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn one_parameter_chain_rule_matches_hand_derivation() {
    let (grad_err, weight_err) = one_parameter_chain_rule();
    assert!(grad_err < 1e-12, "gradient off by {grad_err}");
    assert!(weight_err < 1e-12, "stepped weight off by {weight_err}");
}
