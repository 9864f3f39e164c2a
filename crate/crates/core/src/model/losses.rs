use crate::autodiff::{mse, ParamBlock, Value};

use super::{ModelParams, Result};

/// The three batch-mean training objectives.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub prediction: Value,
    pub validity: Value,
    pub proximity: Value,
}

/// `MSE(f(x), y)`
pub fn prediction_loss(p: &Value, y: &Value) -> Result<Value> {
    Ok(mse(p, y)?)
}

/// Regression target for a counterfactual: `1 - f(x)` (soft) or
/// `1 - round(f(x))` (hard). Always a constant.
pub fn validity_target(p: &Value, hard: bool) -> Value {
    let data = p
        .data()
        .iter()
        .map(|&v| if hard { 1.0 - f64::from(super::class_of(v)) } else { 1.0 - v })
        .collect();
    Value::constant(data, p.shape())
}

/// `MSE(f(x_cf; theta*), target)`
pub fn validity_loss(p_cf: &Value, target: &Value) -> Result<Value> {
    Ok(mse(p_cf, target)?)
}

/// `MSE(x, x_cf)`
pub fn proximity_loss(x: &Value, x_cf: &Value) -> Result<Value> {
    Ok(mse(x, x_cf)?)
}

/// All three losses for a batch.
///
/// The prediction loss uses the model's own `theta_f`; the validity loss
/// scores `x_cf` under `validity_model` (the model's own `theta_f`, or a
/// shifted copy) against the detached target from the model's prediction.
pub fn losses(
    model: &ModelParams,
    x: &Value,
    y: &Value,
    x_cf: &Value,
    validity_model: &ParamBlock,
    hard_target: bool,
) -> Result<LossTerms> {
    let p = model.predict_with(&model.theta_f(), x)?;
    let target = validity_target(&p, hard_target);
    let p_cf = model.predict_with(validity_model, x_cf)?;
    Ok(LossTerms {
        prediction: prediction_loss(&p, y)?,
        validity: validity_loss(&p_cf, &target)?,
        proximity: proximity_loss(x, x_cf)?,
    })
}
