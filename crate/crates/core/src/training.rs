//! Robust joint training by block-wise coordinate descent.
//!
//! Each minibatch runs up to three stages:
//!
//! 1. predictor stage: `theta_f` takes an optimizer step on `lambda1 * L1`;
//! 2. attack stage: the shift attacker searches for a worst-case shifted
//!    predictor against the current counterfactuals (robust mode only);
//! 3. generator stage: `theta_g` takes an optimizer step on
//!    `lambda2 * L2 + lambda3 * L3`, where `L2` scores counterfactuals under
//!    the shifted predictor (robust) or the current one (baseline).
//!
//! The encoder/predictor and the generator keep separate optimizer state, so
//! stage 1 never moves `theta_g` and stage 3 never moves `theta_f`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{grad, AutodiffError, Optimizer, OptimizerKind, ParamBlock, Value};
use crate::data::Split;
use crate::model::{
    class_of, prediction_loss, proximity_loss, validity_loss, validity_target, Dims, Dropout, ModelError, ModelParams,
};
use crate::rng::{self, Rng};
use crate::tensor::Matrix;
use crate::vds::{vds_with_rng, AttackConfig, Norm};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyData,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: L1={l1}, L2={l2}, L3={l3}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        l1: f64,
        l2: f64,
        l3: f64,
    },
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Generator trained against attacker-shifted predictors.
    Robust,
    /// Generator trained against the current predictor only.
    CounternetBaseline,
    /// Encoder and predictor only; no generator.
    PredictorOnly,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "robust" => Ok(Mode::Robust),
            "counternet_baseline" => Ok(Mode::CounternetBaseline),
            "predictor_only" => Ok(Mode::PredictorOnly),
            other => Err(format!(
                "unknown mode `{other}` (expected robust, counternet_baseline or predictor_only)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonSchedule {
    /// `E * epoch / N`
    Linear,
    /// `E` every epoch.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Largest attack radius.
    pub max_epsilon: f64,
    pub attack_steps: usize,
    pub unroll: usize,
    pub norm: Norm,
    pub mode: Mode,
    pub optimizer: OptimizerKind,
    pub dropout: f64,
    pub epsilon_schedule: EpsilonSchedule,
    pub seed: u64,
    pub first_order: bool,
    pub hard_validity_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            lr: 0.003,
            lambda1: 1.0,
            lambda2: 0.2,
            lambda3: 0.1,
            max_epsilon: 0.1,
            attack_steps: 13,
            unroll: 2,
            norm: Norm::Linf,
            mode: Mode::Robust,
            optimizer: OptimizerKind::Adam,
            dropout: 0.3,
            epsilon_schedule: EpsilonSchedule::Linear,
            seed: 0,
            first_order: false,
            hard_validity_target: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.max_epsilon >= 0.0 && self.max_epsilon.is_finite()) {
            return bad(format!("E must be >= 0, got {}", self.max_epsilon));
        }
        if self.unroll < 1 {
            return bad("K must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Attack settings for a given radius.
    pub fn attack_config(&self, epsilon: f64) -> AttackConfig {
        AttackConfig {
            epsilon,
            steps: self.attack_steps,
            unroll: self.unroll,
            eta: self.lr,
            alpha: None,
            norm: self.norm,
            seed: self.seed,
            first_order: self.first_order,
            hard_target: self.hard_validity_target,
        }
    }

    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        match self.epsilon_schedule {
            EpsilonSchedule::Linear => epsilon_schedule(epoch, self.epochs, self.max_epsilon),
            EpsilonSchedule::Static => self.max_epsilon,
        }
    }
}

/// Linear radius schedule `E * epoch / N` for `1 <= epoch <= N`.
pub fn epsilon_schedule(epoch: usize, epochs: usize, max_epsilon: f64) -> f64 {
    max_epsilon * epoch as f64 / epochs as f64
}

/// Loss values of one minibatch. Generator losses are `None` for
/// predictor-only training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub l1: f64,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub epsilon: f64,
}

/// One JSON-lines record of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub epsilon: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: Option<f64>,
    #[serde(rename = "L3")]
    pub l3: Option<f64>,
    pub train_accuracy: f64,
}

/// Serialises the log as one JSON object per line.
pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    let mut out = String::new();
    for rec in log {
        out.push_str(&serde_json::to_string(rec).expect("log serializes"));
        out.push('\n');
    }
    out
}

fn grads_of(loss: &Value, block: &ParamBlock) -> Result<Vec<Value>> {
    Ok(grad(loss, block.tensors())?)
}

/// Mutable training state: the model, per-block optimizers and the split-off
/// random streams.
pub struct Trainer {
    pub model: ModelParams,
    pub config: TrainConfig,
    opt_f: Optimizer,
    opt_g: Optimizer,
    attack_rng: Rng,
    dropout_rng: Rng,
}

impl Trainer {
    /// Freshly initialised model for `dims` and the given feature schema.
    pub fn init(dims: &Dims, schema: &crate::data::FeatureSchema, config: TrainConfig) -> Result<Self> {
        let mut model = ModelParams::init(dims, schema, config.seed)?;
        if config.mode == Mode::PredictorOnly {
            model = model.without_generator();
        }
        Self::new(model, config)
    }

    pub fn new(model: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.mode != Mode::PredictorOnly && !model.has_generator() {
            return Err(ModelError::NoGenerator.into());
        }
        Ok(Trainer {
            opt_f: Optimizer::new(config.optimizer, config.lr),
            opt_g: Optimizer::new(config.optimizer, config.lr),
            attack_rng: rng::stream(config.seed, "attack", 0),
            dropout_rng: rng::stream(config.seed, "dropout", 0),
            model,
            config,
        })
    }

    fn dropout<'a>(rate: f64, rng: &'a mut Rng) -> Option<Dropout<'a>> {
        (rate > 0.0).then_some(Dropout { rate, rng })
    }

    /// Stage 1: step `theta_f` on `lambda1 * L1`. Returns `L1`.
    pub fn predictor_step(&mut self, x: &Value, y: &Value) -> Result<f64> {
        let theta_f = self.model.theta_f().to_leaves();
        let mut dropout = Self::dropout(self.config.dropout, &mut self.dropout_rng);
        let (_, p) = self.model.forward_f(&theta_f, x, &mut dropout)?;
        let l1 = prediction_loss(&p, y)?;
        let grads = grads_of(&l1.scale(self.config.lambda1), &theta_f)?;
        let mut updated = theta_f;
        self.opt_f.apply(&mut updated, &grads)?;
        self.model.set_theta_f(updated);
        Ok(l1.data()[0])
    }

    /// Stage 3: step `theta_g` on `lambda2 * L2 + lambda3 * L3` with
    /// `validity_model` frozen. Returns `(L2, L3)`.
    pub fn generator_step(&mut self, x: &Value, validity_model: &ParamBlock) -> Result<(f64, f64)> {
        let theta_f = self.model.theta_f().detached();
        let theta_g = self.model.theta_g.to_leaves();
        let target = validity_target(&self.model.predict_with(&theta_f, x)?, self.config.hard_validity_target);
        let mut dropout = Self::dropout(self.config.dropout, &mut self.dropout_rng);
        let x_cf = self.model.generate_cf_with(&theta_f, &theta_g, x, &mut dropout)?;
        let l2 = validity_loss(&self.model.predict_with(&validity_model.detached(), &x_cf)?, &target)?;
        let l3 = proximity_loss(x, &x_cf)?;
        let total = l2.scale(self.config.lambda2).add(&l3.scale(self.config.lambda3))?;
        let grads = grads_of(&total, &theta_g)?;
        let mut updated = theta_g;
        self.opt_g.apply(&mut updated, &grads)?;
        self.model.theta_g = updated;
        Ok((l2.data()[0], l3.data()[0]))
    }

    /// All stages on one minibatch.
    pub fn train_step(&mut self, x: &Matrix, y: &[f64], epsilon: f64, epoch: usize, batch: usize) -> Result<StepMetrics> {
        let xv = Value::from_matrix(x);
        let yv = Value::constant(y.to_vec(), &[y.len(), 1]);
        let mode = self.config.mode;

        // counterfactuals the attacker treats as fixed
        let attack_cf = match mode {
            Mode::Robust => Some(self.model.generate_cf(x)?),
            _ => None,
        };
        let l1 = self.predictor_step(&xv, &yv)?;
        let (l2, l3) = match mode {
            Mode::PredictorOnly => (None, None),
            Mode::CounternetBaseline => {
                let theta_f = self.model.theta_f();
                let (l2, l3) = self.generator_step(&xv, &theta_f)?;
                (Some(l2), Some(l3))
            }
            Mode::Robust => {
                let cfg = self.config.attack_config(epsilon);
                let theta_f = self.model.theta_f();
                let cf = attack_cf.expect("robust mode computes counterfactuals");
                let outcome = vds_with_rng(&self.model, &theta_f, x, y, &cf, &cfg, &mut self.attack_rng)?;
                let (l2, l3) = self.generator_step(&xv, &outcome.shifted)?;
                (Some(l2), Some(l3))
            }
        };
        let finite = l1.is_finite() && l2.is_none_or(f64::is_finite) && l3.is_none_or(f64::is_finite);
        if !finite {
            return Err(TrainError::NonFinite {
                epoch,
                batch,
                l1,
                l2: l2.unwrap_or(0.0),
                l3: l3.unwrap_or(0.0),
            });
        }
        Ok(StepMetrics { l1, l2, l3, epsilon })
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn run_epoch(&mut self, data: &Split, epoch: usize) -> Result<EpochLog> {
        let epsilon = self.config.epsilon_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(self.config.seed, "shuffle", epoch as u64));
        let (mut s1, mut s2, mut s3, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let x = data.x.select_rows(idx);
            let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
            let m = self.train_step(&x, &y, epsilon, epoch, b)?;
            s1 += m.l1;
            s2 += m.l2.unwrap_or(0.0);
            s3 += m.l3.unwrap_or(0.0);
            batches += 1;
        }
        let n = batches as f64;
        let generator = self.config.mode != Mode::PredictorOnly;
        Ok(EpochLog {
            epoch,
            epsilon,
            l1: s1 / n,
            l2: generator.then_some(s2 / n),
            l3: generator.then_some(s3 / n),
            train_accuracy: accuracy(&self.model, &data.x, &data.y)?,
        })
    }
}

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(model: &ModelParams, x: &Matrix, y: &[f64]) -> std::result::Result<f64, ModelError> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let p = model.predict(x)?;
    let hits = p.iter().zip(y).filter(|(p, y)| f64::from(class_of(**p)) == **y).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Trains a fresh model on `data` for `config.epochs` epochs.
pub fn train(data: &Split, schema: &crate::data::FeatureSchema, dims: &Dims, config: &TrainConfig) -> Result<(ModelParams, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut trainer = Trainer::init(dims, schema, config.clone())?;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        log.push(trainer.run_epoch(data, epoch)?);
    }
    Ok((trainer.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_shifted_moons, MoonsConfig};

    fn dims() -> Dims {
        Dims {
            encoder: vec![2, 8, 6],
            predictor: vec![6, 6],
            generator: vec![6, 6],
        }
    }

    fn small() -> (Split, crate::data::FeatureSchema) {
        let ds = synth_shifted_moons(&MoonsConfig {
            k: 2,
            n: 60,
            ..Default::default()
        })
        .unwrap();
        (ds.subsets[0].train.clone(), ds.schema)
    }

    fn cfg(mode: Mode) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 0.01,
            lambda2: 1.0,
            max_epsilon: 0.2,
            attack_steps: 2,
            mode,
            dropout: 0.0,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(epsilon_schedule(50, 50, 0.1), 0.1);
        assert!((epsilon_schedule(1, 50, 0.1) - 0.002).abs() < 1e-18);
        assert_eq!(epsilon_schedule(7, 50, 0.0), 0.0);
        let c = TrainConfig {
            epsilon_schedule: EpsilonSchedule::Static,
            ..TrainConfig::default()
        };
        assert_eq!(c.epsilon_at(1), c.max_epsilon);
    }

    #[test]
    fn stages_touch_only_their_block() {
        let (data, schema) = small();
        let mut t = Trainer::init(&dims(), &schema, cfg(Mode::Robust)).unwrap();
        let x = Value::from_matrix(&data.x);
        let y = Value::constant(data.y.clone(), &[data.len(), 1]);
        for _ in 0..3 {
            let g = t.model.theta_g.clone();
            let f = t.model.theta_f();
            t.predictor_step(&x, &y).unwrap();
            assert!(t.model.theta_g.bit_equal(&g));
            assert!(!t.model.theta_f().bit_equal(&f));
            let f = t.model.theta_f();
            let g = t.model.theta_g.clone();
            t.generator_step(&x, &f).unwrap();
            assert!(t.model.theta_f().bit_equal(&f));
            assert!(!t.model.theta_g.bit_equal(&g));
        }
    }

    #[test]
    fn zero_generator_weights_leave_generator_untouched() {
        let (data, schema) = small();
        let c = TrainConfig {
            lambda2: 0.0,
            lambda3: 0.0,
            ..cfg(Mode::Robust)
        };
        let before = ModelParams::init(&dims(), &schema, c.seed).unwrap();
        let (after, _) = train(&data, &schema, &dims(), &c).unwrap();
        assert!(after.theta_g.bit_equal(&before.theta_g));
    }

    #[test]
    fn robust_without_attack_steps_matches_baseline() {
        let (data, schema) = small();
        let robust = TrainConfig {
            attack_steps: 0,
            max_epsilon: 0.0,
            ..cfg(Mode::Robust)
        };
        let (a, la) = train(&data, &schema, &dims(), &robust).unwrap();
        let (b, lb) = train(&data, &schema, &dims(), &cfg(Mode::CounternetBaseline)).unwrap();
        assert_eq!(la.iter().map(|r| (r.l1, r.l2, r.l3)).collect::<Vec<_>>(), lb.iter().map(|r| (r.l1, r.l2, r.l3)).collect::<Vec<_>>());
        assert!(a.theta_f().bit_equal(&b.theta_f()));
        assert!(a.theta_g.bit_equal(&b.theta_g));
    }

    #[test]
    fn training_is_deterministic_and_logged_per_epoch() {
        let (data, schema) = small();
        let c = TrainConfig {
            dropout: 0.3,
            ..cfg(Mode::Robust)
        };
        let (a, la) = train(&data, &schema, &dims(), &c).unwrap();
        let (b, lb) = train(&data, &schema, &dims(), &c).unwrap();
        assert_eq!(la, lb);
        assert!(a.theta_f().bit_equal(&b.theta_f()) && a.theta_g.bit_equal(&b.theta_g));
        assert_eq!(la.len(), c.epochs);
        for r in &la {
            assert_eq!(r.epsilon, epsilon_schedule(r.epoch, c.epochs, c.max_epsilon));
        }
        let text = log_to_jsonl(&la);
        assert_eq!(text.lines().count(), c.epochs);
        assert!(text.starts_with("{\"epoch\":1,\"epsilon\":"));
    }

    #[test]
    fn predictor_only_has_no_generator() {
        let (data, schema) = small();
        let (m, log) = train(&data, &schema, &dims(), &cfg(Mode::PredictorOnly)).unwrap();
        assert!(!m.has_generator());
        assert!(log.iter().all(|r| r.l2.is_none() && r.l3.is_none()));
    }

    #[test]
    fn predictor_trajectory_does_not_depend_on_mode() {
        let (data, schema) = small();
        let (a, _) = train(&data, &schema, &dims(), &cfg(Mode::PredictorOnly)).unwrap();
        let (b, _) = train(&data, &schema, &dims(), &cfg(Mode::Robust)).unwrap();
        assert!(a.theta_f().bit_equal(&b.theta_f()));
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let (mut data, schema) = small();
        data.x.data_mut()[0] = f64::NAN;
        let err = train(&data, &schema, &dims(), &cfg(Mode::CounternetBaseline)).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { lambda2: -1.0, ..TrainConfig::default() },
            TrainConfig { unroll: 0, ..TrainConfig::default() },
            TrainConfig { max_epsilon: -0.1, ..TrainConfig::default() },
            TrainConfig { dropout: 1.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
