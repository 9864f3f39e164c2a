//! Run configuration file.

use std::path::Path;

use serde::Deserialize;

use recourse_core::autodiff::OptimizerKind;
use recourse_core::baselines::VanillaCfConfig;
use recourse_core::model::Dims;
use recourse_core::training::{EpsilonSchedule, Mode, TrainConfig};
use recourse_core::vds::Norm;

use crate::CliError;

/// Hidden width of the default architecture when `dims` is omitted.
pub const DEFAULT_HIDDEN: usize = 16;

/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    #[serde(rename = "E")]
    pub max_epsilon: f64,
    #[serde(rename = "T")]
    pub attack_steps: usize,
    #[serde(rename = "K")]
    pub unroll: usize,
    pub norm: Norm,
    pub optimizer: OptimizerKind,
    pub dropout: f64,
    pub epsilon_schedule: EpsilonSchedule,
    pub mode: Mode,
    pub seed: u64,
    pub test_fraction: f64,
    pub dims: Option<Dims>,
    pub first_order: bool,
    pub hard_validity_target: bool,
    pub vanillacf: VanillaCfConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            lambda3: t.lambda3,
            max_epsilon: t.max_epsilon,
            attack_steps: t.attack_steps,
            unroll: t.unroll,
            norm: t.norm,
            optimizer: t.optimizer,
            dropout: t.dropout,
            epsilon_schedule: t.epsilon_schedule,
            mode: t.mode,
            seed: t.seed,
            test_fraction: 0.2,
            dims: None,
            first_order: t.first_order,
            hard_validity_target: t.hard_validity_target,
            vanillacf: VanillaCfConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            max_epsilon: self.max_epsilon,
            attack_steps: self.attack_steps,
            unroll: self.unroll,
            norm: self.norm,
            mode: self.mode,
            optimizer: self.optimizer,
            dropout: self.dropout,
            epsilon_schedule: self.epsilon_schedule,
            seed: self.seed,
            first_order: self.first_order,
            hard_validity_target: self.hard_validity_target,
        }
    }

    /// Configured dims, or `[d,16,16] / [16,16] / [16,16]`.
    pub fn dims_for(&self, encoded_dim: usize) -> Dims {
        self.dims.clone().unwrap_or_else(|| Dims {
            encoder: vec![encoded_dim, DEFAULT_HIDDEN, DEFAULT_HIDDEN],
            predictor: vec![DEFAULT_HIDDEN, DEFAULT_HIDDEN],
            generator: vec![DEFAULT_HIDDEN, DEFAULT_HIDDEN],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_key_set_parses() {
        let c = RunConfig::from_json(
            r#"{"epochs": 50, "batch_size": 128, "lr": 0.003, "lambda1": 1.0, "lambda2": 0.2, "lambda3": 0.1,
                "E": 0.1, "T": 13, "K": 2, "norm": "linf", "optimizer": "adam", "dropout": 0.3,
                "epsilon_schedule": "linear", "mode": "robust", "seed": 1, "test_fraction": 0.2,
                "dims": {"encoder": [110, 200, 10], "predictor": [10, 10], "generator": [10, 10]}}"#,
        )
        .unwrap();
        assert_eq!(c.attack_steps, 13);
        assert_eq!(c.dims, Some(Dims::loan()));
        assert_eq!(c.train_config().lambda2, 0.2);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_json(r#"{"epochz": 3}"#).unwrap_err();
        assert!(matches!(&err, CliError::Usage(m) if m.contains("epochz")), "{err}");
    }

    #[test]
    fn bad_enum_value_is_rejected() {
        assert!(RunConfig::from_json(r#"{"mode": "fast"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"vanillacf": {"steps": 5, "rate": 1}}"#).is_err());
    }

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }
}
