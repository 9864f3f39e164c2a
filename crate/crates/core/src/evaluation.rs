//! Counterfactual quality metrics, the leave-one-subset-out robustness
//! protocol, attack sweeps and the radius-schedule ablation.
//!
//! Protocol: for every subset `i` a model is trained on `D_i` train rows and
//! produces (hardened) counterfactuals for `D_i` test rows. Those are scored
//! for validity against model `i` and for robust validity against the
//! predictor-only models trained on every other subset's train rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamBlock, Value};
use crate::baselines::{vanilla_cf, VanillaCfConfig};
use crate::data::{DataError, ShiftedDataset, Split};
use crate::model::{class_of, Dims, ModelError, ModelParams};
use crate::rng::{self, derive_seed};
use crate::tensor::Matrix;
use crate::training::{accuracy, train, EpsilonSchedule, Mode, TrainConfig, TrainError};
use crate::vds::{vds_with_rng, AttackConfig, Norm};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("robust validity needs at least one shifted model")]
    NoShiftedModels,
    #[error("row mismatch: {0}")]
    Rows(String),
    #[error("protocol needs at least 2 subsets, got {0}")]
    TooFewSubsets(usize),
}

type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Joint network trained against shifted predictors.
    Rocoursenet,
    /// Joint network trained without the attacker.
    Counternet,
    /// Post-hoc search against a predictor-only model.
    Vanillacf,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rocoursenet" => Ok(Method::Rocoursenet),
            "counternet" => Ok(Method::Counternet),
            "vanillacf" => Ok(Method::Vanillacf),
            other => Err(format!("unknown method `{other}` (expected rocoursenet, counternet or vanillacf)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Rocoursenet => "rocoursenet",
            Method::Counternet => "counternet",
            Method::Vanillacf => "vanillacf",
        })
    }
}

fn flips<'a>(p_x: &'a [f64], p_cf: &'a [f64]) -> impl Iterator<Item = bool> + 'a {
    p_x.iter().zip(p_cf).map(|(&a, &b)| class_of(b) == 1 - class_of(a))
}

/// Fraction of rows whose counterfactual receives the opposite class.
pub fn validity_from(p_x: &[f64], p_cf: &[f64]) -> f64 {
    if p_x.is_empty() {
        return 0.0;
    }
    flips(p_x, p_cf).filter(|&v| v).count() as f64 / p_x.len() as f64
}

/// Mean over rows of the fraction of shifted predictions (one vector per
/// shifted model) that give the row's counterfactual the opposite of its
/// original class.
pub fn robust_validity_from(p_x: &[f64], shifted_p_cf: &[Vec<f64>]) -> Result<f64> {
    if shifted_p_cf.is_empty() {
        return Err(EvalError::NoShiftedModels);
    }
    if let Some(bad) = shifted_p_cf.iter().find(|p| p.len() != p_x.len()) {
        return Err(EvalError::Rows(format!("{} predictions for {} rows", bad.len(), p_x.len())));
    }
    if p_x.is_empty() {
        return Ok(0.0);
    }
    let m = shifted_p_cf.len() as f64;
    let total: f64 = (0..p_x.len())
        .map(|r| {
            let ok = shifted_p_cf.iter().filter(|p| class_of(p[r]) == 1 - class_of(p_x[r])).count();
            ok as f64 / m
        })
        .sum();
    Ok(total / p_x.len() as f64)
}

fn check_rows(x_cf: &Matrix, x: &Matrix) -> Result<()> {
    if x_cf.rows() != x.rows() || x_cf.cols() != x.cols() {
        return Err(EvalError::Rows(format!(
            "counterfactuals {}x{} vs inputs {}x{}",
            x_cf.rows(),
            x_cf.cols(),
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

pub fn validity(x_cf: &Matrix, x: &Matrix, model: &ModelParams) -> Result<f64> {
    check_rows(x_cf, x)?;
    Ok(validity_from(&model.predict(x)?, &model.predict(x_cf)?))
}

pub fn robust_validity(x_cf: &Matrix, x: &Matrix, original: &ModelParams, shifted: &[&ModelParams]) -> Result<f64> {
    check_rows(x_cf, x)?;
    let p_cf = shifted.iter().map(|m| m.predict(x_cf)).collect::<std::result::Result<Vec<_>, _>>()?;
    robust_validity_from(&original.predict(x)?, &p_cf)
}

/// Predictions of `original`'s architecture under other predictor weights.
pub fn predict_under(model: &ModelParams, theta_f: &ParamBlock, x: &Matrix) -> Result<Vec<f64>> {
    Ok(model.predict_with(&theta_f.detached(), &Value::from_matrix(x))?.data().to_vec())
}

/// Mean row-wise l1 distance.
pub fn proximity(x_cf: &Matrix, x: &Matrix) -> Result<f64> {
    check_rows(x_cf, x)?;
    if x.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = x_cf
        .row_iter()
        .zip(x.row_iter())
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>())
        .sum();
    Ok(total / x.rows() as f64)
}

/// Metrics of one subset's counterfactuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub subset: String,
    pub n_instances: usize,
    pub n_shifted_models: usize,
    pub validity: f64,
    pub robust_validity: f64,
    pub proximity: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub validity: f64,
    pub robust_validity: f64,
    pub proximity: f64,
    pub accuracy: f64,
}

/// Means across subsets with their (population) standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub validity: f64,
    pub robust_validity: f64,
    pub proximity: f64,
    pub accuracy: f64,
    pub stds: Dispersion,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Aggregate {
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let col = |f: fn(&MetricsRecord) -> f64| mean_std(&records.iter().map(f).collect::<Vec<_>>());
        let (validity, sv) = col(|r| r.validity);
        let (robust_validity, sr) = col(|r| r.robust_validity);
        let (proximity, sp) = col(|r| r.proximity);
        let (accuracy, sa) = col(|r| r.accuracy);
        Aggregate {
            validity,
            robust_validity,
            proximity,
            accuracy,
            stds: Dispersion {
                validity: sv,
                robust_validity: sr,
                proximity: sp,
                accuracy: sa,
            },
        }
    }
}

/// Report of one method under the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub dataset: String,
    pub k: usize,
    pub seed: u64,
    pub per_subset: Vec<MetricsRecord>,
    pub aggregate: Aggregate,
}

/// Everything the protocol needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub train: TrainConfig,
    pub dims: Dims,
    pub vanilla: VanillaCfConfig,
}

/// Seed of the models trained on subset `i` (shared by all methods, so
/// comparisons are paired).
pub fn subset_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, "protocol.subset", i as u64)
}

/// Predictor-only models, one per subset, trained on that subset's train rows.
pub fn train_subset_predictors(ds: &ShiftedDataset, cfg: &ProtocolConfig) -> Result<Vec<ModelParams>> {
    (0..ds.k())
        .into_par_iter()
        .map(|i| {
            let tc = TrainConfig {
                mode: Mode::PredictorOnly,
                seed: subset_seed(cfg.train.seed, i),
                ..cfg.train.clone()
            };
            Ok(train(&ds.subsets[i].train, &ds.schema, &cfg.dims, &tc)?.0)
        })
        .collect()
}

fn method_model(ds: &ShiftedDataset, cfg: &ProtocolConfig, method: Method, i: usize, predictors: &[ModelParams]) -> Result<ModelParams> {
    let mode = match method {
        Method::Rocoursenet => Mode::Robust,
        Method::Counternet => Mode::CounternetBaseline,
        Method::Vanillacf => return Ok(predictors[i].clone()),
    };
    let tc = TrainConfig {
        mode,
        seed: subset_seed(cfg.train.seed, i),
        ..cfg.train.clone()
    };
    Ok(train(&ds.subsets[i].train, &ds.schema, &cfg.dims, &tc)?.0)
}

fn counterfactuals(model: &ModelParams, method: Method, x: &Matrix, cfg: &ProtocolConfig) -> Result<Matrix> {
    match method {
        Method::Vanillacf => Ok(vanilla_cf(x, model, &model.theta_f(), Some(&model.schema), &cfg.vanilla)?.hard),
        _ => Ok(model.generate_cf_hard(x)?),
    }
}

/// Scores subset `i`'s counterfactuals.
pub fn score_subset(
    ds: &ShiftedDataset,
    i: usize,
    model: &ModelParams,
    x_cf: &Matrix,
    predictors: &[ModelParams],
) -> Result<MetricsRecord> {
    let test = &ds.subsets[i].test;
    let shifted: Vec<&ModelParams> = predictors.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, m)| m).collect();
    Ok(MetricsRecord {
        subset: ds.subsets[i].key.clone(),
        n_instances: test.len(),
        n_shifted_models: shifted.len(),
        validity: validity(x_cf, &test.x, model)?,
        robust_validity: robust_validity(x_cf, &test.x, model, &shifted)?,
        proximity: proximity(x_cf, &test.x)?,
        accuracy: accuracy(model, &test.x, &test.y)?,
    })
}

/// Runs the protocol for one method, reusing already trained per-subset
/// predictor-only models.
pub fn loo_protocol_with(
    ds: &ShiftedDataset,
    cfg: &ProtocolConfig,
    method: Method,
    predictors: &[ModelParams],
    dataset: &str,
) -> Result<MethodReport> {
    if ds.k() < 2 {
        return Err(EvalError::TooFewSubsets(ds.k()));
    }
    let per_subset = (0..ds.k())
        .into_par_iter()
        .map(|i| {
            let model = method_model(ds, cfg, method, i, predictors)?;
            let x_cf = counterfactuals(&model, method, &ds.subsets[i].test.x, cfg)?;
            score_subset(ds, i, &model, &x_cf, predictors)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodReport {
        method,
        dataset: dataset.to_string(),
        k: ds.k(),
        seed: cfg.train.seed,
        aggregate: Aggregate::from_records(&per_subset),
        per_subset,
    })
}

pub fn loo_protocol(ds: &ShiftedDataset, cfg: &ProtocolConfig, method: Method, dataset: &str) -> Result<MethodReport> {
    if ds.k() < 2 {
        return Err(EvalError::TooFewSubsets(ds.k()));
    }
    let predictors = train_subset_predictors(ds, cfg)?;
    loo_protocol_with(ds, cfg, method, &predictors, dataset)
}

/// One row of an attack sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "E")]
    pub epsilon: f64,
    pub norm: Norm,
    pub robust_validity: f64,
    pub proximity: f64,
    pub seed: u64,
}

/// Attack settings shared by every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub steps_grid: Vec<usize>,
    pub epsilon_grid: Vec<f64>,
    pub norm: Norm,
    pub unroll: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hard_target: bool,
}

/// Attacks `model` on `test` at every `(T, E)` grid point and scores the
/// model's hardened counterfactuals against each batch's shifted predictor.
pub fn attack_sweep(model: &ModelParams, test: &Split, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let x_cf = model.generate_cf_hard(&test.x)?;
    let prox = proximity(&x_cf, &test.x)?;
    let p_x = model.predict(&test.x)?;
    let theta_f = model.theta_f();
    let grid: Vec<(usize, f64)> = cfg
        .steps_grid
        .iter()
        .flat_map(|&t| cfg.epsilon_grid.iter().map(move |&e| (t, e)))
        .collect();
    grid.par_iter()
        .map(|&(steps, epsilon)| {
            let attack = AttackConfig {
                epsilon,
                steps,
                unroll: cfg.unroll,
                eta: cfg.eta,
                alpha: None,
                norm: cfg.norm,
                seed: cfg.seed,
                first_order: false,
                hard_target: cfg.hard_target,
            };
            let tag = format!("sweep.{steps}.{}", epsilon.to_bits());
            let mut valid = 0.0;
            let rows: Vec<usize> = (0..test.len()).collect();
            for (b, idx) in rows.chunks(cfg.batch_size.max(1)).enumerate() {
                let xb = test.x.select_rows(idx);
                let cfb = x_cf.select_rows(idx);
                let yb: Vec<f64> = idx.iter().map(|&i| test.y[i]).collect();
                let mut r = rng::stream(cfg.seed, &tag, b as u64);
                let out = vds_with_rng(model, &theta_f, &xb, &yb, &cfb, &attack, &mut r)?;
                let p_cf = predict_under(model, &out.shifted, &cfb)?;
                let p_xb: Vec<f64> = idx.iter().map(|&i| p_x[i]).collect();
                valid += validity_from(&p_xb, &p_cf) * idx.len() as f64;
            }
            Ok(SweepRow {
                steps,
                epsilon,
                norm: cfg.norm,
                robust_validity: if test.is_empty() { 0.0 } else { valid / test.len() as f64 },
                proximity: prox,
                seed: cfg.seed,
            })
        })
        .collect()
}

/// Sweep rows as CSV with header `T,E,norm,robust_validity,proximity,seed`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("sweep row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 csv")
}

/// Paired comparison of the two radius schedules for one `(E, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    #[serde(rename = "E")]
    pub epsilon: f64,
    pub seed: u64,
    pub linear_robust_validity: f64,
    pub static_robust_validity: f64,
    /// linear minus static
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    #[serde(rename = "E")]
    pub epsilon: f64,
    pub mean_difference: f64,
    pub std_difference: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
}

/// Trains robust models that differ only in the radius schedule and compares
/// their protocol robust validity, for every `E` in the grid and every seed.
/// `data` builds the dataset for a seed.
pub fn scheduler_ablation<F>(data: F, cfg: &ProtocolConfig, epsilon_grid: &[f64], seeds: &[u64]) -> Result<AblationReport>
where
    F: Fn(u64) -> Result<ShiftedDataset> + Sync,
{
    let mut rows = Vec::new();
    for &seed in seeds {
        let ds = data(seed)?;
        let base = ProtocolConfig {
            train: TrainConfig { seed, ..cfg.train.clone() },
            ..cfg.clone()
        };
        let predictors = train_subset_predictors(&ds, &base)?;
        for &e in epsilon_grid {
            let run = |schedule| {
                let c = ProtocolConfig {
                    train: TrainConfig {
                        max_epsilon: e,
                        epsilon_schedule: schedule,
                        mode: Mode::Robust,
                        ..base.train.clone()
                    },
                    ..base.clone()
                };
                loo_protocol_with(&ds, &c, Method::Rocoursenet, &predictors, "ablation").map(|r| r.aggregate.robust_validity)
            };
            let linear = run(EpsilonSchedule::Linear)?;
            let stat = run(EpsilonSchedule::Static)?;
            rows.push(AblationRow {
                epsilon: e,
                seed,
                linear_robust_validity: linear,
                static_robust_validity: stat,
                difference: linear - stat,
            });
        }
    }
    let summary = epsilon_grid
        .iter()
        .map(|&e| {
            let diffs: Vec<f64> = rows.iter().filter(|r| r.epsilon == e).map(|r| r.difference).collect();
            let (mean, std) = mean_std(&diffs);
            AblationSummary {
                epsilon: e,
                mean_difference: mean,
                std_difference: std,
                seeds: diffs.len(),
            }
        })
        .collect();
    Ok(AblationReport { rows, summary })
}
