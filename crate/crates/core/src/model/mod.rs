//! Joint predictor / counterfactual-generator network.
//!
//! A shared encoder feeds two heads. The predictor head ends in one sigmoid
//! unit. The generator head sees the encoder output concatenated with the
//! (detached) predicted probability and emits a row in encoded feature space:
//! sigmoid on continuous slots, softmax on each categorical span.
//!
//! Parameters are split into three blocks: encoder (`theta_h`), predictor
//! head (`theta_m`) and generator head (`theta_g`). The predictive model
//! `theta_f` is encoder followed by predictor head, and is what the shift
//! attacker perturbs.

mod checkpoint;
mod losses;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamBlock, Value};
use crate::data::{FeatureSchema, Segment};
use crate::rng::{self, Rng};
use crate::tensor::Matrix;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use losses::{losses, prediction_loss, proximity_loss, validity_loss, validity_target, LossTerms};

/// Negative-side slope of the hidden-layer activation.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid dimensions: {0}")]
    Dims(String),
    #[error("model has no generator parameters")]
    NoGenerator,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

type Result<T> = std::result::Result<T, ModelError>;

/// Layer widths of each block.
///
/// `encoder[0]` is the encoded input width. `predictor[0]` and
/// `generator[0]` equal the encoder output width. The width-1 sigmoid output
/// of the predictor and the width-`encoded_dim` output of the generator are
/// appended after the listed widths, and the generator's first layer takes
/// one extra input (the predicted probability).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub encoder: Vec<usize>,
    pub predictor: Vec<usize>,
    pub generator: Vec<usize>,
}

impl Dims {
    /// Loan: encoder [110,200,10], predictor [10,10], generator [10,10].
    pub fn loan() -> Self {
        Dims {
            encoder: vec![110, 200, 10],
            predictor: vec![10, 10],
            generator: vec![10, 10],
        }
    }

    /// German Credit: encoder [19,100,10], predictor [10,20], generator [10,20].
    pub fn german_credit() -> Self {
        Dims {
            encoder: vec![19, 100, 10],
            predictor: vec![10, 20],
            generator: vec![10, 20],
        }
    }

    /// Student: encoder [83,50,10], predictor [10,10], generator [10,50].
    pub fn student() -> Self {
        Dims {
            encoder: vec![83, 50, 10],
            predictor: vec![10, 10],
            generator: vec![10, 50],
        }
    }

    pub fn validate(&self, encoded_dim: usize) -> Result<()> {
        let err = |m: String| Err(ModelError::Dims(m));
        if self.encoder.len() < 2 {
            return err(format!("encoder needs input and output widths, got {:?}", self.encoder));
        }
        if self.predictor.is_empty() || self.generator.is_empty() {
            return err("predictor and generator need at least their input width".into());
        }
        if self.encoder.iter().chain(&self.predictor).chain(&self.generator).any(|&w| w == 0) {
            return err("zero-width layer".into());
        }
        if self.encoder[0] != encoded_dim {
            return err(format!("encoder input {} != encoded width {encoded_dim}", self.encoder[0]));
        }
        let latent = *self.encoder.last().unwrap();
        if self.predictor[0] != latent || self.generator[0] != latent {
            return err(format!(
                "predictor input {} and generator input {} must equal encoder output {latent}",
                self.predictor[0], self.generator[0]
            ));
        }
        Ok(())
    }

    fn encoder_layers(&self) -> usize {
        self.encoder.len() - 1
    }
}

/// Dropout applied after hidden layers during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, x: Value) -> Result<Value> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let mask = (0..x.len())
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Ok(x.mul(&Value::constant(mask, x.shape()))?)
    }
}

fn init_layers(block: &mut ParamBlock, prefix: &str, widths: &[(usize, usize)], r: &mut Rng) {
    for (i, &(fan_in, fan_out)) in widths.iter().enumerate() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| r.random_range(-bound..bound)).collect();
        let b = (0..fan_out).map(|_| r.random_range(-bound..bound)).collect();
        block.push(format!("{prefix}.{i}.weight"), Value::variable(w, &[fan_in, fan_out]));
        block.push(format!("{prefix}.{i}.bias"), Value::variable(b, &[fan_out]));
    }
}

fn linear(block: &ParamBlock, layer: usize, x: &Value) -> Result<Value> {
    Ok(x.matmul(block.get(2 * layer))?.add_row_broadcast(block.get(2 * layer + 1))?)
}

/// Hidden stack: every layer is affine + leaky rectifier (+ dropout).
fn hidden_stack(block: &ParamBlock, layers: std::ops::Range<usize>, mut x: Value, dropout: &mut Option<Dropout>) -> Result<Value> {
    for l in layers {
        x = linear(block, l, &x)?.leaky_relu(LEAKY_SLOPE);
        if let Some(d) = dropout.as_mut() {
            x = d.apply(x)?;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub theta_h: ParamBlock,
    pub theta_m: ParamBlock,
    pub theta_g: ParamBlock,
    pub dims: Dims,
    pub schema: FeatureSchema,
}

impl ModelParams {
    /// Uniform fan-in initialisation, deterministic in `seed`.
    pub fn init(dims: &Dims, schema: &FeatureSchema, seed: u64) -> Result<Self> {
        dims.validate(schema.encoded_dim)?;
        let pairs = |w: &[usize]| w.windows(2).map(|p| (p[0], p[1])).collect::<Vec<_>>();

        let mut theta_h = ParamBlock::new();
        init_layers(&mut theta_h, "encoder", &pairs(&dims.encoder), &mut rng::stream(seed, "init.encoder", 0));

        let mut pred = pairs(&dims.predictor);
        pred.push((*dims.predictor.last().unwrap(), 1));
        let mut theta_m = ParamBlock::new();
        init_layers(&mut theta_m, "predictor", &pred, &mut rng::stream(seed, "init.predictor", 0));

        let mut gen_widths = dims.generator.clone();
        gen_widths[0] += 1;
        let mut gen = pairs(&gen_widths);
        gen.push((*gen_widths.last().unwrap(), schema.encoded_dim));
        let mut theta_g = ParamBlock::new();
        init_layers(&mut theta_g, "generator", &gen, &mut rng::stream(seed, "init.generator", 0));

        Ok(ModelParams {
            theta_h,
            theta_m,
            theta_g,
            dims: dims.clone(),
            schema: schema.clone(),
        })
    }

    /// Encoder followed by predictor head.
    pub fn theta_f(&self) -> ParamBlock {
        self.theta_h.chain(&self.theta_m)
    }

    /// Writes a (possibly updated) `theta_f` back into the encoder and
    /// predictor blocks.
    pub fn set_theta_f(&mut self, theta_f: ParamBlock) {
        let (h, m) = theta_f.split_at(self.theta_h.len());
        self.theta_h = h;
        self.theta_m = m;
    }

    pub fn has_generator(&self) -> bool {
        !self.theta_g.is_empty()
    }

    /// Drops the generator block (predictor-only models).
    pub fn without_generator(mut self) -> Self {
        self.theta_g = ParamBlock::new();
        self
    }

    fn split_f(&self, theta_f: &ParamBlock) -> (ParamBlock, ParamBlock) {
        theta_f.split_at(2 * self.dims.encoder_layers())
    }

    /// Encoder output and predicted probability `[n,1]` under `theta_f`.
    pub fn forward_f(&self, theta_f: &ParamBlock, x: &Value, dropout: &mut Option<Dropout>) -> Result<(Value, Value)> {
        let (h, m) = self.split_f(theta_f);
        let latent = hidden_stack(&h, 0..self.dims.encoder_layers(), x.clone(), dropout)?;
        let hidden = self.dims.predictor.len() - 1;
        let z = hidden_stack(&m, 0..hidden, latent.clone(), dropout)?;
        let p = linear(&m, hidden, &z)?.sigmoid();
        Ok((latent, p))
    }

    /// `f(x; theta_f)` as a `[n,1]` value.
    pub fn predict_with(&self, theta_f: &ParamBlock, x: &Value) -> Result<Value> {
        Ok(self.forward_f(theta_f, x, &mut None)?.1)
    }

    /// Probabilities for every row of `x`, without dropout.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let p = self.predict_with(&self.theta_f().detached(), &Value::from_matrix(x))?;
        Ok(p.data().to_vec())
    }

    /// Counterfactuals from the generator, given the encoder output and the
    /// predicted probability (fed to the generator detached).
    fn generator_head(&self, theta_g: &ParamBlock, latent: &Value, p: &Value, dropout: &mut Option<Dropout>) -> Result<Value> {
        if theta_g.is_empty() {
            return Err(ModelError::NoGenerator);
        }
        let input = Value::concat_cols(&[latent.clone(), p.detach()])?;
        let hidden = self.dims.generator.len() - 1;
        let z = hidden_stack(theta_g, 0..hidden, input, dropout)?;
        let raw = linear(theta_g, hidden, &z)?;
        let parts = self
            .schema
            .segments()
            .into_iter()
            .map(|seg| match seg {
                Segment::Continuous { start, len } => Ok(raw.slice_cols(start, len)?.sigmoid()),
                Segment::Categorical { start, len } => Ok(raw.slice_cols(start, len)?.softmax()?),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Value::concat_cols(&parts)?)
    }

    /// Soft counterfactuals `[n, encoded_dim]` under the given blocks.
    pub fn generate_cf_with(
        &self,
        theta_f: &ParamBlock,
        theta_g: &ParamBlock,
        x: &Value,
        dropout: &mut Option<Dropout>,
    ) -> Result<Value> {
        let (latent, p) = self.forward_f(theta_f, x, dropout)?;
        self.generator_head(theta_g, &latent, &p, dropout)
    }

    /// Soft counterfactuals for every row of `x`, without dropout.
    pub fn generate_cf(&self, x: &Matrix) -> Result<Matrix> {
        let cf = self.generate_cf_with(&self.theta_f().detached(), &self.theta_g.detached(), &Value::from_matrix(x), &mut None)?;
        Ok(cf.to_matrix()?)
    }

    /// Counterfactuals with each categorical span rounded to its argmax.
    pub fn generate_cf_hard(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.schema.harden(&self.generate_cf(x)?))
    }
}

/// Class decision: 1 iff `p >= 0.5`.
pub fn class_of(p: f64) -> u8 {
    u8::from(p >= 0.5)
}
