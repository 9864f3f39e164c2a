//! JSON checkpoint container.
//!
//! ```text
//! {
//!   "format": "recourse-checkpoint/1",
//!   "dims": {"encoder": [...], "predictor": [...], "generator": [...]},
//!   "schema": { fitted feature schema },
//!   "schema_hash": "<hex sha256 of the schema's compact JSON>",
//!   "blocks": {
//!     "encoder":   [{"name": "encoder.0.weight", "shape": [in, out], "data": [...]}, ...],
//!     "predictor": [...],
//!     "generator": [...]          // empty for predictor-only models
//!   }
//! }
//! ```
//!
//! Weights are row-major `[fan_in, fan_out]`. Floats are written in shortest
//! round-trip form and parsed exactly, so load(save(m)) is bit-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, ModelError, ModelParams, Result};
use crate::autodiff::{ParamBlock, Value};
use crate::data::FeatureSchema;

pub const CHECKPOINT_FORMAT: &str = "recourse-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Blocks {
    encoder: Vec<TensorRecord>,
    predictor: Vec<TensorRecord>,
    generator: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    format: String,
    dims: Dims,
    schema: FeatureSchema,
    schema_hash: String,
    blocks: Blocks,
}

fn records(block: &ParamBlock) -> Vec<TensorRecord> {
    block
        .iter()
        .map(|(name, t)| TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

fn restore(records: &[TensorRecord], reference: &ParamBlock, block: &str) -> Result<ParamBlock> {
    if records.len() != reference.len() {
        return Err(ModelError::Checkpoint(format!(
            "{block}: expected {} tensors, found {}",
            reference.len(),
            records.len()
        )));
    }
    let mut out = ParamBlock::new();
    for (rec, (name, t)) in records.iter().zip(reference.iter()) {
        if rec.name != name || rec.shape != t.shape() || rec.data.len() != t.len() {
            return Err(ModelError::Checkpoint(format!(
                "{block}: tensor `{}` {:?} does not match expected `{name}` {:?}",
                rec.name,
                rec.shape,
                t.shape()
            )));
        }
        out.push(name, Value::variable(rec.data.clone(), &rec.shape));
    }
    Ok(out)
}

impl Checkpoint {
    pub fn from_model(model: &ModelParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            dims: model.dims.clone(),
            schema: model.schema.clone(),
            schema_hash: model.schema.fingerprint(),
            blocks: Blocks {
                encoder: records(&model.theta_h),
                predictor: records(&model.theta_m),
                generator: records(&model.theta_g),
            },
        }
    }

    pub fn into_model(self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unsupported format `{}`", self.format)));
        }
        if self.schema.fingerprint() != self.schema_hash {
            return Err(ModelError::Checkpoint("schema hash mismatch".into()));
        }
        // shapes and names come from a reference initialisation
        let reference = ModelParams::init(&self.dims, &self.schema, 0)?;
        let theta_h = restore(&self.blocks.encoder, &reference.theta_h, "encoder")?;
        let theta_m = restore(&self.blocks.predictor, &reference.theta_m, "predictor")?;
        let theta_g = if self.blocks.generator.is_empty() {
            ParamBlock::new()
        } else {
            restore(&self.blocks.generator, &reference.theta_g, "generator")?
        };
        Ok(ModelParams {
            theta_h,
            theta_m,
            theta_g,
            dims: self.dims,
            schema: self.schema,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(self).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, Checkpoint::from_model(model).to_bytes()).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Checkpoint::from_bytes(&bytes)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::mixed_schema;

    fn model() -> ModelParams {
        let dims = Dims {
            encoder: vec![5, 7, 3],
            predictor: vec![3, 2],
            generator: vec![3, 4],
        };
        ModelParams::init(&dims, &mixed_schema(), 77).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = Checkpoint::from_model(&m).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_model().unwrap();
        assert!(back.theta_h.bit_equal(&m.theta_h));
        assert!(back.theta_m.bit_equal(&m.theta_m));
        assert!(back.theta_g.bit_equal(&m.theta_g));
        assert_eq!(back.schema, m.schema);
        assert_eq!(Checkpoint::from_model(&back).to_bytes(), bytes);
    }

    #[test]
    fn predictor_only_has_no_generator_tensors() {
        let m = model().without_generator();
        let ck = Checkpoint::from_model(&m);
        assert!(ck.blocks.generator.is_empty());
        assert!(!ck.into_model().unwrap().has_generator());
    }

    #[test]
    fn tampering_is_detected() {
        let mut ck = Checkpoint::from_model(&model());
        ck.schema_hash = "00".into();
        assert!(ck.clone().into_model().is_err());
        let mut ck = Checkpoint::from_model(&model());
        ck.blocks.encoder.pop();
        assert!(ck.into_model().is_err());
        let mut ck = Checkpoint::from_model(&model());
        ck.format = "other".into();
        assert!(ck.into_model().is_err());
    }
}
