use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::{partition_subsets, ColumnDecl, ColumnKind, DataError, DatasetSpec, RawTable, ShiftedDataset, SubsetSource};
use crate::rng;

/// Two interleaved crescents per subset; subset `i` is rotated about the
/// origin by `i * rotation_deg`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoonsConfig {
    pub k: usize,
    pub n: usize,
    pub rotation_deg: f64,
    pub noise: f64,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        MoonsConfig {
            k: 3,
            n: 400,
            rotation_deg: 30.0,
            noise: 0.1,
            seed: 0,
            test_fraction: 0.2,
        }
    }
}

pub const MOONS_FEATURES: [&str; 2] = ["x1", "x2"];
pub const MOONS_LABEL: &str = "y";

/// Dataset description matching the tables from [`moons_tables`].
pub fn moons_spec() -> DatasetSpec {
    DatasetSpec {
        columns: MOONS_FEATURES
            .iter()
            .map(|n| ColumnDecl {
                name: n.to_string(),
                kind: ColumnKind::Continuous,
            })
            .collect(),
        label: MOONS_LABEL.to_string(),
        subset_column: None,
    }
}

fn validate(cfg: &MoonsConfig) -> Result<(), DataError> {
    if cfg.k < 2 {
        return Err(DataError::TooFewSubsets(cfg.k));
    }
    if cfg.n < 40 {
        return Err(DataError::SubsetTooSmall {
            key: "moons".into(),
            rows: cfg.n,
        });
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(DataError::InvalidParameter(format!("noise {}", cfg.noise)));
    }
    Ok(())
}

/// One raw table per subset, columns `x1,x2,y`, values in original units.
pub fn moons_tables(cfg: &MoonsConfig) -> Result<Vec<RawTable>, DataError> {
    validate(cfg)?;
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    let headers: Vec<String> = MOONS_FEATURES.iter().map(|s| s.to_string()).chain([MOONS_LABEL.to_string()]).collect();
    let mut tables = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let mut r = rng::stream(cfg.seed, "moons", i as u64);
        let angle = (i as f64 * cfg.rotation_deg).to_radians();
        let (sin, cos) = angle.sin_cos();
        let n_outer = cfg.n / 2;
        let mut rows: Vec<(f64, f64, u8)> = Vec::with_capacity(cfg.n);
        for j in 0..cfg.n {
            let t = r.random::<f64>() * std::f64::consts::PI;
            let (mut a, mut b, label) = if j < n_outer {
                (t.cos(), t.sin(), 0)
            } else {
                (1.0 - t.cos(), 0.5 - t.sin(), 1)
            };
            a += normal.sample(&mut r);
            b += normal.sample(&mut r);
            rows.push((cos * a - sin * b, sin * a + cos * b, label));
        }
        rows.shuffle(&mut r);
        tables.push(RawTable::new(
            headers.clone(),
            rows.into_iter()
                .map(|(a, b, l)| vec![format!("{a}"), format!("{b}"), l.to_string()])
                .collect(),
        ));
    }
    Ok(tables)
}

/// Keyed row ranges for tables that were concatenated in order.
pub fn ranges_for(tables: &[RawTable], keys: &[String]) -> SubsetSource {
    let mut start = 0;
    SubsetSource::Ranges(
        tables
            .iter()
            .zip(keys)
            .map(|(t, k)| {
                let r = start..start + t.len();
                start = r.end;
                (k.clone(), r)
            })
            .collect(),
    )
}

/// Synthetic shifted dataset: generates, splits and encodes the moons subsets.
pub fn synth_shifted_moons(cfg: &MoonsConfig) -> Result<ShiftedDataset, DataError> {
    let tables = moons_tables(cfg)?;
    let keys: Vec<String> = (0..cfg.k).map(|i| i.to_string()).collect();
    let source = ranges_for(&tables, &keys);
    partition_subsets(&RawTable::concat(&tables)?, &moons_spec(), &source, cfg.test_fraction, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = MoonsConfig {
            n: 60,
            seed: 11,
            ..Default::default()
        };
        let a = synth_shifted_moons(&cfg).unwrap();
        let b = synth_shifted_moons(&cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_shifted_moons(&MoonsConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.subsets[0].train.x, c.subsets[0].train.x);
    }

    #[test]
    fn encoded_into_unit_box() {
        let ds = synth_shifted_moons(&MoonsConfig::default()).unwrap();
        assert_eq!(ds.k(), 3);
        assert_eq!(ds.schema.encoded_dim, 2);
        for s in &ds.subsets {
            assert_eq!(s.train.len() + s.test.len(), 400);
            for v in s.train.x.data().iter().chain(s.test.x.data()) {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(
            synth_shifted_moons(&MoonsConfig { k: 1, ..Default::default() }),
            Err(DataError::TooFewSubsets(1))
        ));
        assert!(synth_shifted_moons(&MoonsConfig { n: 39, ..Default::default() }).is_err());
    }

    #[test]
    fn mean_drift_grows_with_rotation_index() {
        let ds = synth_shifted_moons(&MoonsConfig {
            k: 3,
            n: 400,
            rotation_deg: 30.0,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let means: Vec<Vec<f64>> = ds
            .subsets
            .iter()
            .map(|s| crate::tensor::Matrix::vstack(&[&s.train.x, &s.test.x]).column_means())
            .collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d1 = dist(&means[0], &means[1]);
        let d2 = dist(&means[0], &means[2]);
        assert!(d1 > 0.02, "{d1}");
        assert!(d2 > d1, "{d2} <= {d1}");
    }
}
