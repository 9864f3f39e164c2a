use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;

use super::{DataError, DatasetSpec, FeatureSchema, RawTable};
use crate::rng;
use crate::tensor::Matrix;

const MIN_SUBSET_ROWS: usize = 10;

/// Encoded features with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// Row index of each example in the source table.
    pub source_rows: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Split {
        Split {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            source_rows: idx.iter().map(|&i| self.source_rows[i]).collect(),
        }
    }

    pub fn concat(parts: &[&Split]) -> Split {
        let xs: Vec<&Matrix> = parts.iter().map(|s| &s.x).collect();
        Split {
            x: Matrix::vstack(&xs),
            y: parts.iter().flat_map(|s| s.y.iter().copied()).collect(),
            source_rows: parts.iter().flat_map(|s| s.source_rows.iter().copied()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub key: String,
    pub train: Split,
    pub test: Split,
}

/// Ordered subsets `D_1..D_k` sharing one fitted schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedDataset {
    pub subsets: Vec<Subset>,
    pub schema: FeatureSchema,
}

impl ShiftedDataset {
    pub fn k(&self) -> usize {
        self.subsets.len()
    }

    /// Training rows of every subset except `excluded`.
    pub fn complement_train(&self, excluded: usize) -> Split {
        let parts: Vec<&Split> = self
            .subsets
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != excluded)
            .map(|(_, s)| &s.train)
            .collect();
        Split::concat(&parts)
    }
}

/// How rows are assigned to subsets.
#[derive(Debug, Clone)]
pub enum SubsetSource {
    /// Group by the values of a column. Keys sort numerically when they all
    /// parse as numbers, lexicographically otherwise.
    Column(String),
    /// Explicit keyed row ranges, in the given order.
    Ranges(Vec<(String, Range<usize>)>),
}

fn parse_label(column: &str, raw: &str) -> Result<f64, DataError> {
    match raw.parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
        _ if raw.is_empty() => Err(DataError::MissingValue(column.to_string())),
        _ => Err(DataError::NonBinaryLabel {
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn group_rows(table: &RawTable, source: &SubsetSource) -> Result<Vec<(String, Vec<usize>)>, DataError> {
    match source {
        SubsetSource::Ranges(ranges) => {
            for (_, r) in ranges {
                if r.end > table.len() {
                    return Err(DataError::RowRange {
                        end: r.end,
                        rows: table.len(),
                    });
                }
            }
            Ok(ranges.iter().map(|(k, r)| (k.clone(), r.clone().collect())).collect())
        }
        SubsetSource::Column(name) => {
            let idx = table.column_index(name)?;
            let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (r, row) in table.rows.iter().enumerate() {
                if row[idx].is_empty() {
                    return Err(DataError::MissingValue(name.clone()));
                }
                groups.entry(row[idx].clone()).or_default().push(r);
            }
            let mut out: Vec<(String, Vec<usize>)> = groups.into_iter().collect();
            let numeric: Option<Vec<f64>> = out.iter().map(|(k, _)| k.parse::<f64>().ok()).collect();
            if let Some(keys) = numeric {
                let mut paired: Vec<_> = keys.into_iter().zip(out).collect();
                paired.sort_by(|a, b| a.0.total_cmp(&b.0));
                out = paired.into_iter().map(|(_, g)| g).collect();
            }
            Ok(out)
        }
    }
}

/// Splits `rows` into (train, test) with class proportions preserved.
///
/// The test size is `round(n * fraction)` clamped to `[1, n-1]`; it is shared
/// between classes by largest remainder.
fn stratified_split(rows: &[usize], labels: &[f64], fraction: f64, rng: &mut rng::Rng) -> (Vec<usize>, Vec<usize>) {
    let n = rows.len();
    let n_test = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &r in rows {
        classes[labels[r] as usize].push(r);
    }
    let exact: Vec<f64> = classes.iter().map(|c| c.len() as f64 * n_test as f64 / n as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = n_test - take.iter().sum::<usize>();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &c in order.iter().cycle().take(4) {
        if remaining == 0 {
            break;
        }
        if take[c] < classes[c].len() {
            take[c] += 1;
            remaining -= 1;
        }
    }
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (c, members) in classes.iter_mut().enumerate() {
        members.shuffle(rng);
        test.extend_from_slice(&members[..take[c]]);
        train.extend_from_slice(&members[take[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Partitions `table` into subsets, splits each into train and test, fits the
/// schema on the union of training rows and encodes everything with it.
pub fn partition_subsets(
    table: &RawTable,
    spec: &DatasetSpec,
    source: &SubsetSource,
    test_fraction: f64,
    seed: u64,
) -> Result<ShiftedDataset, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::TestFraction(test_fraction));
    }
    let label_idx = table.column_index(&spec.label)?;
    let labels = table
        .rows
        .iter()
        .map(|r| parse_label(&spec.label, &r[label_idx]))
        .collect::<Result<Vec<_>, _>>()?;
    let groups = group_rows(table, source)?;
    if groups.len() < 2 {
        return Err(DataError::TooFewSubsets(groups.len()));
    }
    let mut splits = Vec::with_capacity(groups.len());
    for (i, (key, rows)) in groups.iter().enumerate() {
        if rows.len() < MIN_SUBSET_ROWS {
            return Err(DataError::SubsetTooSmall {
                key: key.clone(),
                rows: rows.len(),
            });
        }
        let mut r = rng::stream(seed, "split", i as u64);
        splits.push(stratified_split(rows, &labels, test_fraction, &mut r));
    }

    let train_rows: Vec<usize> = splits.iter().flat_map(|(tr, _)| tr.iter().copied()).collect();
    let fit_table = RawTable::new(table.headers.clone(), train_rows.iter().map(|&r| table.rows[r].clone()).collect());
    let schema = FeatureSchema::fit(&fit_table, &spec.columns)?;

    let encode = |rows: &[usize]| -> Result<Split, DataError> {
        let sub = RawTable::new(table.headers.clone(), rows.iter().map(|&r| table.rows[r].clone()).collect());
        Ok(Split {
            x: schema.transform(&sub)?,
            y: rows.iter().map(|&r| labels[r]).collect(),
            source_rows: rows.to_vec(),
        })
    };
    let subsets = groups
        .iter()
        .zip(&splits)
        .map(|((key, _), (train, test))| {
            Ok(Subset {
                key: key.clone(),
                train: encode(train)?,
                test: encode(test)?,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(ShiftedDataset { subsets, schema })
}
