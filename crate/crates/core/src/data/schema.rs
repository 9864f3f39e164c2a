use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, RawTable};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

/// A feature column as declared in a dataset description file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: ColumnKind,
}

/// Dataset description file: `{columns:[{name,kind}], label, subset_column}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub columns: Vec<ColumnDecl>,
    pub label: String,
    #[serde(default)]
    pub subset_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoding {
    /// Min-max scaled into one slot. `max == min` encodes to 0.
    Continuous { min: f64, max: f64 },
    /// One-hot over lexicographically ordered categories.
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    /// First encoded slot of this column.
    pub offset: usize,
    #[serde(flatten)]
    pub encoding: Encoding,
}

impl FeatureColumn {
    pub fn width(&self) -> usize {
        match &self.encoding {
            Encoding::Continuous { .. } => 1,
            Encoding::Categorical { categories } => categories.len(),
        }
    }
}

/// Contiguous run of encoded slots sharing an output treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Continuous { start: usize, len: usize },
    Categorical { start: usize, len: usize },
}

/// Decoded cell from [`FeatureSchema::inverse_transform`].
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Category(String),
}

/// Fitted encoding of the feature columns into `[0,1]^encoded_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<FeatureColumn>,
    pub encoded_dim: usize,
}

fn parse_number(column: &str, raw: &str) -> Result<f64, DataError> {
    if raw.is_empty() {
        return Err(DataError::MissingValue(column.to_string()));
    }
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::NotNumeric {
            column: column.to_string(),
            value: raw.to_string(),
        })
}

impl FeatureSchema {
    /// Fits ranges and category sets on `table` for the declared columns.
    pub fn fit(table: &RawTable, decls: &[ColumnDecl]) -> Result<Self, DataError> {
        if table.is_empty() {
            return Err(DataError::EmptyTable);
        }
        let mut columns = Vec::with_capacity(decls.len());
        let mut offset = 0;
        for decl in decls {
            let idx = table.column_index(&decl.name)?;
            let encoding = match decl.kind {
                ColumnKind::Continuous => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for row in &table.rows {
                        let v = parse_number(&decl.name, &row[idx])?;
                        min = min.min(v);
                        max = max.max(v);
                    }
                    Encoding::Continuous { min, max }
                }
                ColumnKind::Categorical => {
                    let mut seen = BTreeSet::new();
                    for row in &table.rows {
                        let v = &row[idx];
                        if v.is_empty() {
                            return Err(DataError::MissingValue(decl.name.clone()));
                        }
                        seen.insert(v.clone());
                    }
                    if seen.is_empty() {
                        return Err(DataError::EmptyDomain(decl.name.clone()));
                    }
                    Encoding::Categorical {
                        categories: seen.into_iter().collect(),
                    }
                }
            };
            let col = FeatureColumn {
                name: decl.name.clone(),
                offset,
                encoding,
            };
            offset += col.width();
            columns.push(col);
        }
        Ok(FeatureSchema {
            columns,
            encoded_dim: offset,
        })
    }

    /// `(start, len)` of every categorical column.
    pub fn group_spans(&self) -> Vec<(usize, usize)> {
        self.columns
            .iter()
            .filter(|c| matches!(c.encoding, Encoding::Categorical { .. }))
            .map(|c| (c.offset, c.width()))
            .collect()
    }

    /// Encoded layout with adjacent continuous slots merged.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        for c in &self.columns {
            match c.encoding {
                Encoding::Continuous { .. } => match out.last_mut() {
                    Some(Segment::Continuous { len, .. }) => *len += 1,
                    _ => out.push(Segment::Continuous {
                        start: c.offset,
                        len: 1,
                    }),
                },
                Encoding::Categorical { .. } => out.push(Segment::Categorical {
                    start: c.offset,
                    len: c.width(),
                }),
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical JSON form, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Encodes the declared columns of every row of `table`.
    ///
    /// Continuous values outside the fitted range are clamped into `[0,1]`.
    pub fn transform(&self, table: &RawTable) -> Result<Matrix, DataError> {
        let idx = self
            .columns
            .iter()
            .map(|c| table.column_index(&c.name))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Matrix::zeros(table.len(), self.encoded_dim);
        for (r, row) in table.rows.iter().enumerate() {
            let dst = out.row_mut(r);
            for (col, &i) in self.columns.iter().zip(&idx) {
                let raw = &row[i];
                match &col.encoding {
                    Encoding::Continuous { min, max } => {
                        let v = parse_number(&col.name, raw)?;
                        dst[col.offset] = if max > min {
                            ((v - min) / (max - min)).clamp(0.0, 1.0)
                        } else {
                            0.0
                        };
                    }
                    Encoding::Categorical { categories } => {
                        if raw.is_empty() {
                            return Err(DataError::MissingValue(col.name.clone()));
                        }
                        let pos = categories.binary_search(raw).map_err(|_| DataError::UnseenCategory {
                            column: col.name.clone(),
                            value: raw.clone(),
                        })?;
                        dst[col.offset + pos] = 1.0;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Decodes encoded rows. Categorical spans decode to their argmax.
    pub fn inverse_transform(&self, encoded: &Matrix) -> Result<Vec<Vec<Cell>>, DataError> {
        if encoded.cols() != self.encoded_dim {
            return Err(DataError::Width {
                expected: self.encoded_dim,
                found: encoded.cols(),
            });
        }
        Ok(encoded
            .row_iter()
            .map(|row| {
                self.columns
                    .iter()
                    .map(|col| match &col.encoding {
                        Encoding::Continuous { min, max } => Cell::Number(if max > min {
                            row[col.offset] * (max - min) + min
                        } else {
                            *min
                        }),
                        Encoding::Categorical { categories } => {
                            let span = &row[col.offset..col.offset + categories.len()];
                            Cell::Category(categories[argmax(span)].clone())
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// Rounds every categorical span to a one-hot at its argmax; continuous
    /// slots are left as they are.
    pub fn harden(&self, encoded: &Matrix) -> Matrix {
        let mut out = encoded.clone();
        let spans = self.group_spans();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for &(start, len) in &spans {
                let span = &mut row[start..start + len];
                let best = argmax(span);
                span.iter_mut().enumerate().for_each(|(i, v)| *v = if i == best { 1.0 } else { 0.0 });
            }
        }
        out
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(headers: &[&str], rows: &[&[&str]]) -> RawTable {
        RawTable::new(
            headers.iter().map(|s| s.to_string()).collect(),
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        )
    }

    fn decl(name: &str, kind: ColumnKind) -> ColumnDecl {
        ColumnDecl {
            name: name.into(),
            kind,
        }
    }

    #[test]
    fn continuous_range_is_min_max() {
        let t = table(&["v"], &[&["2"], &["4"], &["10"]]);
        let s = FeatureSchema::fit(&t, &[decl("v", ColumnKind::Continuous)]).unwrap();
        assert_eq!(s.columns[0].encoding, Encoding::Continuous { min: 2.0, max: 10.0 });
        let m = s.transform(&table(&["v"], &[&["4"], &["12"]])).unwrap();
        assert_eq!(m.data(), &[0.25, 1.0]);
    }

    #[test]
    fn categorical_span_and_one_hot() {
        let t = table(&["c"], &[&["b"], &["a"], &["b"]]);
        let s = FeatureSchema::fit(&t, &[decl("c", ColumnKind::Categorical)]).unwrap();
        assert_eq!(s.group_spans(), vec![(0, 2)]);
        let m = s.transform(&table(&["c"], &[&["b"]])).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0]);
    }

    #[test]
    fn unseen_category_names_column_and_value() {
        let t = table(&["c"], &[&["a"], &["b"]]);
        let s = FeatureSchema::fit(&t, &[decl("c", ColumnKind::Categorical)]).unwrap();
        let err = s.transform(&table(&["c"], &[&["z"]])).unwrap_err();
        assert_eq!(
            err,
            DataError::UnseenCategory {
                column: "c".into(),
                value: "z".into()
            }
        );
    }

    #[test]
    fn unknown_and_missing() {
        let t = table(&["a"], &[&["1"], &[""]]);
        assert_eq!(
            FeatureSchema::fit(&t, &[decl("b", ColumnKind::Continuous)]).unwrap_err(),
            DataError::UnknownColumn("b".into())
        );
        assert_eq!(
            FeatureSchema::fit(&t, &[decl("a", ColumnKind::Continuous)]).unwrap_err(),
            DataError::MissingValue("a".into())
        );
        assert_eq!(
            FeatureSchema::fit(&table(&["a"], &[]), &[decl("a", ColumnKind::Continuous)]).unwrap_err(),
            DataError::EmptyTable
        );
    }

    #[test]
    fn degenerate_range_encodes_zero() {
        let t = table(&["v"], &[&["3"], &["3"]]);
        let s = FeatureSchema::fit(&t, &[decl("v", ColumnKind::Continuous)]).unwrap();
        assert_eq!(s.transform(&t).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(s.inverse_transform(&Matrix::new(1, 1, vec![0.0])).unwrap()[0][0], Cell::Number(3.0));
    }

    #[test]
    fn spans_tile_the_encoding() {
        let t = table(&["x", "c", "y", "d"], &[&["1", "p", "2", "u"], &["3", "q", "0", "v"], &["2", "r", "5", "u"]]);
        let s = FeatureSchema::fit(
            &t,
            &[
                decl("x", ColumnKind::Continuous),
                decl("c", ColumnKind::Categorical),
                decl("y", ColumnKind::Continuous),
                decl("d", ColumnKind::Categorical),
            ],
        )
        .unwrap();
        assert_eq!(s.encoded_dim, 7);
        let mut covered = vec![0; s.encoded_dim];
        for c in &s.columns {
            for slot in c.offset..c.offset + c.width() {
                covered[slot] += 1;
            }
        }
        assert!(covered.iter().all(|&n| n == 1));
        assert_eq!(
            s.segments(),
            vec![
                Segment::Continuous { start: 0, len: 1 },
                Segment::Categorical { start: 1, len: 3 },
                Segment::Continuous { start: 4, len: 1 },
                Segment::Categorical { start: 5, len: 2 },
            ]
        );
        // round trip on training rows
        let enc = s.transform(&t).unwrap();
        let dec = s.inverse_transform(&enc).unwrap();
        for (row, raw) in dec.iter().zip(&t.rows) {
            for (cell, text) in row.iter().zip(raw) {
                match cell {
                    Cell::Number(v) => assert!((v - text.parse::<f64>().unwrap()).abs() < 1e-12),
                    Cell::Category(c) => assert_eq!(c, text),
                }
            }
        }
    }

    #[test]
    fn harden_picks_argmax() {
        let t = table(&["c"], &[&["a"], &["b"], &["c"]]);
        let s = FeatureSchema::fit(&t, &[decl("c", ColumnKind::Categorical)]).unwrap();
        let soft = Matrix::new(1, 3, vec![0.2, 0.5, 0.3]);
        assert_eq!(s.harden(&soft).data(), &[0.0, 1.0, 0.0]);
    }
}
