use std::path::Path;

use super::DataError;

/// Untyped CSV contents: a header row and string cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Self {
        RawTable { headers, rows }
    }

    pub fn read_csv(path: &Path) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| DataError::Csv {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| DataError::Csv {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| DataError::Csv {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            rows.push(record.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(RawTable { headers, rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let to_err = |e: csv::Error| DataError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut writer = csv::Writer::from_path(path).map_err(to_err)?;
        writer.write_record(&self.headers).map_err(to_err)?;
        for row in &self.rows {
            writer.write_record(row).map_err(to_err)?;
        }
        writer.flush().map_err(|e| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends the rows of tables with identical headers.
    pub fn concat(tables: &[RawTable]) -> Result<RawTable, DataError> {
        let Some(first) = tables.first() else {
            return Ok(RawTable::default());
        };
        let mut out = first.clone();
        for t in &tables[1..] {
            if t.headers != first.headers {
                return Err(DataError::HeaderMismatch {
                    expected: first.headers.clone(),
                    found: t.headers.clone(),
                });
            }
            out.rows.extend(t.rows.iter().cloned());
        }
        Ok(out)
    }
}
