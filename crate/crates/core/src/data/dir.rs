//! Dataset directories: `schema.json` (a [`DatasetSpec`]) next to one or more
//! CSV files.
//!
//! With a `subset_column` in `schema.json`, all CSV files are concatenated (in file
//! name order) and subsets come from that column. Without one, every CSV file
//! is a subset keyed by its file stem.

use std::path::Path;

use super::{partition_subsets, ranges_for, DataError, DatasetSpec, RawTable, ShiftedDataset, SubsetSource};

pub const SCHEMA_FILE: &str = "schema.json";

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `schema.json` and `<key>.csv` for each keyed table.
pub fn write_dataset_dir(dir: &Path, spec: &DatasetSpec, tables: &[(String, RawTable)]) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let schema_path = dir.join(SCHEMA_FILE);
    let mut json = serde_json::to_string_pretty(spec).map_err(|e| io_err(&schema_path, e))?;
    json.push('\n');
    std::fs::write(&schema_path, json).map_err(|e| io_err(&schema_path, e))?;
    for (key, table) in tables {
        table.write_csv(&dir.join(format!("{key}.csv")))?;
    }
    Ok(())
}

/// Reads the dataset spec and every CSV file (sorted by name) of a dataset directory.
pub fn read_dataset_dir(dir: &Path) -> Result<(DatasetSpec, Vec<(String, RawTable)>), DataError> {
    let schema_path = dir.join(SCHEMA_FILE);
    let text = std::fs::read_to_string(&schema_path).map_err(|e| io_err(&schema_path, e))?;
    let spec: DatasetSpec = serde_json::from_str(&text).map_err(|e| io_err(&schema_path, e))?;
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(io_err(dir, "no CSV files found"));
    }
    let tables = files
        .iter()
        .map(|p| {
            let key = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((key, RawTable::read_csv(p)?))
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok((spec, tables))
}

/// Loads, partitions and encodes a dataset directory.
pub fn load_dataset_dir(dir: &Path, test_fraction: f64, seed: u64) -> Result<ShiftedDataset, DataError> {
    let (spec, keyed) = read_dataset_dir(dir)?;
    let (keys, tables): (Vec<String>, Vec<RawTable>) = keyed.into_iter().unzip();
    let source = match &spec.subset_column {
        Some(col) => SubsetSource::Column(col.clone()),
        None => ranges_for(&tables, &keys),
    };
    partition_subsets(&RawTable::concat(&tables)?, &spec, &source, test_fraction, seed)
}
