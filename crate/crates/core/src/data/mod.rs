//! CSV ingestion, feature encoding into `[0,1]`, subset partitioning and
//! synthetic shifted data.

mod dir;
mod partition;
mod schema;
mod synth;
mod table;

use thiserror::Error;

pub use dir::{load_dataset_dir, read_dataset_dir, write_dataset_dir, SCHEMA_FILE};
pub use partition::{partition_subsets, ShiftedDataset, Split, Subset, SubsetSource};
pub use schema::{argmax, Cell, ColumnDecl, ColumnKind, DatasetSpec, Encoding, FeatureColumn, FeatureSchema, Segment};
pub use synth::{moons_spec, moons_tables, ranges_for, synth_shifted_moons, MoonsConfig, MOONS_FEATURES, MOONS_LABEL};
pub use table::RawTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("missing value in column `{0}`")]
    MissingValue(String),
    #[error("column `{column}`: `{value}` is not a finite number")]
    NotNumeric { column: String, value: String },
    #[error("categorical column `{0}` has no values")]
    EmptyDomain(String),
    #[error("column `{column}`: unseen category `{value}`")]
    UnseenCategory { column: String, value: String },
    #[error("label column `{column}`: `{value}` is not 0 or 1")]
    NonBinaryLabel { column: String, value: String },
    #[error("table has no rows")]
    EmptyTable,
    #[error("need at least 2 subsets, found {0}")]
    TooFewSubsets(usize),
    #[error("subset `{key}` has {rows} rows, need at least 10")]
    SubsetTooSmall { key: String, rows: usize },
    #[error("test fraction must lie in (0, 1), got {0}")]
    TestFraction(f64),
    #[error("row range ends at {end} but table has {rows} rows")]
    RowRange { end: usize, rows: usize },
    #[error("encoded width {found} does not match schema width {expected}")]
    Width { expected: usize, found: usize },
    #[error("csv headers differ: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
