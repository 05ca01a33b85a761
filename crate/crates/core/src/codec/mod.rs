//! Column typing, standardization and one-hot encoding of tabular rows.

mod encoder;
mod schema;
mod table;

use thiserror::Error;

pub use encoder::{argmax, Cell, ColumnCodec, EncodedColumn, Encoder, Row};
pub use schema::{Column, ColumnKind, TabularSchema};
pub use table::{infer_schema, is_missing, write_rows, Dataset, Table};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("column `{column}`: unseen category `{value}`")]
    UnseenCategory { column: String, value: String },
    #[error("row {row} has {got} cells, expected {expected}")]
    RowWidth {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("CSV error: {0}")]
    Csv(String),
}
