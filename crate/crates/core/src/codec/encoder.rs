use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grad::Matrix;

use super::{CodecError, ColumnKind, TabularSchema};

/// One raw cell of a modeled column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Number(f64),
    Category(String),
}

impl Cell {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Cell::Category(s) => Some(s),
            Cell::Number(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Number(v) => write!(f, "{v}"),
            Cell::Category(s) => f.write_str(s),
        }
    }
}

/// A raw row over the modeled columns, in schema order.
pub type Row = Vec<Cell>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnCodec {
    Continuous { mean: f64, std: f64 },
    Categorical { categories: Vec<String> },
}

/// Where a modeled column lives in the ambient vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub start: usize,
    pub width: usize,
    pub codec: ColumnCodec,
}

impl EncodedColumn {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.codec, ColumnCodec::Categorical { .. })
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        match &self.codec {
            ColumnCodec::Categorical { categories } => categories.iter().position(|c| c == value),
            ColumnCodec::Continuous { .. } => None,
        }
    }

    /// Maps a raw continuous value to standardized units.
    pub fn standardize(&self, v: f64) -> Option<f64> {
        match self.codec {
            ColumnCodec::Continuous { mean, std } => Some((v - mean) / std),
            ColumnCodec::Categorical { .. } => None,
        }
    }
}

/// Fitted map between raw rows and ambient vectors in `R^d`.
///
/// Continuous columns are standardized with the training mean and the
/// population standard deviation; categorical columns become one-hot blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    schema: TabularSchema,
    columns: Vec<EncodedColumn>,
    dim: usize,
}

impl Encoder {
    /// Fits on clean training rows (modeled columns only, schema order).
    pub fn fit(schema: &TabularSchema, rows: &[Row]) -> Result<Self, CodecError> {
        schema.validate()?;
        if rows.len() < 2 {
            return Err(CodecError::Fit(format!(
                "need at least 2 rows to fit, got {}",
                rows.len()
            )));
        }
        let modeled: Vec<_> = schema.modeled().collect();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != modeled.len() {
                return Err(CodecError::RowWidth {
                    row: i,
                    expected: modeled.len(),
                    got: r.len(),
                });
            }
        }

        let mut columns = Vec::with_capacity(modeled.len());
        let mut start = 0;
        for (ci, col) in modeled.iter().enumerate() {
            let (codec, width) = match &col.kind {
                ColumnKind::Continuous => {
                    let mut vals = Vec::with_capacity(rows.len());
                    for (ri, r) in rows.iter().enumerate() {
                        match &r[ci] {
                            Cell::Number(v) if v.is_finite() => vals.push(*v),
                            other => {
                                return Err(CodecError::Fit(format!(
                                "row {ri}, column `{}`: expected a finite number, got `{other}`",
                                col.name
                            )))
                            }
                        }
                    }
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = var.sqrt();
                    if std.is_nan() || std <= 0.0 {
                        return Err(CodecError::Fit(format!(
                            "column `{}` is constant (zero variance)",
                            col.name
                        )));
                    }
                    (ColumnCodec::Continuous { mean, std }, 1)
                }
                ColumnKind::Categorical {
                    cardinality,
                    categories,
                } => {
                    let mut observed = BTreeSet::new();
                    for (ri, r) in rows.iter().enumerate() {
                        match &r[ci] {
                            Cell::Category(s) => {
                                observed.insert(s.clone());
                            }
                            Cell::Number(v) => {
                                return Err(CodecError::Fit(format!(
                                    "row {ri}, column `{}`: expected a category, got number {v}",
                                    col.name
                                )))
                            }
                        }
                    }
                    let cats: Vec<String> = match categories {
                        Some(listed) => {
                            if let Some(extra) = observed.iter().find(|o| !listed.contains(o)) {
                                return Err(CodecError::UnseenCategory {
                                    column: col.name.clone(),
                                    value: extra.clone(),
                                });
                            }
                            listed.clone()
                        }
                        None => {
                            let cats: Vec<String> = observed.into_iter().collect();
                            if let Some(k) = cardinality {
                                if *k != cats.len() {
                                    return Err(CodecError::Fit(format!(
                                        "column `{}` declares cardinality {k} but the data has {} \
                                         distinct values; list the categories explicitly",
                                        col.name,
                                        cats.len()
                                    )));
                                }
                            }
                            cats
                        }
                    };
                    let k = cats.len();
                    (ColumnCodec::Categorical { categories: cats }, k)
                }
            };
            columns.push(EncodedColumn {
                name: col.name.clone(),
                start,
                width,
                codec,
            });
            start += width;
        }
        Ok(Self {
            schema: schema.clone(),
            columns,
            dim: start,
        })
    }

    /// Rebuilds an encoder from persisted parts, checking the layout.
    pub fn from_parts(
        schema: TabularSchema,
        columns: Vec<EncodedColumn>,
    ) -> Result<Self, CodecError> {
        schema.validate()?;
        let modeled: Vec<_> = schema.modeled().collect();
        if modeled.len() != columns.len() {
            return Err(CodecError::Schema(
                "encoder/schema column count mismatch".into(),
            ));
        }
        let mut start = 0;
        for (m, c) in modeled.iter().zip(&columns) {
            let width_ok = match &c.codec {
                ColumnCodec::Continuous { std, .. } => c.width == 1 && *std > 0.0,
                ColumnCodec::Categorical { categories } => {
                    c.width == categories.len() && categories.len() >= 2
                }
            };
            if m.name != c.name
                || c.start != start
                || !width_ok
                || m.kind.is_categorical() != c.is_categorical()
            {
                return Err(CodecError::Schema(format!(
                    "inconsistent layout at column `{}`",
                    c.name
                )));
            }
            start += c.width;
        }
        Ok(Self {
            schema,
            columns,
            dim: start,
        })
    }

    pub fn schema(&self) -> &TabularSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[EncodedColumn] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<(usize, &EncodedColumn)> {
        self.columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encode(&self, row: &[Cell]) -> Result<Matrix, CodecError> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(row, &mut out, 0)?;
        Ok(Matrix::row_vector(out))
    }

    pub fn encode_rows(&self, rows: &[Row]) -> Result<Matrix, CodecError> {
        let mut out = Matrix::zeros(rows.len(), self.dim);
        for (i, r) in rows.iter().enumerate() {
            self.encode_into(r, out.row_mut(i), i)?;
        }
        Ok(out)
    }

    fn encode_into(&self, row: &[Cell], out: &mut [f64], row_idx: usize) -> Result<(), CodecError> {
        if row.len() != self.columns.len() {
            return Err(CodecError::RowWidth {
                row: row_idx,
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        for (col, cell) in self.columns.iter().zip(row) {
            match (&col.codec, cell) {
                (ColumnCodec::Continuous { mean, std }, Cell::Number(v)) if v.is_finite() => {
                    out[col.start] = (v - mean) / std;
                }
                (ColumnCodec::Categorical { categories }, Cell::Category(s)) => {
                    let k = categories.iter().position(|c| c == s).ok_or_else(|| {
                        CodecError::UnseenCategory {
                            column: col.name.clone(),
                            value: s.clone(),
                        }
                    })?;
                    out[col.start + k] = 1.0;
                }
                (_, other) => {
                    return Err(CodecError::Encode(format!(
                        "row {row_idx}, column `{}`: unexpected value `{other}`",
                        col.name
                    )))
                }
            }
        }
        Ok(())
    }

    /// Inverse map: de-standardizes continuous entries and decodes each
    /// one-hot block by argmax (ties go to the lowest index).
    pub fn decode(&self, vec: &[f64]) -> Result<Row, CodecError> {
        if vec.len() != self.dim {
            return Err(CodecError::Decode(format!(
                "vector has length {}, expected {}",
                vec.len(),
                self.dim
            )));
        }
        if let Some(i) = vec.iter().position(|v| !v.is_finite()) {
            return Err(CodecError::Decode(format!("non-finite entry at index {i}")));
        }
        Ok(self
            .columns
            .iter()
            .map(|col| match &col.codec {
                ColumnCodec::Continuous { mean, std } => Cell::Number(vec[col.start] * std + mean),
                ColumnCodec::Categorical { categories } => {
                    Cell::Category(categories[argmax(&vec[col.range()])].clone())
                }
            })
            .collect())
    }

    pub fn decode_rows(&self, m: &Matrix) -> Result<Vec<Row>, CodecError> {
        m.iter_rows().map(|r| self.decode(r)).collect()
    }

    /// Expands a per-column mask to ambient coordinates. A set bit on a
    /// categorical column sets its whole one-hot block.
    pub fn mask_to_ambient(&self, column_mask: &[bool]) -> Result<Matrix, CodecError> {
        if column_mask.len() != self.columns.len() {
            return Err(CodecError::RowWidth {
                row: 0,
                expected: self.columns.len(),
                got: column_mask.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        for (col, &bit) in self.columns.iter().zip(column_mask) {
            if bit {
                out[col.range()].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        Ok(Matrix::row_vector(out))
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Column;

    fn num(v: f64) -> Cell {
        Cell::Number(v)
    }

    fn cat(s: &str) -> Cell {
        Cell::Category(s.into())
    }

    fn mixed() -> (TabularSchema, Vec<Row>) {
        let schema = TabularSchema::new(vec![
            Column::continuous("x"),
            Column::categorical("c", 3),
            Column::continuous("y"),
        ])
        .unwrap();
        let rows = vec![
            vec![num(1.0), cat("a"), num(10.0)],
            vec![num(2.0), cat("b"), num(-4.0)],
            vec![num(3.0), cat("c"), num(0.5)],
            vec![num(2.5), cat("a"), num(7.25)],
        ];
        (schema, rows)
    }

    #[test]
    fn population_std_and_dictionary() {
        let schema =
            TabularSchema::new(vec![Column::continuous("x"), Column::categorical("c", 2)]).unwrap();
        let rows = vec![
            vec![num(1.0), cat("a")],
            vec![num(2.0), cat("b")],
            vec![num(3.0), cat("a")],
        ];
        let enc = Encoder::fit(&schema, &rows).unwrap();
        match &enc.columns()[0].codec {
            ColumnCodec::Continuous { mean, std } => {
                assert_eq!(*mean, 2.0);
                assert!((std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        assert_eq!(
            enc.columns()[1].codec,
            ColumnCodec::Categorical {
                categories: vec!["a".into(), "b".into()]
            }
        );
        assert_eq!(enc.dim(), 3);
    }

    #[test]
    fn constant_column_rejected() {
        let schema = TabularSchema::new(vec![Column::continuous("x")]).unwrap();
        let rows = vec![vec![num(5.0)], vec![num(5.0)], vec![num(5.0)]];
        assert!(matches!(
            Encoder::fit(&schema, &rows),
            Err(CodecError::Fit(_))
        ));
    }

    #[test]
    fn encode_examples() {
        let (schema, rows) = mixed();
        let enc = Encoder::fit(&schema, &rows).unwrap();
        let v = enc.encode(&rows[1]).unwrap();
        assert_eq!(&v.data()[1..4], &[0.0, 1.0, 0.0]);
        let err = enc.encode(&[num(1.0), cat("zzz"), num(0.0)]).unwrap_err();
        assert!(
            err.to_string().contains("zzz") && err.to_string().contains("`c`"),
            "{err}"
        );
    }

    #[test]
    fn standardize_and_destandardize() {
        let col = EncodedColumn {
            name: "x".into(),
            start: 0,
            width: 1,
            codec: ColumnCodec::Continuous {
                mean: 2.0,
                std: 1.0,
            },
        };
        assert_eq!(col.standardize(2.0), Some(0.0));
        let schema = TabularSchema::new(vec![Column::continuous("x")]).unwrap();
        let enc = Encoder::from_parts(
            schema,
            vec![EncodedColumn {
                codec: ColumnCodec::Continuous {
                    mean: 10.0,
                    std: 2.0,
                },
                ..col
            }],
        )
        .unwrap();
        assert_eq!(enc.decode(&[1.5]).unwrap(), vec![num(13.0)]);
    }

    #[test]
    fn decode_argmax_and_ties() {
        assert_eq!(argmax(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        let (schema, rows) = mixed();
        let enc = Encoder::fit(&schema, &rows).unwrap();
        assert!(enc.decode(&[0.0, f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(enc.decode(&[0.0; 3]).is_err());
    }

    #[test]
    fn round_trip_and_standardized_moments() {
        let (schema, rows) = mixed();
        let enc = Encoder::fit(&schema, &rows).unwrap();
        let m = enc.encode_rows(&rows).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let back = enc.decode(m.row(i)).unwrap();
            for (a, b) in back.iter().zip(r) {
                match (a, b) {
                    (Cell::Number(x), Cell::Number(y)) => {
                        assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0))
                    }
                    _ => assert_eq!(a, b),
                }
            }
        }
        for col in [0usize, 4] {
            let vals: Vec<f64> = (0..m.rows()).map(|r| m.get(r, col)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ambient_masks() {
        let schema =
            TabularSchema::new(vec![Column::continuous("x"), Column::categorical("c", 3)]).unwrap();
        let rows = vec![
            vec![num(1.0), cat("a")],
            vec![num(2.0), cat("b")],
            vec![num(3.0), cat("c")],
        ];
        let enc = Encoder::fit(&schema, &rows).unwrap();
        assert_eq!(
            enc.mask_to_ambient(&[true, false]).unwrap().data(),
            &[1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            enc.mask_to_ambient(&[false, true]).unwrap().data(),
            &[0.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(
            enc.mask_to_ambient(&[false, false]).unwrap().data(),
            &[0.0; 4]
        );
        assert_eq!(
            enc.mask_to_ambient(&[true, true]).unwrap().data(),
            &[1.0; 4]
        );
    }
}
