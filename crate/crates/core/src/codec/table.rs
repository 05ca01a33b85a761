//! CSV ingestion and export.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Cell, CodecError, Column, ColumnKind, Row, TabularSchema};

/// Raw string table with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn read<R: Read>(reader: R) -> Result<Self, CodecError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CodecError::Csv(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect::<Vec<_>>();
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CodecError::Csv(e.to_string()))?;
            records.push(rec.iter().map(|s| s.trim().to_string()).collect());
        }
        Ok(Self { headers, records })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// Cells treated as missing: empty, `?`, `NA`, `NaN`, `null` (case-insensitive).
pub fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty()
        || c == "?"
        || c.eq_ignore_ascii_case("na")
        || c.eq_ignore_ascii_case("nan")
        || c.eq_ignore_ascii_case("null")
}

/// Types every header column: numeric if all non-missing cells parse as
/// `f64`, otherwise categorical with the observed distinct values.
pub fn infer_schema(table: &Table, target: Option<&str>) -> Result<TabularSchema, CodecError> {
    let mut columns = Vec::with_capacity(table.headers.len());
    for (i, name) in table.headers.iter().enumerate() {
        let cells = table
            .records
            .iter()
            .filter_map(|r| r.get(i))
            .filter(|c| !is_missing(c));
        let mut numeric = true;
        let mut distinct = BTreeSet::new();
        for c in cells {
            numeric &= c.parse::<f64>().is_ok_and(f64::is_finite);
            distinct.insert(c.clone());
        }
        let kind = if numeric && !distinct.is_empty() {
            ColumnKind::Continuous
        } else {
            ColumnKind::Categorical {
                cardinality: Some(distinct.len()),
                categories: None,
            }
        };
        columns.push(Column {
            name: name.clone(),
            kind,
        });
    }
    let schema = TabularSchema {
        columns,
        target_column: target.map(str::to_string),
    };
    schema.validate()?;
    Ok(schema)
}

/// Typed rows over the modeled columns, plus the pass-through target.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: TabularSchema,
    pub rows: Vec<Row>,
    pub targets: Option<Vec<String>>,
    /// Records dropped for containing missing values.
    pub dropped: usize,
}

impl Dataset {
    /// Types `table` against `schema`. Records with a missing modeled (or
    /// target) cell are dropped; unparsable numbers are an error.
    pub fn from_table(schema: &TabularSchema, table: &Table) -> Result<Self, CodecError> {
        schema.validate()?;
        let modeled: Vec<_> = schema.modeled().collect();
        let mut idx = Vec::with_capacity(modeled.len());
        let missing: Vec<_> = schema
            .columns
            .iter()
            .filter(|c| table.column_index(&c.name).is_none())
            .map(|c| c.name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(CodecError::Schema(format!(
                "CSV lacks schema columns: {}",
                missing.join(", ")
            )));
        }
        for c in &modeled {
            idx.push(table.column_index(&c.name).unwrap_or_default());
        }
        let target_idx = schema
            .target_column
            .as_deref()
            .and_then(|t| table.column_index(t));

        let mut rows = Vec::new();
        let mut targets = target_idx.map(|_| Vec::new());
        let mut dropped = 0;
        'records: for (ri, rec) in table.records.iter().enumerate() {
            let cell_at = |i: usize| rec.get(i).map(String::as_str).unwrap_or("");
            if idx
                .iter()
                .chain(target_idx.iter())
                .any(|&i| is_missing(cell_at(i)))
            {
                dropped += 1;
                continue 'records;
            }
            let mut row = Vec::with_capacity(modeled.len());
            for (c, &i) in modeled.iter().zip(&idx) {
                let raw = cell_at(i);
                row.push(match c.kind {
                    ColumnKind::Continuous => {
                        let v = raw
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| {
                                CodecError::Csv(format!(
                                    "record {}: column `{}` value `{raw}` is not a number",
                                    ri + 1,
                                    c.name
                                ))
                            })?;
                        Cell::Number(v)
                    }
                    ColumnKind::Categorical { .. } => Cell::Category(raw.to_string()),
                });
            }
            rows.push(row);
            if let (Some(t), Some(ti)) = (targets.as_mut(), target_idx) {
                t.push(cell_at(ti).to_string());
            }
        }
        Ok(Self {
            schema: schema.clone(),
            rows,
            targets,
            dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Seeded random split; the first part gets `round(frac · n)` rows.
    pub fn split(&self, frac: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.rows.len() as f64) * frac).round() as usize;
        let pick = |ids: &[usize]| Dataset {
            schema: self.schema.clone(),
            rows: ids.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: self
                .targets
                .as_ref()
                .map(|t| ids.iter().map(|&i| t[i].clone()).collect()),
            dropped: 0,
        };
        (pick(&order[..cut]), pick(&order[cut..]))
    }
}

/// Writes modeled columns (and the target, if present) with a header row.
pub fn write_rows<W: Write>(
    writer: W,
    schema: &TabularSchema,
    rows: &[Row],
    targets: Option<&[String]>,
) -> Result<(), CodecError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = schema.modeled().map(|c| c.name.clone()).collect();
    if let (Some(t), Some(_)) = (schema.target_column.as_ref(), targets) {
        header.push(t.clone());
    }
    w.write_record(&header)
        .map_err(|e| CodecError::Csv(e.to_string()))?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec: Vec<String> = r.iter().map(|c| c.to_string()).collect();
        if let Some(t) = targets {
            rec.push(t.get(i).cloned().unwrap_or_default());
        }
        w.write_record(&rec)
            .map_err(|e| CodecError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| CodecError::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str =
        "age,work,income\n39,State-gov,<=50K\n50,Private,>50K\n?,Private,<=50K\n28,Private,<=50K\n";

    #[test]
    fn infer_and_load() {
        let table = Table::read(CSV.as_bytes()).unwrap();
        let schema = infer_schema(&table, Some("income")).unwrap();
        assert_eq!(schema.columns[0].kind, ColumnKind::Continuous);
        assert!(schema.columns[1].kind.is_categorical());
        let ds = Dataset::from_table(&schema, &table).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dropped, 1);
        assert_eq!(
            ds.rows[0],
            vec![Cell::Number(39.0), Cell::Category("State-gov".into())]
        );
        assert_eq!(ds.targets.as_ref().unwrap()[1], ">50K");
    }

    #[test]
    fn missing_schema_column_is_reported() {
        let table = Table::read("a,b\n1,2\n".as_bytes()).unwrap();
        let schema =
            TabularSchema::new(vec![Column::continuous("a"), Column::continuous("z")]).unwrap();
        let err = Dataset::from_table(&schema, &table).unwrap_err();
        assert!(err.to_string().contains('z'));
    }

    #[test]
    fn bad_number_is_an_error() {
        let table = Table::read("a\n1\nabc\n".as_bytes()).unwrap();
        let schema = TabularSchema::new(vec![Column::continuous("a")]).unwrap();
        assert!(Dataset::from_table(&schema, &table).is_err());
    }

    #[test]
    fn split_is_seeded_partition() {
        let table = Table::read(CSV.as_bytes()).unwrap();
        let schema = infer_schema(&table, None).unwrap();
        let ds = Dataset::from_table(&schema, &table).unwrap();
        let (a, b) = ds.split(0.7, 3);
        assert_eq!(a.len() + b.len(), ds.len());
        assert_eq!(ds.split(0.7, 3).0, a);
    }

    #[test]
    fn write_round_trip() {
        let table = Table::read(CSV.as_bytes()).unwrap();
        let schema = infer_schema(&table, Some("income")).unwrap();
        let ds = Dataset::from_table(&schema, &table).unwrap();
        let mut buf = Vec::new();
        write_rows(&mut buf, &schema, &ds.rows, ds.targets.as_deref()).unwrap();
        let back = Dataset::from_table(&schema, &Table::read(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back.rows, ds.rows);
        assert_eq!(back.targets, ds.targets);
    }
}
