//! Constraint documents written against column names in raw units.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{Cell, ColumnCodec, EncodedColumn, Encoder, Row};
use crate::grad::Matrix;

use super::{ConstraintSpec, GuidanceError, LossDefaults, Norm, Selector};

/// JSON form of a constraint. Continuous bounds are given in raw units and
/// standardized with the encoder; norms and weights fall back to the task
/// defaults when omitted.
///
/// ```json
/// {"type": "or", "children": [
///   {"type": "inequality", "column": "age", "lower": 50},
///   {"type": "ce", "column": "workclass", "value": "State-gov"}
/// ]}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintDoc {
    /// Anchors the listed columns to fixed values for every sample.
    Imputation {
        values: BTreeMap<String, Cell>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        norm: Option<Norm>,
    },
    Inequality {
        column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        norm_lower: Option<Norm>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        norm_upper: Option<Norm>,
    },
    Equality {
        column: String,
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        norm: Option<Norm>,
    },
    /// Categorical column must take `value`.
    Ce {
        column: String,
        value: String,
    },
    And {
        children: Vec<ConstraintDoc>,
    },
    Or {
        children: Vec<ConstraintDoc>,
    },
}

fn lookup<'e>(enc: &'e Encoder, name: &str) -> Result<&'e EncodedColumn, GuidanceError> {
    enc.column(name)
        .map(|(_, c)| c)
        .ok_or_else(|| GuidanceError::UnknownColumn(name.to_string()))
}

fn continuous<'e>(enc: &'e Encoder, name: &str) -> Result<&'e EncodedColumn, GuidanceError> {
    let col = lookup(enc, name)?;
    if col.is_categorical() {
        return Err(GuidanceError::Spec(format!(
            "column `{name}` is categorical"
        )));
    }
    Ok(col)
}

fn category<'e>(
    enc: &'e Encoder,
    name: &str,
    value: &str,
) -> Result<(&'e EncodedColumn, usize), GuidanceError> {
    let col = lookup(enc, name)?;
    let k = col.category_index(value).ok_or_else(|| {
        if col.is_categorical() {
            GuidanceError::UnknownCategory {
                column: name.to_string(),
                value: value.to_string(),
            }
        } else {
            GuidanceError::Spec(format!("column `{name}` is continuous"))
        }
    })?;
    Ok((col, k))
}

fn standardize(col: &EncodedColumn, v: f64) -> f64 {
    match col.codec {
        ColumnCodec::Continuous { mean, std } => (v - mean) / std,
        ColumnCodec::Categorical { .. } => v,
    }
}

impl ConstraintDoc {
    pub fn from_json(text: &str) -> Result<Self, GuidanceError> {
        serde_json::from_str(text).map_err(|e| GuidanceError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Differentiable spec over the encoder's ambient space.
    pub fn resolve(
        &self,
        enc: &Encoder,
        defaults: &LossDefaults,
    ) -> Result<ConstraintSpec, GuidanceError> {
        let d = enc.dim();
        let spec = match self {
            ConstraintDoc::Imputation { values, norm } => {
                let mut mask = vec![0.0; d];
                let mut target = vec![0.0; d];
                for (name, cell) in values {
                    let col = lookup(enc, name)?;
                    match cell {
                        Cell::Number(v) => {
                            let col = continuous(enc, name)?;
                            mask[col.start] = 1.0;
                            target[col.start] = standardize(col, *v);
                        }
                        Cell::Category(s) => {
                            let (_, k) = category(enc, name, s)?;
                            for i in col.range() {
                                mask[i] = 1.0;
                            }
                            target[col.start + k] = 1.0;
                        }
                    }
                }
                ConstraintSpec::Imputation {
                    mask: Matrix::row_vector(mask),
                    target: Matrix::row_vector(target),
                    norm: norm.unwrap_or(defaults.imputation_norm),
                }
            }
            ConstraintDoc::Inequality {
                column,
                lower,
                upper,
                weight,
                norm_lower,
                norm_upper,
            } => {
                let col = continuous(enc, column)?;
                ConstraintSpec::Inequality {
                    selector: Selector::coordinates(&[col.start]),
                    lower: lower.map(|v| vec![standardize(col, v)]),
                    upper: upper.map(|v| vec![standardize(col, v)]),
                    weight: weight.unwrap_or(defaults.inequality_weight),
                    norm_lower: norm_lower.unwrap_or(defaults.norm_lower),
                    norm_upper: norm_upper.unwrap_or(defaults.norm_upper),
                }
            }
            ConstraintDoc::Equality {
                column,
                value,
                weight,
                norm,
            } => {
                let col = continuous(enc, column)?;
                ConstraintSpec::Equality {
                    selector: Selector::coordinates(&[col.start]),
                    value: vec![standardize(col, *value)],
                    weight: weight.unwrap_or(defaults.equality_weight),
                    norm: norm.unwrap_or(defaults.norm_equality),
                }
            }
            ConstraintDoc::Ce { column, value } => {
                let (col, k) = category(enc, column, value)?;
                let mut mask = vec![0.0; d];
                let mut target = vec![0.0; d];
                for i in col.range() {
                    mask[i] = 1.0;
                }
                target[col.start + k] = 1.0;
                ConstraintSpec::CategoricalCe {
                    blocks: vec![(col.start, col.width)],
                    mask: Matrix::row_vector(mask),
                    target: Matrix::row_vector(target),
                }
            }
            ConstraintDoc::And { children } => ConstraintSpec::And {
                children: children
                    .iter()
                    .map(|c| c.resolve(enc, defaults))
                    .collect::<Result<_, _>>()?,
            },
            ConstraintDoc::Or { children } => ConstraintSpec::Or {
                children: children
                    .iter()
                    .map(|c| c.resolve(enc, defaults))
                    .collect::<Result<_, _>>()?,
            },
        };
        spec.validate(d)?;
        Ok(spec)
    }

    /// Hard check of a decoded row. Only range, category and their
    /// compositions can be checked.
    pub fn satisfied(&self, enc: &Encoder, row: &Row) -> Result<bool, GuidanceError> {
        match self {
            ConstraintDoc::Inequality {
                column,
                lower,
                upper,
                ..
            } => {
                continuous(enc, column)?;
                let (i, _) = enc
                    .column(column)
                    .ok_or_else(|| GuidanceError::UnknownColumn(column.clone()))?;
                let v = row.get(i).and_then(Cell::as_number).ok_or_else(|| {
                    GuidanceError::Spec(format!("row lacks a number for `{column}`"))
                })?;
                Ok(lower.is_none_or(|l| v >= l) && upper.is_none_or(|u| v <= u))
            }
            ConstraintDoc::Ce { column, value } => {
                category(enc, column, value)?;
                let (i, _) = enc
                    .column(column)
                    .ok_or_else(|| GuidanceError::UnknownColumn(column.clone()))?;
                Ok(row.get(i).and_then(Cell::as_category) == Some(value.as_str()))
            }
            ConstraintDoc::And { children } => {
                for c in children {
                    if !c.satisfied(enc, row)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            ConstraintDoc::Or { children } => {
                let mut any = false;
                for c in children {
                    any |= c.satisfied(enc, row)?;
                }
                Ok(any)
            }
            ConstraintDoc::Imputation { .. } | ConstraintDoc::Equality { .. } => {
                Err(GuidanceError::NotApplicable(
                    "only range/category constraints and their compositions have a hard check"
                        .into(),
                ))
            }
        }
    }

    pub fn children(&self) -> &[ConstraintDoc] {
        match self {
            ConstraintDoc::And { children } | ConstraintDoc::Or { children } => children,
            _ => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Column, TabularSchema};
    use crate::guidance::{default_loss_for, eval_loss, TaskKind};

    fn encoder() -> Encoder {
        let schema = TabularSchema::new(vec![
            Column::continuous("age"),
            Column::categorical("work", 3),
        ])
        .unwrap();
        let rows: Vec<Row> = [(20.0, "a"), (40.0, "b"), (30.0, "c"), (50.0, "a")]
            .iter()
            .map(|(v, c)| vec![Cell::Number(*v), Cell::Category(c.to_string())])
            .collect();
        Encoder::fit(&schema, &rows).unwrap()
    }

    #[test]
    fn json_round_trip_and_resolution() {
        let text = r#"{"type":"or","children":[
            {"type":"inequality","column":"age","lower":45},
            {"type":"ce","column":"work","value":"b"}]}"#;
        let doc = ConstraintDoc::from_json(text).unwrap();
        assert_eq!(ConstraintDoc::from_json(&doc.to_json()).unwrap(), doc);
        let enc = encoder();
        let spec = doc
            .resolve(&enc, &default_loss_for(TaskKind::Inequality))
            .unwrap();
        // a row at age 50 satisfies the first child, so the product vanishes
        let x = enc
            .encode(&[Cell::Number(50.0), Cell::Category("a".into())])
            .unwrap();
        assert_eq!(eval_loss(&spec, &x).unwrap(), 0.0);
        let x = enc
            .encode(&[Cell::Number(20.0), Cell::Category("a".into())])
            .unwrap();
        assert!(eval_loss(&spec, &x).unwrap() > 0.0);
    }

    #[test]
    fn hard_checks() {
        let enc = encoder();
        let range = ConstraintDoc::Inequality {
            column: "age".into(),
            lower: Some(45.0),
            upper: None,
            weight: None,
            norm_lower: None,
            norm_upper: None,
        };
        let cat = ConstraintDoc::Ce {
            column: "work".into(),
            value: "b".into(),
        };
        let row = vec![Cell::Number(50.0), Cell::Category("a".into())];
        assert!(range.satisfied(&enc, &row).unwrap());
        assert!(!cat.satisfied(&enc, &row).unwrap());
        let and = ConstraintDoc::And {
            children: vec![range.clone(), cat.clone()],
        };
        let or = ConstraintDoc::Or {
            children: vec![range, cat],
        };
        assert!(!and.satisfied(&enc, &row).unwrap());
        assert!(or.satisfied(&enc, &row).unwrap());
    }

    #[test]
    fn name_errors() {
        let enc = encoder();
        let d = default_loss_for(TaskKind::Inequality);
        let bad = ConstraintDoc::Ce {
            column: "work".into(),
            value: "zzz".into(),
        };
        assert!(matches!(
            bad.resolve(&enc, &d),
            Err(GuidanceError::UnknownCategory { .. })
        ));
        let bad = ConstraintDoc::Equality {
            column: "nope".into(),
            value: 1.0,
            weight: None,
            norm: None,
        };
        assert!(matches!(
            bad.resolve(&enc, &d),
            Err(GuidanceError::UnknownColumn(_))
        ));
        assert!(
            ConstraintDoc::from_json(r#"{"type":"ce","column":"w","value":"x","extra":1}"#)
                .is_err()
        );
    }

    #[test]
    fn imputation_doc_anchors_raw_values() {
        let enc = encoder();
        let doc =
            ConstraintDoc::from_json(r#"{"type":"imputation","values":{"age":35,"work":"c"}}"#)
                .unwrap();
        let spec = doc
            .resolve(&enc, &default_loss_for(TaskKind::Imputation))
            .unwrap();
        let x = enc
            .encode(&[Cell::Number(35.0), Cell::Category("c".into())])
            .unwrap();
        assert!(eval_loss(&spec, &x).unwrap() < 1e-12);
    }
}
