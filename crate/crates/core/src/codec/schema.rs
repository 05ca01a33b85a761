use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::CodecError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    /// Either `categories` lists the classes (fixing their order) or only
    /// `cardinality` is given and the classes are read from the data.
    Categorical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cardinality: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        categories: Option<Vec<String>>,
    },
}

impl ColumnKind {
    pub fn categorical(cardinality: usize) -> Self {
        ColumnKind::Categorical {
            cardinality: Some(cardinality),
            categories: None,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnKind::Categorical { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::categorical(cardinality),
        }
    }
}

/// Column typing for a table. The optional target column is carried through
/// files but never modeled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub columns: Vec<Column>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_column: Option<String>,
}

impl TabularSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, CodecError> {
        let s = Self {
            columns,
            target_column: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Result<Self, CodecError> {
        self.target_column = Some(target.into());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(CodecError::Schema(format!(
                    "duplicate column name `{}`",
                    c.name
                )));
            }
            if let ColumnKind::Categorical {
                cardinality,
                categories,
            } = &c.kind
            {
                let k = match (cardinality, categories) {
                    (_, Some(cats)) => {
                        let unique: HashSet<_> = cats.iter().collect();
                        if unique.len() != cats.len() {
                            return Err(CodecError::Schema(format!(
                                "column `{}` lists a category twice",
                                c.name
                            )));
                        }
                        if let Some(k) = cardinality {
                            if *k != cats.len() {
                                return Err(CodecError::Schema(format!(
                                    "column `{}`: cardinality {k} but {} categories listed",
                                    c.name,
                                    cats.len()
                                )));
                            }
                        }
                        cats.len()
                    }
                    (Some(k), None) => *k,
                    (None, None) => {
                        return Err(CodecError::Schema(format!(
                            "categorical column `{}` needs a cardinality or a category list",
                            c.name
                        )))
                    }
                };
                if k < 2 {
                    return Err(CodecError::Schema(format!(
                        "categorical column `{}` has cardinality {k} (< 2)",
                        c.name
                    )));
                }
            }
        }
        if let Some(t) = &self.target_column {
            if !seen.contains(t.as_str()) {
                return Err(CodecError::Schema(format!(
                    "target column `{t}` not in schema"
                )));
            }
        }
        if self.modeled().count() == 0 {
            return Err(CodecError::Schema("no modeled columns".into()));
        }
        Ok(())
    }

    /// Columns that are encoded, in schema order.
    pub fn modeled(&self) -> impl Iterator<Item = &Column> {
        self.columns
            .iter()
            .filter(move |c| Some(&c.name) != self.target_column.as_ref())
    }

    pub fn modeled_count(&self) -> usize {
        self.modeled().count()
    }

    /// `#continuous + Σ K_i` over modeled columns.
    pub fn encoded_dim(&self) -> usize {
        self.modeled()
            .map(|c| match &c.kind {
                ColumnKind::Continuous => 1,
                ColumnKind::Categorical {
                    cardinality,
                    categories,
                } => categories
                    .as_ref()
                    .map_or(cardinality.unwrap_or(0), Vec::len),
            })
            .sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let json = r#"{
            "columns": [
                {"name": "age", "kind": "continuous"},
                {"name": "work", "kind": "categorical", "cardinality": 3},
                {"name": "y", "kind": "categorical", "categories": ["no", "yes"]}
            ],
            "target_column": "y"
        }"#;
        let s: TabularSchema = serde_json::from_str(json).unwrap();
        s.validate().unwrap();
        assert_eq!(s.modeled_count(), 2);
        assert_eq!(s.encoded_dim(), 4);
    }

    #[test]
    fn rejects_duplicates_low_cardinality_and_bad_target() {
        assert!(
            TabularSchema::new(vec![Column::continuous("a"), Column::continuous("a")]).is_err()
        );
        assert!(TabularSchema::new(vec![Column::categorical("a", 1)]).is_err());
        let s = TabularSchema::new(vec![Column::continuous("a")]).unwrap();
        assert!(s.clone().with_target("b").is_err());
        // the only column cannot also be the target
        assert!(s.with_target("a").is_err());
    }
}
