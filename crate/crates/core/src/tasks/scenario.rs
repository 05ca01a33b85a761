use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Cell, Encoder, Row};
use crate::guidance::ConstraintDoc;

use super::TaskError;

pub const DEFAULT_QUANTILE: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Range,
    Category,
    Conjunction,
    Disjunction,
}

impl std::str::FromStr for ScenarioKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "range" => Ok(ScenarioKind::Range),
            "category" => Ok(ScenarioKind::Category),
            "and" | "conjunction" => Ok(ScenarioKind::Conjunction),
            "or" | "disjunction" => Ok(ScenarioKind::Disjunction),
            other => Err(TaskError::Config(format!(
                "unknown scenario `{other}` (range, category, and, or)"
            ))),
        }
    }
}

/// Which features a scenario uses; unset fields are chosen with the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub quantile: f64,
    pub range_column: Option<String>,
    pub category_column: Option<String>,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            quantile: DEFAULT_QUANTILE,
            range_column: None,
            category_column: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintScenario {
    pub kind: ScenarioKind,
    pub constraint: ConstraintDoc,
    /// Fraction of training rows satisfying the constraint.
    pub coverage: f64,
    /// Coverage of each child for compositions.
    pub child_coverage: Vec<f64>,
    pub seed: u64,
}

/// Linear-interpolated empirical quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Fraction of `rows` satisfying `doc`.
pub fn coverage(doc: &ConstraintDoc, enc: &Encoder, rows: &[Row]) -> Result<f64, TaskError> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for r in rows {
        hits += doc.satisfied(enc, r)? as usize;
    }
    Ok(hits as f64 / rows.len() as f64)
}

fn range_doc(
    enc: &Encoder,
    rows: &[Row],
    opts: &ScenarioOptions,
    rng: &mut ChaCha8Rng,
) -> Result<ConstraintDoc, TaskError> {
    let name = match &opts.range_column {
        Some(n) => n.clone(),
        None => {
            let names: Vec<&str> = enc
                .columns()
                .iter()
                .filter(|c| !c.is_categorical())
                .map(|c| c.name.as_str())
                .collect();
            names
                .choose(rng)
                .ok_or_else(|| {
                    TaskError::Config("no continuous column for a range scenario".into())
                })?
                .to_string()
        }
    };
    let (idx, col) = enc
        .column(&name)
        .ok_or_else(|| TaskError::Config(format!("unknown column `{name}`")))?;
    if col.is_categorical() {
        return Err(TaskError::Config(format!("column `{name}` is categorical")));
    }
    let values: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.get(idx).and_then(Cell::as_number))
        .collect();
    if values.is_empty() {
        return Err(TaskError::Config("no training rows".into()));
    }
    Ok(ConstraintDoc::Inequality {
        column: name,
        lower: Some(quantile(&values, opts.quantile)),
        upper: None,
        weight: None,
        norm_lower: None,
        norm_upper: None,
    })
}

fn category_doc(
    enc: &Encoder,
    rows: &[Row],
    opts: &ScenarioOptions,
    rng: &mut ChaCha8Rng,
) -> Result<ConstraintDoc, TaskError> {
    let name = match &opts.category_column {
        Some(n) => n.clone(),
        None => {
            let names: Vec<&str> = enc
                .columns()
                .iter()
                .filter(|c| c.is_categorical())
                .map(|c| c.name.as_str())
                .collect();
            names
                .choose(rng)
                .ok_or_else(|| {
                    TaskError::Config("no categorical column for a category scenario".into())
                })?
                .to_string()
        }
    };
    let (idx, col) = enc
        .column(&name)
        .ok_or_else(|| TaskError::Config(format!("unknown column `{name}`")))?;
    if !col.is_categorical() {
        return Err(TaskError::Config(format!("column `{name}` is continuous")));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        if let Some(c) = r.get(idx).and_then(Cell::as_category) {
            *counts.entry(c).or_default() += 1;
        }
    }
    let max = counts.values().copied().max().unwrap_or(0);
    let majority = counts.iter().find(|(_, &n)| n == max).map(|(k, _)| *k);
    let candidates: Vec<&str> = counts
        .keys()
        .copied()
        .filter(|k| Some(*k) != majority)
        .collect();
    let value = candidates
        .choose(rng)
        .ok_or_else(|| TaskError::Config(format!("column `{name}` has a single observed class")))?;
    Ok(ConstraintDoc::Ce {
        column: name,
        value: value.to_string(),
    })
}

/// Builds a hard constraint on training data: a range above the
/// `opts.quantile` tail of a continuous feature, a non-majority class of a
/// categorical feature, or their conjunction/disjunction.
pub fn gen_constraint_scenario(
    kind: ScenarioKind,
    enc: &Encoder,
    train: &[Row],
    opts: &ScenarioOptions,
    seed: u64,
) -> Result<ConstraintScenario, TaskError> {
    if !(opts.quantile > 0.0 && opts.quantile < 1.0) {
        return Err(TaskError::Config(format!(
            "quantile must lie in (0, 1), got {}",
            opts.quantile
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let constraint = match kind {
        ScenarioKind::Range => range_doc(enc, train, opts, &mut rng)?,
        ScenarioKind::Category => category_doc(enc, train, opts, &mut rng)?,
        ScenarioKind::Conjunction | ScenarioKind::Disjunction => {
            let children = vec![
                range_doc(enc, train, opts, &mut rng)?,
                category_doc(enc, train, opts, &mut rng)?,
            ];
            if kind == ScenarioKind::Conjunction {
                ConstraintDoc::And { children }
            } else {
                ConstraintDoc::Or { children }
            }
        }
    };
    let child_coverage = constraint
        .children()
        .iter()
        .map(|c| coverage(c, enc, train))
        .collect::<Result<_, _>>()?;
    Ok(ConstraintScenario {
        kind,
        coverage: coverage(&constraint, enc, train)?,
        constraint,
        child_coverage,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Column, TabularSchema};
    use rand::Rng;

    fn data(n: usize) -> (Encoder, Vec<Row>) {
        let schema =
            TabularSchema::new(vec![Column::continuous("x"), Column::categorical("c", 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows: Vec<Row> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let c = if u < 0.6 {
                    "a"
                } else if u < 0.85 {
                    "b"
                } else {
                    "c"
                };
                vec![
                    Cell::Number(rng.random::<f64>() * 10.0),
                    Cell::Category(c.into()),
                ]
            })
            .collect();
        (Encoder::fit(&schema, &rows).unwrap(), rows)
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0, 5.0], 0.5), 3.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.8), 8.0);
    }

    #[test]
    fn range_is_a_tail() {
        let (enc, rows) = data(5000);
        let s = gen_constraint_scenario(
            ScenarioKind::Range,
            &enc,
            &rows,
            &ScenarioOptions::default(),
            1,
        )
        .unwrap();
        assert!((s.coverage - 0.2).abs() < 0.01, "{}", s.coverage);
    }

    #[test]
    fn category_avoids_majority() {
        let (enc, rows) = data(2000);
        for seed in 0..10 {
            let s = gen_constraint_scenario(
                ScenarioKind::Category,
                &enc,
                &rows,
                &ScenarioOptions::default(),
                seed,
            )
            .unwrap();
            match &s.constraint {
                ConstraintDoc::Ce { value, .. } => assert_ne!(value, "a"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn composition_coverage_bounds() {
        let (enc, rows) = data(3000);
        let opts = ScenarioOptions::default();
        let and =
            gen_constraint_scenario(ScenarioKind::Conjunction, &enc, &rows, &opts, 2).unwrap();
        let or = gen_constraint_scenario(ScenarioKind::Disjunction, &enc, &rows, &opts, 2).unwrap();
        assert!(and.child_coverage.iter().all(|&c| and.coverage <= c));
        assert!(or.child_coverage.iter().all(|&c| or.coverage >= c));
    }

    #[test]
    fn missing_kinds_error() {
        let schema = TabularSchema::new(vec![Column::continuous("x")]).unwrap();
        let rows = vec![vec![Cell::Number(1.0)], vec![Cell::Number(2.0)]];
        let enc = Encoder::fit(&schema, &rows).unwrap();
        assert!(gen_constraint_scenario(
            ScenarioKind::Category,
            &enc,
            &rows,
            &ScenarioOptions::default(),
            0
        )
        .is_err());
    }
}
