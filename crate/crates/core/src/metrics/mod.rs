//! Evaluation metrics and geometric diagnostics on synthetic manifolds.

mod diag;
mod manifold;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Cell, CodecError, ColumnCodec, Encoder, Row};
use crate::diffusion::DiffusionError;
use crate::grad::GradError;
use crate::guidance::{ConstraintDoc, GuidanceError};
use crate::tasks::MaskTask;

pub use diag::{
    angle_profile, probe_spec, projection_error_profile, residual_angle_profile,
    shell_distance_check, write_profile_csv, ProbeLoss, ProfileRow, ShellCheck,
};
pub use manifold::{normal_angle, ProjectorDenoiser, SyntheticManifold};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    Config(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("write failed: {0}")]
    Io(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Sum in a fixed pairwise order, independent of how values were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Mean and sample standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&sq) / (n - 1.0)).sqrt())
}

fn check_shapes(imputed: &[Row], truth: &[Row], mask: &MaskTask) -> Result<(), MetricsError> {
    if imputed.len() != truth.len() || truth.len() != mask.rows {
        return Err(MetricsError::Config(format!(
            "row counts differ: imputed {}, truth {}, mask {}",
            imputed.len(),
            truth.len(),
            mask.rows
        )));
    }
    if let Some(r) = imputed
        .iter()
        .chain(truth)
        .position(|r| r.len() != mask.cols)
    {
        return Err(MetricsError::Config(format!(
            "row {} width differs from mask width {}",
            r % truth.len().max(1),
            mask.cols
        )));
    }
    Ok(())
}

/// Squared standardized errors of masked continuous cells, per column.
fn squared_errors(
    imputed: &[Row],
    truth: &[Row],
    mask: &MaskTask,
    enc: &Encoder,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    check_shapes(imputed, truth, mask)?;
    let mut per_col = vec![Vec::new(); mask.cols];
    for (c, col) in enc.columns().iter().enumerate() {
        let ColumnCodec::Continuous { std, .. } = col.codec else {
            continue;
        };
        for r in 0..mask.rows {
            if !mask.missing(r, c) {
                continue;
            }
            let (Some(a), Some(b)) = (imputed[r][c].as_number(), truth[r][c].as_number()) else {
                return Err(MetricsError::Config(format!(
                    "row {r}: `{}` is not numeric",
                    col.name
                )));
            };
            per_col[c].push(((a - b) / std).powi(2));
        }
    }
    Ok(per_col)
}

/// Mean squared error over masked continuous cells in standardized units.
/// `None` when no continuous cell is masked.
pub fn imputation_mse(
    imputed: &[Row],
    truth: &[Row],
    mask: &MaskTask,
    enc: &Encoder,
) -> Result<Option<f64>, MetricsError> {
    let all: Vec<f64> = squared_errors(imputed, truth, mask, enc)?
        .into_iter()
        .flatten()
        .collect();
    Ok((!all.is_empty()).then(|| pairwise_sum(&all) / all.len() as f64))
}

/// Percentage of masked categorical cells decoded to the true class.
/// `None` when no categorical cell is masked.
pub fn imputation_accuracy(
    imputed: &[Row],
    truth: &[Row],
    mask: &MaskTask,
) -> Result<Option<f64>, MetricsError> {
    check_shapes(imputed, truth, mask)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for r in 0..mask.rows {
        for c in 0..mask.cols {
            if let (true, Cell::Category(t)) = (mask.missing(r, c), &truth[r][c]) {
                total += 1;
                hits += (imputed[r][c].as_category() == Some(t.as_str())) as usize;
            }
        }
    }
    Ok((total > 0).then(|| 100.0 * hits as f64 / total as f64))
}

/// Percentage of rows breaking `doc`.
pub fn violation_rate(
    samples: &[Row],
    doc: &ConstraintDoc,
    enc: &Encoder,
) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Config("no samples".into()));
    }
    let mut broken = 0usize;
    for r in samples {
        broken += !doc.satisfied(enc, r).map_err(|e| match e {
            GuidanceError::NotApplicable(m) => MetricsError::NotApplicable(m),
            other => other.into(),
        })? as usize;
    }
    Ok(100.0 * broken as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub column: String,
    /// `mse` (continuous) or `accuracy` (categorical).
    pub metric: String,
    pub value: Option<f64>,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub continuous_mse: Option<f64>,
    pub categorical_accuracy: Option<f64>,
    pub violation_rate: Option<f64>,
    pub per_column: Vec<ColumnScore>,
    pub rows: usize,
    pub masked_cells: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn imputation(
        imputed: &[Row],
        truth: &[Row],
        mask: &MaskTask,
        enc: &Encoder,
        seed: u64,
    ) -> Result<Self, MetricsError> {
        let sq = squared_errors(imputed, truth, mask, enc)?;
        let mut per_column = Vec::new();
        for (c, col) in enc.columns().iter().enumerate() {
            if col.is_categorical() {
                let (mut hits, mut cells) = (0usize, 0usize);
                for r in 0..mask.rows {
                    if mask.missing(r, c) {
                        cells += 1;
                        hits += (imputed[r][c] == truth[r][c]) as usize;
                    }
                }
                per_column.push(ColumnScore {
                    column: col.name.clone(),
                    metric: "accuracy".into(),
                    value: (cells > 0).then(|| 100.0 * hits as f64 / cells as f64),
                    cells,
                });
            } else {
                per_column.push(ColumnScore {
                    column: col.name.clone(),
                    metric: "mse".into(),
                    value: (!sq[c].is_empty()).then(|| pairwise_sum(&sq[c]) / sq[c].len() as f64),
                    cells: sq[c].len(),
                });
            }
        }
        Ok(Self {
            continuous_mse: imputation_mse(imputed, truth, mask, enc)?,
            categorical_accuracy: imputation_accuracy(imputed, truth, mask)?,
            violation_rate: None,
            per_column,
            rows: truth.len(),
            masked_cells: mask.missing_count(),
            seed,
        })
    }

    pub fn constraint(
        samples: &[Row],
        doc: &ConstraintDoc,
        enc: &Encoder,
        seed: u64,
    ) -> Result<Self, MetricsError> {
        let mut per_column = Vec::new();
        for (i, child) in doc.children().iter().enumerate() {
            let v = violation_rate(samples, child, enc)?;
            per_column.push(ColumnScore {
                column: format!("child{i}"),
                metric: "violation_rate".into(),
                value: Some(v),
                cells: samples.len(),
            });
        }
        Ok(Self {
            continuous_mse: None,
            categorical_accuracy: None,
            violation_rate: Some(violation_rate(samples, doc, enc)?),
            per_column,
            rows: samples.len(),
            masked_cells: 0,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Column, TabularSchema};
    use crate::tasks::gen_mcar;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_rows(n: usize, seed: u64) -> (Encoder, Vec<Row>) {
        let schema =
            TabularSchema::new(vec![Column::continuous("a"), Column::continuous("b")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Row> = (0..n)
            .map(|_| {
                vec![
                    Cell::Number(rng.sample(StandardNormal)),
                    Cell::Number(3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)),
                ]
            })
            .collect();
        (Encoder::fit(&schema, &rows).unwrap(), rows)
    }

    #[test]
    fn mse_basics() {
        let (enc, rows) = gaussian_rows(100, 0);
        let mask = gen_mcar(100, 2, 0.5, 1).unwrap();
        assert_eq!(
            imputation_mse(&rows, &rows, &mask, &enc).unwrap(),
            Some(0.0)
        );
        let mut one = MaskTask {
            bits: vec![false; 200],
            ..mask.clone()
        };
        one.bits[0] = true;
        let mut imputed = rows.clone();
        let std = match enc.columns()[0].codec {
            ColumnCodec::Continuous { std, .. } => std,
            _ => unreachable!(),
        };
        imputed[0][0] = Cell::Number(rows[0][0].as_number().unwrap() + 2.0 * std);
        let v = imputation_mse(&imputed, &rows, &one, &enc)
            .unwrap()
            .unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        let none = MaskTask {
            bits: vec![false; 200],
            ..mask
        };
        assert_eq!(imputation_mse(&rows, &rows, &none, &enc).unwrap(), None);
    }

    #[test]
    fn mean_imputer_scores_about_one() {
        let (enc, rows) = gaussian_rows(20000, 3);
        let mask = gen_mcar(rows.len(), 2, 0.5, 4).unwrap();
        let means: Vec<f64> = enc
            .columns()
            .iter()
            .map(|c| match c.codec {
                ColumnCodec::Continuous { mean, .. } => mean,
                _ => unreachable!(),
            })
            .collect();
        let imputed: Vec<Row> = rows
            .iter()
            .map(|_| means.iter().map(|&m| Cell::Number(m)).collect())
            .collect();
        let v = imputation_mse(&imputed, &rows, &mask, &enc)
            .unwrap()
            .unwrap();
        assert!((v - 1.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn accuracy_of_uniform_guesses() {
        let schema = TabularSchema::new(vec![Column::categorical("c", 4)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cats = ["w", "x", "y", "z"];
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Row> {
            (0..20000)
                .map(|_| vec![Cell::Category(cats[rng.random_range(0..4)].into())])
                .collect()
        };
        let truth = draw(&mut rng);
        let guess = draw(&mut rng);
        Encoder::fit(&schema, &truth).unwrap();
        let mask = MaskTask {
            bits: vec![true; 20000],
            ..gen_mcar(20000, 1, 0.5, 0).unwrap()
        };
        assert_eq!(
            imputation_accuracy(&truth, &truth, &mask).unwrap(),
            Some(100.0)
        );
        let acc = imputation_accuracy(&guess, &truth, &mask).unwrap().unwrap();
        assert!((acc - 25.0).abs() < 1.0, "{acc}");
    }

    #[test]
    fn violation_rates() {
        let schema = TabularSchema::new(vec![Column::continuous("u")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Row> = (0..20000)
            .map(|_| vec![Cell::Number(rng.random::<f64>())])
            .collect();
        let enc = Encoder::fit(&schema, &rows).unwrap();
        let ge = |v: f64| ConstraintDoc::Inequality {
            column: "u".into(),
            lower: Some(v),
            upper: None,
            weight: None,
            norm_lower: None,
            norm_upper: None,
        };
        let v = violation_rate(&rows, &ge(0.9), &enc).unwrap();
        assert!((v - 90.0).abs() < 1.0, "{v}");
        assert_eq!(violation_rate(&rows, &ge(-1.0), &enc).unwrap(), 0.0);
        let or = ConstraintDoc::Or {
            children: vec![ge(-1.0), ge(0.9)],
        };
        assert_eq!(violation_rate(&rows, &or, &enc).unwrap(), 0.0);
        let imp = ConstraintDoc::Imputation {
            values: [("u".to_string(), Cell::Number(0.5))].into_iter().collect(),
            norm: None,
        };
        assert!(matches!(
            violation_rate(&rows, &imp, &enc),
            Err(MetricsError::NotApplicable(_))
        ));
    }

    #[test]
    fn stats_helpers() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert!(mean_std(&[]).0.is_nan());
    }
}
