use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{Cell, ColumnCodec, Encoder, Row};
use crate::grad::Matrix;

use super::TaskError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl std::str::FromStr for Mechanism {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            "mnar" => Ok(Mechanism::Mnar),
            other => Err(TaskError::Config(format!(
                "unknown mechanism `{other}` (mcar, mar, mnar)"
            ))),
        }
    }
}

/// Column-level missingness bits, row-major. `true` means MISSING.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskTask {
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
    pub seed: u64,
    /// Columns that are never masked (MAR).
    pub observed_columns: Vec<usize>,
    /// Columns whose values drive the logistic masks (MAR, MNAR).
    pub driver_columns: Vec<usize>,
}

impl MaskTask {
    pub fn missing(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.bits[row * self.cols..(row + 1) * self.cols]
    }

    pub fn missing_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of all cells that are missing.
    pub fn realized_ratio(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.missing_count() as f64 / self.bits.len() as f64
    }

    /// Fraction of missing cells among columns that may be masked.
    pub fn maskable_ratio(&self) -> f64 {
        let maskable = self.cols - self.observed_columns.len();
        if maskable == 0 || self.rows == 0 {
            return 0.0;
        }
        self.missing_count() as f64 / (maskable * self.rows) as f64
    }

    /// `n × d` ambient matrix with 1 on OBSERVED coordinates.
    pub fn observed_ambient(&self, enc: &Encoder) -> Result<Matrix, TaskError> {
        if enc.columns().len() != self.cols {
            return Err(TaskError::Config(format!(
                "mask has {} columns, encoder {}",
                self.cols,
                enc.columns().len()
            )));
        }
        let mut out = Matrix::zeros(self.rows, enc.dim());
        for r in 0..self.rows {
            let observed: Vec<bool> = self.row(r).iter().map(|m| !m).collect();
            let amb = enc.mask_to_ambient(&observed)?;
            out.row_mut(r).copy_from_slice(amb.row(0));
        }
        Ok(out)
    }

    /// Writes one 0/1 line per data row under the given header (1 = missing).
    pub fn write_csv<W: Write>(&self, writer: W, headers: &[String]) -> Result<(), TaskError> {
        if headers.len() != self.cols {
            return Err(TaskError::Config("mask header width mismatch".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(headers).map_err(TaskError::csv)?;
        for r in 0..self.rows {
            w.write_record(self.row(r).iter().map(|&b| if b { "1" } else { "0" }))
                .map_err(TaskError::csv)?;
        }
        w.flush().map_err(|e| TaskError::Csv(e.to_string()))?;
        Ok(())
    }

    /// Reads bits written by [`MaskTask::write_csv`]. Metadata other than the
    /// bits is not stored in the file and is set to MCAR defaults.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<bool>, usize), TaskError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(TaskError::csv)?
            .iter()
            .map(str::to_string)
            .collect();
        let mut bits = Vec::new();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(TaskError::csv)?;
            for v in rec.iter() {
                bits.push(match v.trim() {
                    "1" => true,
                    "0" => false,
                    other => return Err(TaskError::Csv(format!("mask cell `{other}` is not 0/1"))),
                });
            }
            rows += 1;
        }
        Ok((headers, bits, rows))
    }
}

fn check_ratio(ratio: f64) -> Result<(), TaskError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TaskError::Config(format!(
            "ratio must lie in (0, 1), got {ratio}"
        )));
    }
    Ok(())
}

/// Each cell missing independently with probability `ratio`.
pub fn gen_mcar(rows: usize, cols: usize, ratio: f64, seed: u64) -> Result<MaskTask, TaskError> {
    check_ratio(ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..rows * cols)
        .map(|_| rng.random::<f64>() < ratio)
        .collect();
    Ok(MaskTask {
        mechanism: Mechanism::Mcar,
        ratio,
        rows,
        cols,
        bits,
        seed,
        observed_columns: Vec::new(),
        driver_columns: Vec::new(),
    })
}

/// One numeric feature per modeled column, used to drive logistic masks:
/// standardized value for continuous columns, centered and scaled class
/// index for categorical ones.
pub fn column_features(enc: &Encoder, rows: &[Row]) -> Result<Matrix, TaskError> {
    let cols = enc.columns();
    let mut out = Matrix::zeros(rows.len(), cols.len());
    for (r, row) in rows.iter().enumerate() {
        if row.len() != cols.len() {
            return Err(TaskError::Config(format!(
                "row {r} has {} cells, expected {}",
                row.len(),
                cols.len()
            )));
        }
        for (c, (col, cell)) in cols.iter().zip(row).enumerate() {
            let v = match (&col.codec, cell) {
                (ColumnCodec::Continuous { mean, std }, Cell::Number(v)) => (v - mean) / std,
                (ColumnCodec::Categorical { categories }, Cell::Category(s)) => {
                    let k = categories.len() as f64;
                    let i = col.category_index(s).ok_or_else(|| {
                        TaskError::Config(format!(
                            "row {r}: unseen category `{s}` in `{}`",
                            col.name
                        ))
                    })? as f64;
                    (i - (k - 1.0) / 2.0) / (k / 2.0)
                }
                _ => {
                    return Err(TaskError::Config(format!(
                        "row {r}: cell type mismatch in `{}`",
                        col.name
                    )))
                }
            };
            out.set(r, c, v);
        }
    }
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bisection on the bias over `[-20, 20]` (60 iterations) so that the
/// realized fraction of `u < σ(logit + b)` over all entries meets `ratio`.
/// Returns the resulting bits.
fn tune_bias(logits: &[f64], uniforms: &[f64], ratio: f64) -> Result<Vec<bool>, TaskError> {
    let frac = |b: f64| {
        let hits = logits
            .iter()
            .zip(uniforms)
            .filter(|(l, u)| **u < sigmoid(**l + b))
            .count();
        hits as f64 / logits.len().max(1) as f64
    };
    let (mut lo, mut hi) = (-20.0, 20.0);
    if frac(lo) > ratio + 0.02 || frac(hi) < ratio - 0.02 {
        return Err(TaskError::Bracket { ratio });
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) < ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = if (frac(lo) - ratio).abs() <= (frac(hi) - ratio).abs() {
        lo
    } else {
        hi
    };
    Ok(logits
        .iter()
        .zip(uniforms)
        .map(|(l, u)| *u < sigmoid(l + b))
        .collect())
}

/// Logistic masks for `targets` driven by `drivers`: a standard-normal weight
/// per (driver, target) pair, one shared bias tuned to `ratio`.
fn logistic_masks(
    features: &Matrix,
    drivers: &[usize],
    targets: &[usize],
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<bool>, TaskError> {
    let n = features.rows();
    let w: Vec<f64> = (0..drivers.len() * targets.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let mut logits = Vec::with_capacity(n * targets.len());
    for r in 0..n {
        let x = features.row(r);
        for j in 0..targets.len() {
            logits.push(
                drivers
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| w[k * targets.len() + j] * x[c])
                    .sum::<f64>(),
            );
        }
    }
    let uniforms: Vec<f64> = (0..logits.len()).map(|_| rng.random::<f64>()).collect();
    tune_bias(&logits, &uniforms, ratio)
}

/// Default number of always-observed MAR columns: `⌈0.3 · cols⌉`, at least 1
/// and leaving at least one maskable column.
pub fn default_observed_cols(cols: usize) -> usize {
    ((cols as f64 * 0.3).ceil() as usize).clamp(1, cols.saturating_sub(1).max(1))
}

/// Missing at random: `n_observed_cols` random columns stay observed; every
/// other cell is missing with probability `σ(w · x_obs + b)`. The ratio is
/// met over the maskable cells.
pub fn gen_mar(
    features: &Matrix,
    ratio: f64,
    n_observed_cols: usize,
    seed: u64,
) -> Result<MaskTask, TaskError> {
    check_ratio(ratio)?;
    let (rows, cols) = features.shape();
    if n_observed_cols == 0 || n_observed_cols >= cols {
        return Err(TaskError::Config(format!(
            "need 1 ≤ observed columns < {cols}, got {n_observed_cols}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..cols).collect();
    order.shuffle(&mut rng);
    let mut observed = order[..n_observed_cols].to_vec();
    observed.sort_unstable();
    let maskable: Vec<usize> = (0..cols).filter(|c| !observed.contains(c)).collect();
    let drawn = logistic_masks(features, &observed, &maskable, ratio, &mut rng)?;
    let mut bits = vec![false; rows * cols];
    for r in 0..rows {
        for (j, &c) in maskable.iter().enumerate() {
            bits[r * cols + c] = drawn[r * maskable.len() + j];
        }
    }
    Ok(MaskTask {
        mechanism: Mechanism::Mar,
        ratio,
        rows,
        cols,
        bits,
        seed,
        driver_columns: observed.clone(),
        observed_columns: observed,
    })
}

/// Missing not at random: columns split into two halves; the second half is
/// masked logistically from the first half's values, the first half MCAR.
/// Both halves are tuned to `ratio`.
pub fn gen_mnar(features: &Matrix, ratio: f64, seed: u64) -> Result<MaskTask, TaskError> {
    check_ratio(ratio)?;
    let (rows, cols) = features.shape();
    if cols < 2 {
        return Err(TaskError::Config("MNAR needs at least 2 columns".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..cols).collect();
    order.shuffle(&mut rng);
    let (g1, g2) = order.split_at(cols / 2);
    let mut g1 = g1.to_vec();
    let mut g2 = g2.to_vec();
    g1.sort_unstable();
    g2.sort_unstable();
    let drawn = logistic_masks(features, &g1, &g2, ratio, &mut rng)?;
    let mut bits = vec![false; rows * cols];
    for r in 0..rows {
        for (j, &c) in g2.iter().enumerate() {
            bits[r * cols + c] = drawn[r * g2.len() + j];
        }
        for &c in &g1 {
            bits[r * cols + c] = rng.random::<f64>() < ratio;
        }
    }
    Ok(MaskTask {
        mechanism: Mechanism::Mnar,
        ratio,
        rows,
        cols,
        bits,
        seed,
        observed_columns: Vec::new(),
        driver_columns: g1,
    })
}

/// Dispatches on the mechanism with default settings.
pub fn gen_mask(
    mechanism: Mechanism,
    features: &Matrix,
    ratio: f64,
    seed: u64,
) -> Result<MaskTask, TaskError> {
    match mechanism {
        Mechanism::Mcar => gen_mcar(features.rows(), features.cols(), ratio, seed),
        Mechanism::Mar => gen_mar(
            features,
            ratio,
            default_observed_cols(features.cols()),
            seed,
        ),
        Mechanism::Mnar => gen_mnar(features, ratio, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn mcar_concentration_and_determinism() {
        let m = gen_mcar(1000, 100, 0.5, 9).unwrap();
        let f = m.realized_ratio();
        assert!((0.48..=0.52).contains(&f), "{f}");
        assert_eq!(gen_mcar(1000, 100, 0.5, 9).unwrap(), m);
        assert_ne!(gen_mcar(1000, 100, 0.5, 10).unwrap().bits, m.bits);
        assert!(gen_mcar(10, 10, 0.0, 0).is_err());
        assert!(gen_mcar(10, 10, 1.0, 0).is_err());
    }

    #[test]
    fn mar_keeps_observed_columns_and_hits_ratio() {
        let x = features(2000, 10, 1);
        for ratio in [0.25, 0.5, 0.75] {
            let m = gen_mar(&x, ratio, 3, 4).unwrap();
            assert_eq!(m.observed_columns.len(), 3);
            for r in 0..m.rows {
                for &c in &m.observed_columns {
                    assert!(!m.missing(r, c));
                }
            }
            assert!(
                (m.maskable_ratio() - ratio).abs() <= 0.02,
                "{}",
                m.maskable_ratio()
            );
        }
        assert!(gen_mar(&x, 0.5, 0, 0).is_err());
        assert!(gen_mar(&x, 0.5, 10, 0).is_err());
    }

    #[test]
    fn zero_weights_reduce_to_uniform() {
        // constant features make the logits identical, so only the bias acts
        let x = Matrix::zeros(5000, 4);
        let m = gen_mar(&x, 0.3, 1, 2).unwrap();
        assert!((m.maskable_ratio() - 0.3).abs() <= 0.02);
    }

    #[test]
    fn mnar_ratio_and_driver_sensitivity() {
        let x = features(3000, 6, 3);
        let m = gen_mnar(&x, 0.5, 8).unwrap();
        assert!(
            (m.realized_ratio() - 0.5).abs() <= 0.02,
            "{}",
            m.realized_ratio()
        );
        // permuting the driver half's values changes the other half's masks
        let mut permuted = x.clone();
        for r in 0..x.rows() {
            for &c in &m.driver_columns {
                permuted.set(r, c, x.get((r + 1) % x.rows(), c));
            }
        }
        let p = gen_mnar(&permuted, 0.5, 8).unwrap();
        assert_ne!(p.bits, m.bits);
        assert!(gen_mnar(&features(10, 1, 0), 0.5, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = gen_mcar(4, 3, 0.5, 1).unwrap();
        let headers = vec!["a".to_string(), "b".into(), "c".into()];
        let mut buf = Vec::new();
        m.write_csv(&mut buf, &headers).unwrap();
        let (h, bits, rows) = MaskTask::read_csv(buf.as_slice()).unwrap();
        assert_eq!((h, bits, rows), (headers, m.bits.clone(), 4));
    }
}
