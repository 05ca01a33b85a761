//! Inference-time constraint losses over the clean-sample estimate.
//!
//! Every loss is evaluated row-wise: a batch of `B` estimates produces a
//! `B × 1` column of non-negative losses. Row-dependent data (imputation
//! anchors, categorical targets) is stored with either one row, broadcast to
//! the whole batch, or exactly one row per sample.

use serde::{Deserialize, Serialize};

use crate::grad::{GradError, Matrix, Tape, Var};

use super::GuidanceError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    L2,
    /// Sum of squares; the MSE-style loss.
    L2Squared,
    Linf,
}

impl Norm {
    /// Row-wise norm of `x`.
    pub fn record(self, tape: &mut Tape<'_>, x: Var) -> Result<Var, GradError> {
        match self {
            Norm::L1 => {
                let a = tape.abs(x)?;
                tape.row_sum(a)
            }
            Norm::L2 => {
                let s = tape.square(x)?;
                let s = tape.row_sum(s)?;
                tape.sqrt(s)
            }
            Norm::L2Squared => {
                let s = tape.square(x)?;
                tape.row_sum(s)
            }
            Norm::Linf => {
                let a = tape.abs(x)?;
                tape.row_max(a)
            }
        }
    }

    pub fn apply(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::L2Squared => v.iter().map(|x| x * x).sum(),
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// Affine map `g(x) = x W + b` from `R^d` to `R^k`; each output is a
/// weighted combination of ambient coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selector {
    /// Per output: `(ambient index, coefficient)` terms.
    pub terms: Vec<Vec<(usize, f64)>>,
    pub offset: Vec<f64>,
}

impl Selector {
    /// Picks the listed coordinates unchanged.
    pub fn coordinates(indices: &[usize]) -> Self {
        Self {
            terms: indices.iter().map(|&i| vec![(i, 1.0)]).collect(),
            offset: vec![0.0; indices.len()],
        }
    }

    /// Picks a contiguous block of coordinates.
    pub fn block(start: usize, width: usize) -> Self {
        Self::coordinates(&(start..start + width).collect::<Vec<_>>())
    }

    pub fn outputs(&self) -> usize {
        self.terms.len()
    }

    fn validate(&self, dim: usize) -> Result<(), GuidanceError> {
        if self.terms.is_empty() || self.offset.len() != self.terms.len() {
            return Err(GuidanceError::Spec(
                "selector needs ≥1 output and one offset per output".into(),
            ));
        }
        for t in self.terms.iter().flatten() {
            if t.0 >= dim {
                return Err(GuidanceError::IndexOutOfRange { index: t.0, dim });
            }
            if !t.1.is_finite() {
                return Err(GuidanceError::Spec(
                    "non-finite selector coefficient".into(),
                ));
            }
        }
        Ok(())
    }

    /// `d × k` weight matrix.
    pub fn weights(&self, dim: usize) -> Matrix {
        let mut w = Matrix::zeros(dim, self.outputs());
        for (k, terms) in self.terms.iter().enumerate() {
            for &(i, c) in terms {
                w.set(i, k, w.get(i, k) + c);
            }
        }
        w
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .zip(&self.offset)
            .map(|(terms, b)| terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + b)
            .collect()
    }

    fn record(&self, tape: &mut Tape<'_>, x: Var, dim: usize) -> Result<Var, GradError> {
        let w = tape.constant(self.weights(dim));
        let b = tape.constant(Matrix::row_vector(self.offset.clone()));
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }
}

/// Composable inference-time objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintSpec {
    /// `‖m ⊙ (x̂ − x)‖_p` with `m = 1` on observed (anchored) entries.
    Imputation {
        mask: Matrix,
        target: Matrix,
        norm: Norm,
    },
    /// Cross-entropy of the softmax over each listed one-hot block against
    /// the one-hot `target`, counted for blocks fully set in `mask`.
    CategoricalCe {
        blocks: Vec<(usize, usize)>,
        mask: Matrix,
        target: Matrix,
    },
    /// `λ (‖ReLU(ℓ − g(x̂))‖_i + ‖ReLU(g(x̂) − u)‖_j)`.
    Inequality {
        selector: Selector,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
        weight: f64,
        norm_lower: Norm,
        norm_upper: Norm,
    },
    /// `λ ‖h(x̂) − v‖_k`.
    Equality {
        selector: Selector,
        value: Vec<f64>,
        weight: f64,
        norm: Norm,
    },
    /// Sum of child losses.
    And { children: Vec<ConstraintSpec> },
    /// Product of child losses.
    Or { children: Vec<ConstraintSpec> },
}

fn check_rows(m: &Matrix, what: &str, dim: usize) -> Result<(), GuidanceError> {
    if m.cols() != dim || m.rows() == 0 {
        return Err(GuidanceError::Spec(format!(
            "{what} is {}x{}, expected rows x {dim}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(GuidanceError::Spec(format!(
            "{what} has non-finite entries"
        )));
    }
    Ok(())
}

fn rows_for(m: &Matrix, start: usize, end: usize) -> Matrix {
    if m.rows() == 1 {
        let mut out = Matrix::zeros(end - start, m.cols());
        for r in 0..end - start {
            out.row_mut(r).copy_from_slice(m.row(0));
        }
        out
    } else {
        m.slice_rows(start, end)
    }
}

impl ConstraintSpec {
    /// Inequality with only a lower bound on one coordinate.
    pub fn at_least(index: usize, bound: f64, weight: f64, norm: Norm) -> Self {
        ConstraintSpec::Inequality {
            selector: Selector::coordinates(&[index]),
            lower: Some(vec![bound]),
            upper: None,
            weight,
            norm_lower: norm,
            norm_upper: norm,
        }
    }

    /// Inequality with only an upper bound on one coordinate.
    pub fn at_most(index: usize, bound: f64, weight: f64, norm: Norm) -> Self {
        ConstraintSpec::Inequality {
            selector: Selector::coordinates(&[index]),
            lower: None,
            upper: Some(vec![bound]),
            weight,
            norm_lower: norm,
            norm_upper: norm,
        }
    }

    /// Checks indices, weights, masks and arity against ambient dimension
    /// `dim`.
    pub fn validate(&self, dim: usize) -> Result<(), GuidanceError> {
        match self {
            ConstraintSpec::Imputation { mask, target, .. } => {
                check_rows(mask, "imputation mask", dim)?;
                check_rows(target, "imputation target", dim)?;
                if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(GuidanceError::Spec("imputation mask must be 0/1".into()));
                }
                if mask.data().iter().all(|&v| v == 0.0) {
                    return Err(GuidanceError::Spec("imputation mask is empty".into()));
                }
                if mask.rows() != 1 && target.rows() != 1 && mask.rows() != target.rows() {
                    return Err(GuidanceError::Spec("mask/target row counts differ".into()));
                }
            }
            ConstraintSpec::CategoricalCe {
                blocks,
                mask,
                target,
            } => {
                check_rows(mask, "ce mask", dim)?;
                check_rows(target, "ce target", dim)?;
                if blocks.is_empty() {
                    return Err(GuidanceError::Spec("ce needs at least one block".into()));
                }
                for &(s, w) in blocks {
                    if w < 2 {
                        return Err(GuidanceError::Spec("ce block narrower than 2".into()));
                    }
                    if s + w > dim {
                        return Err(GuidanceError::IndexOutOfRange {
                            index: s + w - 1,
                            dim,
                        });
                    }
                }
                if mask.data().iter().all(|&v| v == 0.0) {
                    return Err(GuidanceError::Spec("ce mask is empty".into()));
                }
            }
            ConstraintSpec::Inequality {
                selector,
                lower,
                upper,
                weight,
                ..
            } => {
                selector.validate(dim)?;
                if !(*weight > 0.0 && weight.is_finite()) {
                    return Err(GuidanceError::Spec(format!(
                        "inequality weight must be > 0, got {weight}"
                    )));
                }
                if lower.is_none() && upper.is_none() {
                    return Err(GuidanceError::Spec(
                        "inequality needs a lower or an upper bound".into(),
                    ));
                }
                for b in lower.iter().chain(upper.iter()) {
                    if b.len() != selector.outputs() || b.iter().any(|v| !v.is_finite()) {
                        return Err(GuidanceError::Spec(
                            "bound length/finiteness mismatch".into(),
                        ));
                    }
                }
            }
            ConstraintSpec::Equality {
                selector,
                value,
                weight,
                ..
            } => {
                selector.validate(dim)?;
                if !(*weight > 0.0 && weight.is_finite()) {
                    return Err(GuidanceError::Spec(format!(
                        "equality weight must be > 0, got {weight}"
                    )));
                }
                if value.len() != selector.outputs() || value.iter().any(|v| !v.is_finite()) {
                    return Err(GuidanceError::Spec(
                        "equality value length/finiteness mismatch".into(),
                    ));
                }
            }
            ConstraintSpec::And { children } => {
                if children.is_empty() {
                    return Err(GuidanceError::Spec("conjunction needs children".into()));
                }
                for c in children {
                    c.validate(dim)?;
                }
            }
            ConstraintSpec::Or { children } => {
                if children.len() < 2 {
                    return Err(GuidanceError::Spec(
                        "disjunction needs at least 2 children".into(),
                    ));
                }
                for c in children {
                    c.validate(dim)?;
                }
            }
        }
        Ok(())
    }

    /// Number of per-sample rows stored, if any component is per-sample.
    pub fn row_count(&self) -> Option<usize> {
        match self {
            ConstraintSpec::Imputation { mask, target, .. }
            | ConstraintSpec::CategoricalCe { mask, target, .. } => {
                let n = mask.rows().max(target.rows());
                (n > 1).then_some(n)
            }
            ConstraintSpec::And { children } | ConstraintSpec::Or { children } => {
                children.iter().filter_map(|c| c.row_count()).max()
            }
            _ => None,
        }
    }

    /// This constraint restricted to samples `[start, end)`, with broadcast rows
    /// expanded.
    pub fn for_rows(&self, start: usize, end: usize) -> ConstraintSpec {
        match self {
            ConstraintSpec::Imputation { mask, target, norm } => ConstraintSpec::Imputation {
                mask: rows_for(mask, start, end),
                target: rows_for(target, start, end),
                norm: *norm,
            },
            ConstraintSpec::CategoricalCe {
                blocks,
                mask,
                target,
            } => ConstraintSpec::CategoricalCe {
                blocks: blocks.clone(),
                mask: rows_for(mask, start, end),
                target: rows_for(target, start, end),
            },
            ConstraintSpec::And { children } => ConstraintSpec::And {
                children: children.iter().map(|c| c.for_rows(start, end)).collect(),
            },
            ConstraintSpec::Or { children } => ConstraintSpec::Or {
                children: children.iter().map(|c| c.for_rows(start, end)).collect(),
            },
            other => other.clone(),
        }
    }

    /// Records the row-wise loss of `xhat` (`B × d`). Per-sample data must
    /// already have `B` rows (see [`ConstraintSpec::for_rows`]).
    pub fn record(&self, tape: &mut Tape<'_>, xhat: Var) -> Result<Var, GradError> {
        let (rows, dim) = tape.value(xhat).shape();
        match self {
            ConstraintSpec::Imputation { mask, target, norm } => {
                let t = tape.constant(rows_for(target, 0, rows));
                let m = tape.constant(rows_for(mask, 0, rows));
                let diff = tape.sub(xhat, t)?;
                let masked = tape.mul(diff, m)?;
                norm.record(tape, masked)
            }
            ConstraintSpec::CategoricalCe {
                blocks,
                mask,
                target,
            } => {
                let mask = rows_for(mask, 0, rows);
                let target = rows_for(target, 0, rows);
                let mut total: Option<Var> = None;
                for &(s, w) in blocks {
                    // target block, zeroed on rows where the block is not anchored
                    let weights = Matrix::from_fn(rows, w, |r, k| {
                        let active = (s..s + w).all(|c| mask.get(r, c) != 0.0);
                        if active {
                            target.get(r, s + k)
                        } else {
                            0.0
                        }
                    });
                    let block = tape.slice_cols(xhat, s, s + w)?;
                    let ls = tape.log_softmax(block)?;
                    let wv = tape.constant(weights);
                    let picked = tape.mul(ls, wv)?;
                    let term = tape.row_sum(picked)?;
                    total = Some(match total {
                        Some(acc) => tape.add(acc, term)?,
                        None => term,
                    });
                }
                let total = total.ok_or(GradError::Shape {
                    op: "ce",
                    lhs: (rows, dim),
                    rhs: (0, 0),
                })?;
                tape.scale(total, -1.0)
            }
            ConstraintSpec::Inequality {
                selector,
                lower,
                upper,
                weight,
                norm_lower,
                norm_upper,
            } => {
                let g = selector.record(tape, xhat, dim)?;
                let mut total: Option<Var> = None;
                if let Some(lo) = lower {
                    let neg = tape.scale(g, -1.0)?;
                    let lo = tape.constant(Matrix::row_vector(lo.clone()));
                    let gap = tape.add_bias(neg, lo)?;
                    let viol = tape.relu(gap)?;
                    total = Some(norm_lower.record(tape, viol)?);
                }
                if let Some(hi) = upper {
                    let neg_hi = tape.constant(Matrix::row_vector(hi.iter().map(|v| -v).collect()));
                    let gap = tape.add_bias(g, neg_hi)?;
                    let viol = tape.relu(gap)?;
                    let n = norm_upper.record(tape, viol)?;
                    total = Some(match total {
                        Some(acc) => tape.add(acc, n)?,
                        None => n,
                    });
                }
                let total = total.ok_or(GradError::Shape {
                    op: "inequality",
                    lhs: (rows, dim),
                    rhs: (0, 0),
                })?;
                tape.scale(total, *weight)
            }
            ConstraintSpec::Equality {
                selector,
                value,
                weight,
                norm,
            } => {
                let h = selector.record(tape, xhat, dim)?;
                let neg_v = tape.constant(Matrix::row_vector(value.iter().map(|v| -v).collect()));
                let diff = tape.add_bias(h, neg_v)?;
                let n = norm.record(tape, diff)?;
                tape.scale(n, *weight)
            }
            ConstraintSpec::And { children } | ConstraintSpec::Or { children } => {
                let is_and = matches!(self, ConstraintSpec::And { .. });
                let mut acc = children[0].record(tape, xhat)?;
                for c in &children[1..] {
                    let v = c.record(tape, xhat)?;
                    acc = if is_and {
                        tape.add(acc, v)?
                    } else {
                        tape.mul(acc, v)?
                    };
                }
                Ok(acc)
            }
        }
    }

    /// Per-row losses of a batch of estimates.
    pub fn row_losses(&self, xhat: &Matrix) -> Result<Vec<f64>, GuidanceError> {
        self.validate(xhat.cols())?;
        if let Some(n) = self.row_count() {
            if n != xhat.rows() {
                return Err(GuidanceError::Spec(format!(
                    "spec holds {n} per-sample rows, batch has {}",
                    xhat.rows()
                )));
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(xhat.clone());
        let out = self.record(&mut tape, x)?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// Total loss of a batch of estimates (a single `1 × d` estimate gives its
/// loss).
pub fn eval_loss(spec: &ConstraintSpec, xhat: &Matrix) -> Result<f64, GuidanceError> {
    Ok(spec.row_losses(xhat)?.iter().sum())
}

/// Which loss family a task calls for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Imputation,
    Inequality,
    /// Continuous anchors plus categorical blocks.
    Mixed,
}

/// Default norms and weights per task.
#[derive(Clone, Debug, PartialEq)]
pub struct LossDefaults {
    pub imputation_norm: Norm,
    pub norm_lower: Norm,
    pub norm_upper: Norm,
    pub norm_equality: Norm,
    pub inequality_weight: f64,
    pub equality_weight: f64,
    /// Add cross-entropy on anchored categorical blocks.
    pub categorical_ce: bool,
}

pub fn default_loss_for(task: TaskKind) -> LossDefaults {
    LossDefaults {
        imputation_norm: Norm::L1,
        norm_lower: Norm::L2,
        norm_upper: Norm::L2,
        norm_equality: Norm::L1,
        inequality_weight: 1.0,
        equality_weight: 1.0,
        categorical_ce: task == TaskKind::Mixed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Matrix {
        Matrix::row_vector(vec![v])
    }

    fn range(lo: f64, hi: f64) -> ConstraintSpec {
        ConstraintSpec::Inequality {
            selector: Selector::coordinates(&[0]),
            lower: Some(vec![lo]),
            upper: Some(vec![hi]),
            weight: 1.0,
            norm_lower: Norm::L1,
            norm_upper: Norm::L1,
        }
    }

    #[test]
    fn interior_point_has_zero_loss() {
        assert_eq!(eval_loss(&range(0.0, 1.0), &s(0.5)).unwrap(), 0.0);
    }

    #[test]
    fn single_sided_relu_magnitude() {
        let spec = ConstraintSpec::at_most(0, 1.0, 1.0, Norm::L1);
        let v = eval_loss(&spec, &s(1.3)).unwrap();
        assert!((v - 0.3).abs() < 1e-15, "{v}");
    }

    #[test]
    fn disjunction_is_a_product() {
        let spec = ConstraintSpec::Or {
            children: vec![
                ConstraintSpec::at_least(0, 2.0, 1.0, Norm::L1),
                ConstraintSpec::at_most(0, 1.0, 1.0, Norm::L1),
            ],
        };
        assert_eq!(eval_loss(&spec, &s(1.5)).unwrap(), 0.25);
        assert_eq!(eval_loss(&spec, &s(0.5)).unwrap(), 0.0);
    }

    #[test]
    fn imputation_on_observed_entries_only() {
        let spec = ConstraintSpec::Imputation {
            mask: Matrix::row_vector(vec![1.0, 0.0]),
            target: Matrix::row_vector(vec![2.0, 5.0]),
            norm: Norm::L1,
        };
        assert_eq!(
            eval_loss(&spec, &Matrix::row_vector(vec![2.0, -7.0])).unwrap(),
            0.0
        );
        assert_eq!(
            eval_loss(&spec, &Matrix::row_vector(vec![2.5, -7.0])).unwrap(),
            0.5
        );
        let l2 = ConstraintSpec::Imputation {
            mask: Matrix::row_vector(vec![1.0, 1.0]),
            target: Matrix::row_vector(vec![0.0, 0.0]),
            norm: Norm::L2,
        };
        assert_eq!(
            eval_loss(&l2, &Matrix::row_vector(vec![3.0, 4.0])).unwrap(),
            5.0
        );
        let sq = ConstraintSpec::Imputation {
            mask: Matrix::row_vector(vec![1.0, 1.0]),
            target: Matrix::row_vector(vec![0.0, 0.0]),
            norm: Norm::L2Squared,
        };
        assert_eq!(
            eval_loss(&sq, &Matrix::row_vector(vec![3.0, 4.0])).unwrap(),
            25.0
        );
    }

    #[test]
    fn equality_and_linf() {
        let spec = ConstraintSpec::Equality {
            selector: Selector::coordinates(&[0, 1]),
            value: vec![1.0, 1.0],
            weight: 2.0,
            norm: Norm::Linf,
        };
        assert_eq!(
            eval_loss(&spec, &Matrix::row_vector(vec![1.5, -1.0])).unwrap(),
            4.0
        );
    }

    #[test]
    fn categorical_ce_matches_closed_form() {
        let spec = ConstraintSpec::CategoricalCe {
            blocks: vec![(1, 3)],
            mask: Matrix::row_vector(vec![0.0, 1.0, 1.0, 1.0]),
            target: Matrix::row_vector(vec![0.0, 0.0, 1.0, 0.0]),
        };
        let x = [9.0, 0.1, 0.7, -0.3];
        let lse = (x[1..].iter().map(|v: &f64| v.exp()).sum::<f64>()).ln();
        let want = lse - 0.7;
        let got = eval_loss(&spec, &Matrix::row_vector(x.to_vec())).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn validation_errors() {
        let bad_index = ConstraintSpec::at_least(5, 0.0, 1.0, Norm::L1);
        assert!(matches!(
            bad_index.validate(3),
            Err(GuidanceError::IndexOutOfRange { index: 5, dim: 3 })
        ));
        let zero_weight = ConstraintSpec::at_least(0, 0.0, 0.0, Norm::L1);
        assert!(zero_weight.validate(3).is_err());
        let single_or = ConstraintSpec::Or {
            children: vec![ConstraintSpec::at_least(0, 0.0, 1.0, Norm::L1)],
        };
        assert!(single_or.validate(3).is_err());
        let empty_mask = ConstraintSpec::Imputation {
            mask: Matrix::zeros(1, 3),
            target: Matrix::zeros(1, 3),
            norm: Norm::L1,
        };
        assert!(empty_mask.validate(3).is_err());
    }

    #[test]
    fn per_row_specs_slice_and_broadcast() {
        let spec = ConstraintSpec::Imputation {
            mask: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap(),
            target: Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]]).unwrap(),
            norm: Norm::L1,
        };
        assert_eq!(spec.row_count(), Some(3));
        let x = Matrix::zeros(3, 2);
        assert_eq!(spec.row_losses(&x).unwrap(), vec![1.0, 2.0, 6.0]);
        let tail = spec.for_rows(1, 3);
        assert_eq!(
            tail.row_losses(&Matrix::zeros(2, 2)).unwrap(),
            vec![2.0, 6.0]
        );
        assert!(spec.row_losses(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn defaults() {
        let d = default_loss_for(TaskKind::Imputation);
        assert_eq!(d.imputation_norm, Norm::L1);
        assert!(!d.categorical_ce);
        let d = default_loss_for(TaskKind::Inequality);
        assert_eq!(
            (d.norm_lower, d.norm_upper, d.norm_equality),
            (Norm::L2, Norm::L2, Norm::L1)
        );
        assert_eq!((d.inequality_weight, d.equality_weight), (1.0, 1.0));
        let d = default_loss_for(TaskKind::Mixed);
        assert!(d.categorical_ce && d.imputation_norm == Norm::L1);
    }
}
