//! Dense linear algebra and reverse-mode differentiation.
//!
//! Only the primitives the denoiser and the guidance losses need are
//! supported: matrix products, bias addition, swish, ReLU, absolute value,
//! elementwise arithmetic, square root, column slicing and concatenation,
//! row reductions, row-wise log-softmax and the sinusoidal time embedding.
//! Everything runs in `f64`.

mod matrix;
mod tape;

use thiserror::Error;

pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{len} values cannot fill a {rows}x{cols} matrix")]
    Length {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("adjoint shape {got:?} does not match output shape {expected:?}")]
    AdjointShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("variable {0} was not recorded on this tape")]
    UnknownVar(usize),
}

/// Sinusoidal embedding of integer timesteps.
///
/// Row `i` is `[sin(t_i ω_0) … sin(t_i ω_{h-1}), cos(t_i ω_0) … cos(t_i ω_{h-1})]`
/// with `h = width / 2` and `ω_k = 10000^(-k / h)`. `width` must be even.
pub fn sinusoidal_embedding(steps: &[usize], width: usize) -> Matrix {
    assert!(
        width >= 2 && width.is_multiple_of(2),
        "embedding width must be even"
    );
    let half = width / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|k| (-(10000f64).ln() * k as f64 / half as f64).exp())
        .collect();
    let mut out = Matrix::zeros(steps.len(), width);
    for (r, &t) in steps.iter().enumerate() {
        let row = out.row_mut(r);
        for (k, &w) in freqs.iter().enumerate() {
            let arg = t as f64 * w;
            row[k] = arg.sin();
            row[half + k] = arg.cos();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_at_zero_is_sin0_cos0() {
        let e = sinusoidal_embedding(&[0], 8);
        assert_eq!(e.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn embedding_first_frequency_is_one() {
        let e = sinusoidal_embedding(&[3], 4);
        assert!((e.get(0, 0) - 3f64.sin()).abs() < 1e-15);
        assert!((e.get(0, 2) - 3f64.cos()).abs() < 1e-15);
        // second frequency is 10000^(-1/2)
        assert!((e.get(0, 1) - (3.0 * 0.01f64).sin()).abs() < 1e-15);
    }
}
