//! Reverse-mode differentiation over a recorded sequence of primitive ops.
//!
//! A [`Tape`] records every value it produces together with the op that made
//! it. [`Tape::backward`] walks that record in exact reverse order, so the
//! adjoint of every node is complete before it is propagated further.
//! Leaves are inputs (differentiated), parameters (differentiated, borrowed
//! from the owning model) or constants (never differentiated). Nodes that do
//! not depend on a differentiated leaf are skipped during the backward pass.

use std::borrow::Cow;

use super::{GradError, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Swish(Var),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    RowSum(Var),
    RowMax(Var, Vec<usize>),
    LogSoftmax(Var),
    SumAll(Var),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Borrowed parameters live for `'a`.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    inputs: Vec<Var>,
    params: Vec<Var>,
    consumed: bool,
}

/// Adjoints produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    inputs: Vec<Var>,
    params: Vec<Var>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if `var` does not influence the
    /// output.
    pub fn wrt(&self, var: Var) -> Matrix {
        match self.grads.get(var.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Input gradients in registration order.
    pub fn inputs(&self) -> Vec<Matrix> {
        self.inputs.iter().map(|&v| self.wrt(v)).collect()
    }

    /// Parameter gradients in registration order.
    pub fn params(&self) -> Vec<Matrix> {
        self.params.iter().map(|&v| self.wrt(v)).collect()
    }

    /// Moves the parameter gradients out in registration order.
    pub fn into_params(mut self) -> Vec<Matrix> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .map(|v| {
                self.grads[v.0].take().unwrap_or_else(|| {
                    let (r, c) = self.shapes[v.0];
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Recorded value of `var`.
    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<&Node<'a>, GradError> {
        self.nodes.get(var.0).ok_or(GradError::UnknownVar(var.0))
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(Var) -> Op,
    ) -> Result<Var, GradError> {
        let node = self.check(a)?;
        let out = node.value.map(f);
        let ng = node.needs_grad;
        Ok(self.push(Cow::Owned(out), op(a), ng))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, GradError> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        let out = na.value.zip_map(&nb.value, name, f)?;
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(Cow::Owned(out), op, ng))
    }

    /// Differentiated input leaf.
    pub fn input(&mut self, value: Matrix) -> Var {
        let v = self.push(Cow::Owned(value), Op::Leaf, true);
        self.inputs.push(v);
        v
    }

    /// Differentiated parameter leaf borrowed from its owner.
    pub fn param(&mut self, value: &'a Matrix) -> Var {
        let v = self.push(Cow::Borrowed(value), Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// Non-differentiated leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Non-differentiated borrowed leaf.
    pub fn constant_ref(&mut self, value: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        let out = na.value.matmul(&nb.value)?;
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), ng))
    }

    /// Adds a `1 × n` bias to every row of a `B × n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, GradError> {
        let (na, nb) = (self.check(a)?, self.check(bias)?);
        if nb.value.rows() != 1 || nb.value.cols() != na.value.cols() {
            return Err(GradError::Shape {
                op: "add_bias",
                lhs: na.value.shape(),
                rhs: nb.value.shape(),
            });
        }
        let mut out = na.value.as_ref().clone();
        let b = nb.value.data();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(Cow::Owned(out), Op::AddBias(a, bias), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, GradError> {
        self.unary(a, |x| x * s, |a| Op::Scale(a, s))
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var, GradError> {
        self.unary(a, |x| x + c, Op::Shift)
    }

    pub fn swish(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, swish, Op::Swish)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, f64::abs, Op::Abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, |x| x * x, Op::Square)
    }

    /// Elementwise square root. Negative inputs are a usage error upstream;
    /// the adjoint at 0 is defined as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, f64::sqrt, Op::Sqrt)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        if na.value.rows() != nb.value.rows() {
            return Err(GradError::Shape {
                op: "concat_cols",
                lhs: na.value.shape(),
                rhs: nb.value.shape(),
            });
        }
        let (ra, ca, cb) = (na.value.rows(), na.value.cols(), nb.value.cols());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(na.value.row(r));
            data.extend_from_slice(nb.value.row(r));
        }
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(
            Cow::Owned(Matrix::from_raw(ra, ca + cb, data)),
            Op::ConcatCols(a, b),
            ng,
        ))
    }

    /// Columns `[start, end)` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, GradError> {
        let na = self.check(a)?;
        if start >= end || end > na.value.cols() {
            return Err(GradError::Shape {
                op: "slice_cols",
                lhs: na.value.shape(),
                rhs: (start, end),
            });
        }
        let m = &na.value;
        let out = Matrix::from_fn(m.rows(), end - start, |r, c| m.get(r, start + c));
        let ng = na.needs_grad;
        Ok(self.push(Cow::Owned(out), Op::SliceCols(a, start), ng))
    }

    /// Per-row sum, `B × n → B × 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, GradError> {
        let na = self.check(a)?;
        let out = Matrix::from_raw(
            na.value.rows(),
            1,
            na.value.iter_rows().map(|r| r.iter().sum()).collect(),
        );
        let ng = na.needs_grad;
        Ok(self.push(Cow::Owned(out), Op::RowSum(a), ng))
    }

    /// Per-row maximum, `B × n → B × 1`. Ties resolve to the lowest column.
    pub fn row_max(&mut self, a: Var) -> Result<Var, GradError> {
        let na = self.check(a)?;
        let mut arg = Vec::with_capacity(na.value.rows());
        let mut vals = Vec::with_capacity(na.value.rows());
        for r in na.value.iter_rows() {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            arg.push(best);
            vals.push(r[best]);
        }
        let out = Matrix::from_raw(na.value.rows(), 1, vals);
        let ng = na.needs_grad;
        Ok(self.push(Cow::Owned(out), Op::RowMax(a, arg), ng))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let na = self.check(a)?;
        let m = &na.value;
        let mut data = Vec::with_capacity(m.rows() * m.cols());
        for r in m.iter_rows() {
            let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + r.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            data.extend(r.iter().map(|&v| v - lse));
        }
        let out = Matrix::from_raw(m.rows(), m.cols(), data);
        let ng = na.needs_grad;
        Ok(self.push(Cow::Owned(out), Op::LogSoftmax(a), ng))
    }

    /// Sum of all entries, `→ 1 × 1`.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, GradError> {
        let na = self.check(a)?;
        let s = na.value.sum();
        let ng = na.needs_grad;
        Ok(self.push(
            Cow::Owned(Matrix::from_raw(1, 1, vec![s])),
            Op::SumAll(a),
            ng,
        ))
    }

    /// Propagates `adjoint` from `output` back to every differentiated leaf.
    ///
    /// A tape supports one backward pass; a second call fails with
    /// [`GradError::TapeConsumed`].
    pub fn backward(&mut self, output: Var, adjoint: &Matrix) -> Result<Gradients, GradError> {
        if self.consumed {
            return Err(GradError::TapeConsumed);
        }
        let out_shape = self.check(output)?.value.shape();
        if adjoint.shape() != out_shape {
            return Err(GradError::AdjointShape {
                expected: out_shape,
                got: adjoint.shape(),
            });
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(adjoint.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let nodes = &self.nodes;
            let ng = |v: Var| nodes[v.0].needs_grad;
            let val = |v: Var| -> &Matrix { &nodes[v.0].value };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if ng(*a) {
                        accumulate(&mut grads, *a, g.matmul_t(val(*b))?);
                    }
                    if ng(*b) {
                        accumulate(&mut grads, *b, val(*a).t_matmul(&g)?);
                    }
                }
                Op::AddBias(a, b) => {
                    if ng(*b) {
                        let mut gb = vec![0.0; g.cols()];
                        for r in g.iter_rows() {
                            for (s, &v) in gb.iter_mut().zip(r) {
                                *s += v;
                            }
                        }
                        accumulate(&mut grads, *b, Matrix::row_vector(gb));
                    }
                    if ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if ng(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if ng(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0));
                    }
                    if ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if ng(*a) {
                        accumulate(&mut grads, *a, g.hadamard(val(*b))?);
                    }
                    if ng(*b) {
                        accumulate(&mut grads, *b, g.hadamard(val(*a))?);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Shift(a) => accumulate(&mut grads, *a, g),
                Op::Swish(a) => {
                    let d = g.zip_map(val(*a), "swish", |gv, x| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let d = g.zip_map(val(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let d = g.zip_map(val(*a), "abs", |gv, x| gv * sign(x))?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let d = g.zip_map(val(*a), "square", |gv, x| 2.0 * x * gv)?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Sqrt(a) => {
                    let d = g.zip_map(&node.value, "sqrt", |gv, y| {
                        if y > 0.0 {
                            gv / (2.0 * y)
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    let cb = val(*b).cols();
                    if ng(*a) {
                        let d = Matrix::from_fn(g.rows(), ca, |r, c| g.get(r, c));
                        accumulate(&mut grads, *a, d);
                    }
                    if ng(*b) {
                        let d = Matrix::from_fn(g.rows(), cb, |r, c| g.get(r, ca + c));
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = val(*a).shape();
                    let width = g.cols();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r)[*start..*start + width].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::RowSum(a) => {
                    let (rows, cols) = val(*a).shape();
                    let d = Matrix::from_fn(rows, cols, |r, _| g.get(r, 0));
                    accumulate(&mut grads, *a, d);
                }
                Op::RowMax(a, arg) => {
                    let (rows, cols) = val(*a).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for (r, &c) in arg.iter().enumerate() {
                        d.set(r, c, g.get(r, 0));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let gs: f64 = g.row(r).iter().sum();
                        for (dv, &yv) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                            *dv -= yv.exp() * gs;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SumAll(a) => {
                    let (rows, cols) = val(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(rows, cols, g.get(0, 0)));
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            grads,
            shapes,
            inputs: self.inputs.clone(),
            params: self.params.clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::row_vector(vec![v])
    }

    #[test]
    fn identity_graph_passes_values_through() {
        let mut tape = Tape::new();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let v = tape.input(x.clone());
        assert_eq!(tape.value(v), &x);
    }

    #[test]
    fn swish_fixed_point_at_zero() {
        let mut tape = Tape::new();
        let x = tape.input(scalar(0.0));
        let y = tape.swish(x).unwrap();
        assert_eq!(tape.value(y).get(0, 0), 0.0);
    }

    #[test]
    fn identity_linear_layer() {
        let w = Matrix::identity(2);
        let b = Matrix::zeros(1, 2);
        let mut tape = Tape::new();
        let x = tape.input(Matrix::row_vector(vec![1.0, -1.0]));
        let wv = tape.param(&w);
        let bv = tape.param(&b);
        let h = tape.matmul(x, wv).unwrap();
        let y = tape.add_bias(h, bv).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -1.0]);
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.input(scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y, &scalar(1.0)).unwrap();
        assert_eq!(g.wrt(x).get(0, 0), 6.0);
    }

    #[test]
    fn relu_dead_region_and_kinks() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::row_vector(vec![-1.0, 0.0, 2.0]));
        let r = tape.relu(x).unwrap();
        let a = tape.abs(x).unwrap();
        let s = tape.add(r, a).unwrap();
        let total = tape.sum_all(s).unwrap();
        let g = tape.backward(total, &scalar(1.0)).unwrap();
        // relu' = (0, 0, 1), abs' = (-1, 0, 1)
        assert_eq!(g.wrt(x).data(), &[-1.0, 0.0, 2.0]);
    }

    #[test]
    fn sqrt_adjoint_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::row_vector(vec![0.0, 4.0]));
        let y = tape.sqrt(x).unwrap();
        let s = tape.sum_all(y).unwrap();
        let g = tape.backward(s, &scalar(1.0)).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.25]);
    }

    #[test]
    fn double_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(scalar(1.0));
        let y = tape.square(x).unwrap();
        tape.backward(y, &scalar(1.0)).unwrap();
        assert!(matches!(
            tape.backward(y, &scalar(1.0)),
            Err(GradError::TapeConsumed)
        ));
    }

    #[test]
    fn adjoint_shape_is_checked() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::zeros(2, 2));
        let err = tape.backward(x, &Matrix::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, GradError::AdjointShape { .. }));
        // a failed call does not consume the tape
        assert!(tape.backward(x, &Matrix::zeros(2, 2)).is_ok());
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::zeros(2, 3));
        let b = tape.input(Matrix::zeros(2, 2));
        let err = tape.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"), "{err}");
        let err = tape.matmul(a, a).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn constants_get_no_gradient_work() {
        let c = Matrix::row_vector(vec![2.0]);
        let mut tape = Tape::new();
        let k = tape.constant_ref(&c);
        let x = tape.input(scalar(5.0));
        let y = tape.mul(k, x).unwrap();
        let g = tape.backward(y, &scalar(1.0)).unwrap();
        assert_eq!(g.wrt(x).get(0, 0), 2.0);
        assert_eq!(g.wrt(k).get(0, 0), 0.0);
    }

    #[test]
    fn row_max_ties_pick_first() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::row_vector(vec![3.0, 3.0, 1.0]));
        let m = tape.row_max(x).unwrap();
        let g = tape.backward(m, &scalar(1.0)).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_rows(&[[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]).unwrap());
        let y = tape.log_softmax(x).unwrap();
        for r in tape.value(y).iter_rows() {
            let total: f64 = r.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-14);
        }
    }
}
