use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::grad::{GradError, Matrix, Tape, Var};

use super::MetricsError;

/// Data manifolds with closed-form projection and tangent spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticManifold {
    /// Circle of `radius` in the first two of `dim` coordinates.
    Circle { radius: f64, dim: usize },
    /// `n`-sphere of `radius` in the first `n + 1` of `dim` coordinates.
    Sphere { radius: f64, n: usize, dim: usize },
    /// `offset + span(basis)`; `basis` rows are orthonormal.
    AffineSubspace { basis: Matrix, offset: Vec<f64> },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormalizes `rows` (modified Gram-Schmidt), dropping dependent ones.
fn orthonormalize(rows: Vec<Vec<f64>>, against: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut v in rows {
        let scale = norm(&v).max(1.0);
        for u in against.iter().chain(out.iter()) {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
        }
        let n = norm(&v);
        if n > 1e-9 * scale {
            v.iter_mut().for_each(|a| *a /= n);
            out.push(v);
        }
    }
    out
}

impl SyntheticManifold {
    pub fn circle(dim: usize) -> Self {
        SyntheticManifold::Circle { radius: 1.0, dim }
    }

    /// Random `n`-dimensional affine subspace of `R^d`.
    pub fn random_subspace(n: usize, dim: usize, seed: u64) -> Result<Self, MetricsError> {
        if n > dim || dim == 0 {
            return Err(MetricsError::Config(format!(
                "subspace of dimension {n} in R^{dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let basis = orthonormalize(raw, &[]);
        if basis.len() != n {
            return Err(MetricsError::Config("degenerate random basis".into()));
        }
        let offset = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5)
            .collect();
        let basis = if n == 0 {
            Matrix::zeros(0, dim)
        } else {
            Matrix::from_rows(&basis)?
        };
        Ok(SyntheticManifold::AffineSubspace { basis, offset })
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        match self {
            SyntheticManifold::Circle { radius, dim } => {
                if *dim < 2 || radius.is_nan() || *radius <= 0.0 {
                    return Err(MetricsError::Config(
                        "circle needs dim ≥ 2 and radius > 0".into(),
                    ));
                }
            }
            SyntheticManifold::Sphere { radius, n, dim } => {
                if *n == 0 || n + 1 > *dim || radius.is_nan() || *radius <= 0.0 {
                    return Err(MetricsError::Config(
                        "sphere needs 1 ≤ n < dim and radius > 0".into(),
                    ));
                }
            }
            SyntheticManifold::AffineSubspace { basis, offset } => {
                if basis.cols() != offset.len() {
                    return Err(MetricsError::Config(
                        "basis/offset dimension mismatch".into(),
                    ));
                }
                for i in 0..basis.rows() {
                    for j in 0..basis.rows() {
                        let want = if i == j { 1.0 } else { 0.0 };
                        if (dot(basis.row(i), basis.row(j)) - want).abs() > 1e-9 {
                            return Err(MetricsError::Config(
                                "basis rows are not orthonormal".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            SyntheticManifold::Circle { dim, .. } | SyntheticManifold::Sphere { dim, .. } => *dim,
            SyntheticManifold::AffineSubspace { offset, .. } => offset.len(),
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            SyntheticManifold::Circle { .. } => 1,
            SyntheticManifold::Sphere { n, .. } => *n,
            SyntheticManifold::AffineSubspace { basis, .. } => basis.rows(),
        }
    }

    /// Number of leading coordinates a round manifold lives in.
    fn round(&self) -> Option<(f64, usize)> {
        match self {
            SyntheticManifold::Circle { radius, .. } => Some((*radius, 2)),
            SyntheticManifold::Sphere { radius, n, .. } => Some((*radius, n + 1)),
            SyntheticManifold::AffineSubspace { .. } => None,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.ambient_dim();
        let mut out = Matrix::zeros(n, d);
        for r in 0..n {
            let row = out.row_mut(r);
            match self {
                SyntheticManifold::AffineSubspace { basis, offset } => {
                    row.copy_from_slice(offset);
                    for b in basis.iter_rows() {
                        let c: f64 = rng.sample(StandardNormal);
                        row.iter_mut().zip(b).for_each(|(x, v)| *x += c * v);
                    }
                }
                _ => {
                    let (radius, k) = self.round().unwrap_or((1.0, 2));
                    loop {
                        for v in row[..k].iter_mut() {
                            *v = rng.sample(StandardNormal);
                        }
                        let len = norm(&row[..k]);
                        if len > 1e-12 {
                            row[..k].iter_mut().for_each(|v| *v *= radius / len);
                            break;
                        }
                    }
                }
            }
        }
        out
    }

    /// Closest manifold point. On round manifolds a point on the axis
    /// orthogonal to the embedding plane maps to a fixed pole.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SyntheticManifold::AffineSubspace { basis, offset } => {
                let centered: Vec<f64> = x.iter().zip(offset).map(|(a, o)| a - o).collect();
                let mut p = offset.clone();
                for b in basis.iter_rows() {
                    let c = dot(&centered, b);
                    p.iter_mut().zip(b).for_each(|(v, u)| *v += c * u);
                }
                p
            }
            _ => {
                let (radius, k) = self.round().unwrap_or((1.0, 2));
                let mut p = vec![0.0; x.len()];
                let len = norm(&x[..k]);
                if len > 0.0 {
                    for i in 0..k {
                        p[i] = x[i] * radius / len;
                    }
                } else {
                    p[0] = radius;
                }
                p
            }
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let p = self.project(x);
        norm(&x.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>())
    }

    /// Orthonormal tangent basis (`n` rows) at manifold point `p`.
    pub fn tangent_basis(&self, p: &[f64]) -> Vec<Vec<f64>> {
        match self {
            SyntheticManifold::AffineSubspace { basis, .. } => {
                basis.iter_rows().map(<[f64]>::to_vec).collect()
            }
            _ => {
                let (_, k) = self.round().unwrap_or((1.0, 2));
                let d = p.len();
                let mut radial = vec![0.0; d];
                radial[..k].copy_from_slice(&p[..k]);
                let r = norm(&radial);
                radial.iter_mut().for_each(|v| *v /= r);
                let axes = (0..k)
                    .map(|i| {
                        let mut e = vec![0.0; d];
                        e[i] = 1.0;
                        e
                    })
                    .collect();
                orthonormalize(axes, &[radial])
            }
        }
    }

    /// Orthonormal normal basis (`d − n` rows) at manifold point `p`.
    pub fn normal_basis(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let tangent = self.tangent_basis(p);
        let d = p.len();
        let mut seeds = Vec::with_capacity(d + 1);
        if let Some((_, k)) = self.round() {
            let mut radial = vec![0.0; d];
            radial[..k].copy_from_slice(&p[..k]);
            seeds.push(radial);
        }
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            seeds.push(e);
        }
        orthonormalize(seeds, &tangent)
    }

    /// Outward unit normal at `p` when the manifold has codimension one.
    pub fn unit_normal(&self, p: &[f64]) -> Option<Vec<f64>> {
        let normals = self.normal_basis(p);
        (normals.len() == 1).then(|| normals.into_iter().next().unwrap_or_default())
    }
}

/// Angle in degrees between `g` and the normal space at manifold point `p`.
///
/// With codimension one this is the signed angle to the unit normal, in
/// `[0°, 180°]`; otherwise the angle to the normal space, in `[0°, 90°]`.
/// `None` for a zero vector.
pub fn normal_angle(manifold: &SyntheticManifold, p: &[f64], g: &[f64]) -> Option<f64> {
    let gn = norm(g);
    if gn == 0.0 || !gn.is_finite() {
        return None;
    }
    let cos = match manifold.unit_normal(p) {
        Some(n) => dot(g, &n) / gn,
        None => {
            let normal: f64 = manifold
                .normal_basis(p)
                .iter()
                .map(|n| dot(g, n).powi(2))
                .sum();
            normal.sqrt() / gn
        }
    };
    Some(cos.clamp(-1.0, 1.0).acos().to_degrees())
}

/// Ideal denoiser for an affine subspace whose clean-sample estimate is the
/// exact projection `π(x_t / √ᾱ_t)`.
#[derive(Clone, Debug)]
pub struct ProjectorDenoiser {
    sched: NoiseSchedule,
    /// `I − P` with `P` the projector onto the subspace directions.
    complement: Matrix,
    offset: Vec<f64>,
}

impl ProjectorDenoiser {
    pub fn new(manifold: &SyntheticManifold, sched: NoiseSchedule) -> Result<Self, MetricsError> {
        let SyntheticManifold::AffineSubspace { basis, offset } = manifold else {
            return Err(MetricsError::NotApplicable(
                "projector denoiser needs an affine subspace".into(),
            ));
        };
        manifold.validate()?;
        let p = basis.t_matmul(basis)?;
        let complement = Matrix::identity(offset.len()).sub(&p)?;
        Ok(Self {
            sched,
            complement,
            offset: offset.clone(),
        })
    }
}

impl Denoiser for ProjectorDenoiser {
    fn data_dim(&self) -> usize {
        self.offset.len()
    }

    // ε = (I − P)(x_t − √ᾱ o) / √(1 − ᾱ)
    fn record_eps<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        steps: &[usize],
    ) -> Result<Var, GradError> {
        let t = crate::diffusion::uniform_step(steps);
        let ab = self.sched.alpha_bar(t);
        let c = tape.constant_ref(&self.complement);
        let shift = Matrix::row_vector(self.offset.iter().map(|o| -ab.sqrt() * o).collect())
            .matmul(&self.complement)?;
        let shift = tape.constant(shift);
        let h = tape.matmul(x, c)?;
        let h = tape.add_bias(h, shift)?;
        tape.scale(h, 1.0 / (1.0 - ab).sqrt())
    }
}
