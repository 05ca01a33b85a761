use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{denoise_from_eps, record_dirty_estimate, Denoiser, NoiseSchedule};
use crate::exec::{map_chunks, Execution};
use crate::grad::{Matrix, Tape};

use super::{ConstraintSpec, GuidanceError};

/// Default guidance strength.
pub const DEFAULT_ETA: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    #[default]
    Constant,
    /// `η (T − t)/(T − 1)`: zero at `t = T`, full strength at `t = 1`.
    LinearRamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub eta: f64,
    pub schedule: EtaSchedule,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            schedule: EtaSchedule::Constant,
        }
    }
}

impl GuidanceConfig {
    pub fn constant(eta: f64) -> Self {
        Self {
            eta,
            schedule: EtaSchedule::Constant,
        }
    }

    /// `η = 0` is accepted: it is the unguided control.
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(GuidanceError::Spec(format!(
                "eta must be finite and ≥ 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn eta_at(&self, t: usize, steps: usize) -> f64 {
        match self.schedule {
            EtaSchedule::Constant => self.eta,
            EtaSchedule::LinearRamp if steps <= 1 => self.eta,
            EtaSchedule::LinearRamp => self.eta * (steps - t) as f64 / (steps - 1) as f64,
        }
    }
}

/// Per-run sampling knobs that do not change results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleOptions {
    pub chunk_rows: usize,
    pub execution: Execution,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            chunk_rows: 256,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub samples: Matrix,
    /// Denoiser forward evaluations, counted per (row, step).
    pub forward_row_steps: u64,
    /// Gradient evaluations, counted per (row, step).
    pub backward_row_steps: u64,
}

/// Seed of the noise stream owned by sample `row`.
pub fn row_seed(run_seed: u64, row: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = run_seed
        .wrapping_add((row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal_row(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

/// Noise estimate at `x_t` and, when `spec` is given, the gradient of the
/// summed row losses of the dirty estimate with respect to `x_t`. One
/// forward pass serves both.
fn eps_and_gradient<D: Denoiser + ?Sized>(
    net: &D,
    sched: &NoiseSchedule,
    spec: Option<&ConstraintSpec>,
    x_t: &Matrix,
    t: usize,
) -> Result<(Matrix, Option<Matrix>), GuidanceError> {
    let steps = vec![t; x_t.rows()];
    let mut tape = Tape::new();
    let x = tape.input(x_t.clone());
    let eps = net.record_eps(&mut tape, x, &steps)?;
    let Some(spec) = spec else {
        return Ok((tape.value(eps).clone(), None));
    };
    let xhat = record_dirty_estimate(&mut tape, sched, x, eps, t)?;
    let loss = spec.record(&mut tape, xhat)?;
    let eps_value = tape.value(eps).clone();
    let grads = tape.backward(loss, &Matrix::filled(x_t.rows(), 1, 1.0))?;
    Ok((eps_value, Some(grads.wrt(x))))
}

/// `∇_{x_t} L(x̂_0(x_t))`, differentiated through the dirty estimate and the
/// denoiser. Row `i` of the result depends on row `i` of `x_t` only.
pub fn guidance_gradient<D: Denoiser + ?Sized>(
    net: &D,
    sched: &NoiseSchedule,
    spec: &ConstraintSpec,
    x_t: &Matrix,
    t: usize,
) -> Result<Matrix, GuidanceError> {
    sched.check_step(t)?;
    check_spec(spec, x_t.cols(), x_t.rows())?;
    let chunk = spec.for_rows(0, x_t.rows());
    let (_, g) = eps_and_gradient(net, sched, Some(&chunk), x_t, t)?;
    let g = g.unwrap_or_else(|| Matrix::zeros(x_t.rows(), x_t.cols()));
    if g.first_non_finite().is_some() {
        return Err(GuidanceError::NonFiniteGradient { step: t });
    }
    Ok(g)
}

fn check_spec(spec: &ConstraintSpec, dim: usize, n: usize) -> Result<(), GuidanceError> {
    spec.validate(dim)?;
    match spec.row_count() {
        Some(r) if r != n => Err(GuidanceError::Spec(format!(
            "spec holds {r} per-sample rows, {n} samples requested"
        ))),
        _ => Ok(()),
    }
}

/// Guided reverse diffusion. Each row draws `x_T` and then one `z` per step
/// `t > 1` from its own stream seeded by [`row_seed`]. At every step the
/// denoiser runs once; its output gives both the unconditional update and,
/// through the dirty estimate, the loss gradient, which is applied after the
/// update: `x_{t−1} = x'_{t−1} − η_t g`.
pub fn guided_sample<D: Denoiser + ?Sized>(
    net: &D,
    sched: &NoiseSchedule,
    spec: Option<&ConstraintSpec>,
    gcfg: &GuidanceConfig,
    n: usize,
    seed: u64,
    opts: &SampleOptions,
) -> Result<SampleOutput, GuidanceError> {
    gcfg.validate()?;
    let d = net.data_dim();
    if let Some(s) = spec {
        check_spec(s, d, n)?;
    }
    let steps = sched.steps();
    let chunks = map_chunks(opts.execution, n, opts.chunk_rows, |start, end| {
        let rows = end - start;
        let chunk_spec = spec.map(|s| s.for_rows(start, end));
        let mut rngs: Vec<ChaCha8Rng> = (start..end)
            .map(|r| ChaCha8Rng::seed_from_u64(row_seed(seed, r)))
            .collect();
        let mut x = Matrix::zeros(rows, d);
        for (r, rng) in rngs.iter_mut().enumerate() {
            normal_row(rng, x.row_mut(r));
        }
        let mut z = Matrix::zeros(rows, d);
        let (mut fwd, mut bwd) = (0u64, 0u64);
        for t in (1..=steps).rev() {
            if t > 1 {
                for (r, rng) in rngs.iter_mut().enumerate() {
                    normal_row(rng, z.row_mut(r));
                }
            } else {
                z = Matrix::zeros(rows, d);
            }
            let eta = gcfg.eta_at(t, steps);
            let active = if eta > 0.0 { chunk_spec.as_ref() } else { None };
            let (eps, g) = eps_and_gradient(net, sched, active, &x, t)?;
            fwd += rows as u64;
            let mut next = denoise_from_eps(sched, &x, t, &eps, &z)?;
            if let Some(g) = g {
                bwd += rows as u64;
                if g.first_non_finite().is_some() {
                    return Err(GuidanceError::NonFiniteGradient { step: t });
                }
                next.axpy(-eta, &g)?;
            }
            if let Some((r, _)) = next.first_non_finite() {
                return Err(GuidanceError::NonFiniteState {
                    step: t,
                    row: start + r,
                });
            }
            x = next;
        }
        Ok((x, fwd, bwd))
    })?;
    let mut parts = Vec::with_capacity(chunks.len());
    let (mut fwd, mut bwd) = (0, 0);
    for (m, f, b) in chunks {
        parts.push(m);
        fwd += f;
        bwd += b;
    }
    let samples = if parts.is_empty() {
        Matrix::zeros(0, d)
    } else {
        Matrix::vstack(&parts)?
    };
    Ok(SampleOutput {
        samples,
        forward_row_steps: fwd,
        backward_row_steps: bwd,
    })
}

/// Plain ancestral sampling, one row at a time, with the same per-row noise
/// streams as [`guided_sample`].
pub fn unconditional_sample<D: Denoiser + ?Sized>(
    net: &D,
    sched: &NoiseSchedule,
    n: usize,
    seed: u64,
) -> Result<Matrix, GuidanceError> {
    let d = net.data_dim();
    let mut out = Matrix::zeros(n, d);
    for r in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(row_seed(seed, r));
        let mut x = Matrix::zeros(1, d);
        normal_row(&mut rng, x.row_mut(0));
        for t in (1..=sched.steps()).rev() {
            let mut z = Matrix::zeros(1, d);
            if t > 1 {
                normal_row(&mut rng, z.row_mut(0));
            }
            x = crate::diffusion::denoise_step(net, sched, &x, t, &z)?;
        }
        out.row_mut(r).copy_from_slice(x.row(0));
    }
    Ok(out)
}
