//! Forward noising, the noise-prediction network, unconditional training and
//! the one-shot clean-sample estimate.

mod net;
mod schedule;
mod train;

use thiserror::Error;

use crate::grad::{GradError, Matrix, Tape, Var};

pub use net::{
    Denoiser, DenoiserNet, Linear, NetConfig, ParamMode, Recorded, DEFAULT_HIDDEN,
    DEFAULT_TIME_EMBED_DIM, DEFAULT_TIME_HIDDEN, TRUNK_LAYERS,
};
pub use schedule::{
    Interpolation, NoiseSchedule, ScheduleParams, DEFAULT_ALPHA_FIRST, DEFAULT_ALPHA_LAST,
    DEFAULT_STEPS,
};
pub use train::{train, train_with, Optimizer, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// `x_t = √ᾱ_t x_0 + √(1 − ᾱ_t) ε`.
pub fn forward_noise(
    sched: &NoiseSchedule,
    x0: &Matrix,
    t: usize,
    eps: &Matrix,
) -> Result<Matrix, DiffusionError> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(eps, "forward_noise", |x, e| a * x + b * e)?)
}

/// `x̂_0 = (x_t − √(1 − ᾱ_t) ε) / √ᾱ_t` for a given noise estimate.
pub fn dirty_from_eps(
    sched: &NoiseSchedule,
    x_t: &Matrix,
    t: usize,
    eps: &Matrix,
) -> Result<Matrix, DiffusionError> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (inv, b) = (1.0 / ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.zip_map(eps, "dirty_estimate", |x, e| (x - b * e) * inv)?)
}

/// One-shot clean-sample estimate from the denoiser's noise prediction.
pub fn dirty_estimate<D: Denoiser + ?Sized>(
    net: &D,
    sched: &NoiseSchedule,
    x_t: &Matrix,
    t: usize,
) -> Result<Matrix, DiffusionError> {
    sched.check_step(t)?;
    let eps = net.predict_eps(x_t, &vec![t; x_t.rows()])?;
    dirty_from_eps(sched, x_t, t, &eps)
}

/// Records the dirty estimate on `tape` given a recorded noise estimate.
pub fn record_dirty_estimate(
    tape: &mut Tape<'_>,
    sched: &NoiseSchedule,
    x_t: Var,
    eps: Var,
    t: usize,
) -> Result<Var, GradError> {
    let ab = sched.alpha_bar(t);
    let scaled = tape.scale(eps, (1.0 - ab).sqrt())?;
    let diff = tape.sub(x_t, scaled)?;
    tape.scale(diff, 1.0 / ab.sqrt())
}

/// Reverse step `x'_{t−1} = (x_t − (1 − α_t)/√(1 − ᾱ_t) ε) / √α_t + σ_t z`.
pub fn denoise_from_eps(
    sched: &NoiseSchedule,
    x_t: &Matrix,
    t: usize,
    eps: &Matrix,
    z: &Matrix,
) -> Result<Matrix, DiffusionError> {
    sched.check_step(t)?;
    let a = sched.alpha(t);
    let coef = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / a.sqrt();
    let sigma = sched.sigma(t);
    let mean = x_t.zip_map(eps, "denoise_step", |x, e| (x - coef * e) * inv)?;
    Ok(mean.zip_map(z, "denoise_step", |m, n| m + sigma * n)?)
}

/// One unconditional reverse step using the denoiser.
pub fn denoise_step<D: Denoiser + ?Sized>(
    net: &D,
    sched: &NoiseSchedule,
    x_t: &Matrix,
    t: usize,
    z: &Matrix,
) -> Result<Matrix, DiffusionError> {
    sched.check_step(t)?;
    let eps = net.predict_eps(x_t, &vec![t; x_t.rows()])?;
    denoise_from_eps(sched, x_t, t, &eps, z)
}

/// A denoiser that knows the clean data: `ε(x_t) = (x_t − √ᾱ_t x_0)/√(1 − ᾱ_t)`.
///
/// Its dirty estimate is `x_0` for every input, which makes it an exact
/// oracle for the forward/reverse algebra.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    pub sched: NoiseSchedule,
    pub x0: Matrix,
}

impl Denoiser for OracleDenoiser {
    fn data_dim(&self) -> usize {
        self.x0.cols()
    }

    fn record_eps<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        steps: &[usize],
    ) -> Result<Var, GradError> {
        let t = uniform_step(steps);
        let ab = self.sched.alpha_bar(t);
        let x0 = tape.constant_ref(&self.x0);
        let scaled = tape.scale(x0, ab.sqrt())?;
        let diff = tape.sub(x, scaled)?;
        tape.scale(diff, 1.0 / (1.0 - ab).sqrt())
    }
}

/// Idealized denoisers in this crate are evaluated one step at a time.
pub(crate) fn uniform_step(steps: &[usize]) -> usize {
    let t = steps.first().copied().unwrap_or(1);
    debug_assert!(steps.iter().all(|&s| s == t), "mixed steps in one batch");
    t
}
