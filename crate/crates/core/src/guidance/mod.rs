//! Constraint losses on the dirty estimate and the guided sampler.
//!
//! Mask polarity: an [`ConstraintSpec::Imputation`] mask holds 1 on
//! OBSERVED entries, the anchors the loss pulls toward. Missing entries carry
//! 0 and are left to the model.

mod doc;
mod sampler;
mod spec;

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::grad::GradError;

pub use doc::ConstraintDoc;
pub use sampler::{
    guidance_gradient, guided_sample, row_seed, unconditional_sample, EtaSchedule, GuidanceConfig,
    SampleOptions, SampleOutput, DEFAULT_ETA,
};
pub use spec::{
    default_loss_for, eval_loss, ConstraintSpec, LossDefaults, Norm, Selector, TaskKind,
};

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("invalid constraint: {0}")]
    Spec(String),
    #[error("ambient index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` has no category `{value}`")]
    UnknownCategory { column: String, value: String },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("non-finite guidance gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("non-finite sample state at step {step}, row {row}")]
    NonFiniteState { step: usize, row: usize },
    #[error("constraint JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Grad(#[from] GradError),
}
