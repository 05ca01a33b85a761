//! Evaluation tasks: missingness masks and hard-constraint scenarios.

mod masks;
mod scenario;

use thiserror::Error;

use crate::codec::CodecError;
use crate::guidance::GuidanceError;

pub use masks::{
    column_features, default_observed_cols, gen_mar, gen_mask, gen_mcar, gen_mnar, MaskTask,
    Mechanism,
};
pub use scenario::{
    coverage, gen_constraint_scenario, quantile, ConstraintScenario, ScenarioKind, ScenarioOptions,
    DEFAULT_QUANTILE,
};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task: {0}")]
    Config(String),
    #[error("bias search could not bracket masking ratio {ratio}")]
    Bracket { ratio: f64 },
    #[error("mask CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

impl TaskError {
    fn csv(e: csv::Error) -> Self {
        TaskError::Csv(e.to_string())
    }
}
