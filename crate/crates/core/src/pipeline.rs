//! Imputation and constrained generation on encoded tables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Encoder, Row};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::grad::{GradError, Matrix};
use crate::guidance::{
    guided_sample, row_seed, ConstraintSpec, GuidanceConfig, GuidanceError, Norm, SampleOptions,
};
use crate::tasks::{MaskTask, TaskError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid request: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Imputation loss families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Mae,
    Mse,
    MaeCe,
    MseCe,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::Mae,
        LossVariant::Mse,
        LossVariant::MaeCe,
        LossVariant::MseCe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Mae => "mae",
            LossVariant::Mse => "mse",
            LossVariant::MaeCe => "mae+ce",
            LossVariant::MseCe => "mse+ce",
        }
    }

    fn norm(self) -> Norm {
        match self {
            LossVariant::Mae | LossVariant::MaeCe => Norm::L1,
            LossVariant::Mse | LossVariant::MseCe => Norm::L2Squared,
        }
    }

    fn with_ce(self) -> bool {
        matches!(self, LossVariant::MaeCe | LossVariant::MseCe)
    }
}

impl std::str::FromStr for LossVariant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase().replace(['_', ' '], "+");
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                PipelineError::Config(format!("unknown loss `{s}` (mae, mse, mae+ce, mse+ce)"))
            })
    }
}

/// Per-row imputation spec anchoring `observed` (1 = observed) coordinates
/// of `truth`. Plain variants anchor every observed coordinate with the
/// norm; `+ce` variants anchor continuous coordinates with the norm and
/// observed one-hot blocks with cross-entropy.
pub fn imputation_spec(
    enc: &Encoder,
    truth: &Matrix,
    observed: &Matrix,
    variant: LossVariant,
) -> Result<ConstraintSpec, PipelineError> {
    if truth.shape() != observed.shape() || truth.cols() != enc.dim() {
        return Err(PipelineError::Config(
            "truth/mask shapes disagree with the encoder".into(),
        ));
    }
    let target = truth.hadamard(observed)?;
    if !variant.with_ce() {
        let spec = ConstraintSpec::Imputation {
            mask: observed.clone(),
            target,
            norm: variant.norm(),
        };
        spec.validate(enc.dim())?;
        return Ok(spec);
    }
    let mut cont_mask = observed.clone();
    let mut cat_mask = observed.clone();
    let mut blocks = Vec::new();
    for col in enc.columns() {
        let zero_out = if col.is_categorical() {
            blocks.push((col.start, col.width));
            &mut cont_mask
        } else {
            &mut cat_mask
        };
        for r in 0..observed.rows() {
            for c in col.range() {
                zero_out.set(r, c, 0.0);
            }
        }
    }
    let mut children = Vec::new();
    if cont_mask.data().iter().any(|&v| v != 0.0) {
        children.push(ConstraintSpec::Imputation {
            mask: cont_mask,
            target: target.clone(),
            norm: variant.norm(),
        });
    }
    if !blocks.is_empty() && cat_mask.data().iter().any(|&v| v != 0.0) {
        children.push(ConstraintSpec::CategoricalCe {
            blocks,
            mask: cat_mask,
            target,
        });
    }
    let spec = match children.len() {
        0 => return Err(PipelineError::Config("nothing is observed".into())),
        1 => children.pop().unwrap_or(ConstraintSpec::And {
            children: Vec::new(),
        }),
        _ => ConstraintSpec::And { children },
    };
    spec.validate(enc.dim())?;
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImputeOptions {
    pub guidance: GuidanceConfig,
    pub variant: LossVariant,
    /// Guided draws averaged (in encoded space) per row.
    pub n_draws: usize,
    pub sample: SampleOptions,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            variant: LossVariant::Mae,
            n_draws: 1,
            sample: SampleOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Imputed {
    /// Decoded rows; observed cells are copied from the input verbatim.
    pub rows: Vec<Row>,
    /// Averaged encoded samples before anchoring.
    pub encoded: Matrix,
}

/// Fills the cells `mask` marks missing. Observed cells guide sampling and
/// are written back unchanged into the decoded output.
pub fn impute<D: Denoiser + ?Sized>(
    net: &D,
    sched: &NoiseSchedule,
    enc: &Encoder,
    rows: &[Row],
    mask: &MaskTask,
    opts: &ImputeOptions,
    seed: u64,
) -> Result<Imputed, PipelineError> {
    if rows.len() != mask.rows || enc.columns().len() != mask.cols {
        return Err(PipelineError::Config(format!(
            "mask is {}x{}, data {}x{}",
            mask.rows,
            mask.cols,
            rows.len(),
            enc.columns().len()
        )));
    }
    if opts.n_draws == 0 {
        return Err(PipelineError::Config("n_draws must be ≥ 1".into()));
    }
    let truth = enc.encode_rows(rows)?;
    let observed = mask.observed_ambient(enc)?;
    let spec = imputation_spec(enc, &truth, &observed, opts.variant)?;
    let mut acc = Matrix::zeros(rows.len(), enc.dim());
    for k in 0..opts.n_draws {
        let draw_seed = if opts.n_draws == 1 {
            seed
        } else {
            row_seed(seed, k)
        };
        let out = guided_sample(
            net,
            sched,
            Some(&spec),
            &opts.guidance,
            rows.len(),
            draw_seed,
            &opts.sample,
        )?;
        acc.axpy(1.0 / opts.n_draws as f64, &out.samples)?;
    }
    let mut decoded = enc.decode_rows(&acc)?;
    for (r, row) in decoded.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            if !mask.missing(r, c) {
                *cell = rows[r][c].clone();
            }
        }
    }
    Ok(Imputed {
        rows: decoded,
        encoded: acc,
    })
}

/// Draws `n` decoded rows under `spec` (unguided with `spec = None`).
#[allow(clippy::too_many_arguments)]
pub fn generate<D: Denoiser + ?Sized>(
    net: &D,
    sched: &NoiseSchedule,
    enc: &Encoder,
    spec: Option<&ConstraintSpec>,
    gcfg: &GuidanceConfig,
    n: usize,
    seed: u64,
    opts: &SampleOptions,
) -> Result<Vec<Row>, PipelineError> {
    let out = guided_sample(net, sched, spec, gcfg, n, seed, opts)?;
    Ok(enc.decode_rows(&out.samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{DenoiserNet, NetConfig};
    use crate::guidance::eval_loss;
    use crate::synth::GaussianMixtureTable;
    use crate::tasks::gen_mcar;

    #[test]
    fn variant_names() {
        for v in LossVariant::ALL {
            assert_eq!(v.name().parse::<LossVariant>().unwrap(), v);
        }
        assert_eq!("MAE_CE".parse::<LossVariant>().unwrap(), LossVariant::MaeCe);
        assert!("huber".parse::<LossVariant>().is_err());
    }

    #[test]
    fn truth_has_zero_loss_in_every_variant() {
        let (schema, rows) = GaussianMixtureTable::default().sample(40, 1);
        let enc = Encoder::fit(&schema, &rows).unwrap();
        let mask = gen_mcar(rows.len(), 4, 0.5, 2).unwrap();
        let truth = enc.encode_rows(&rows).unwrap();
        let observed = mask.observed_ambient(&enc).unwrap();
        for v in [LossVariant::Mae, LossVariant::Mse] {
            let spec = imputation_spec(&enc, &truth, &observed, v).unwrap();
            assert_eq!(eval_loss(&spec, &truth).unwrap(), 0.0);
        }
        let spec = imputation_spec(&enc, &truth, &observed, LossVariant::MaeCe).unwrap();
        assert!(matches!(spec, ConstraintSpec::And { .. }));
    }

    #[test]
    fn observed_cells_are_written_back() {
        let (schema, rows) = GaussianMixtureTable::default().sample(12, 1);
        let enc = Encoder::fit(&schema, &rows).unwrap();
        let sched = NoiseSchedule::build(6, 0.9999, 0.98).unwrap();
        let net = DenoiserNet::init(NetConfig::compact(enc.dim(), 8, 4), 0).unwrap();
        let mask = gen_mcar(rows.len(), 4, 0.5, 3).unwrap();
        let opts = ImputeOptions {
            n_draws: 2,
            ..ImputeOptions::default()
        };
        let out = impute(&net, &sched, &enc, &rows, &mask, &opts, 9).unwrap();
        for (r, row) in rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if !mask.missing(r, c) {
                    assert_eq!(&out.rows[r][c], cell);
                }
            }
        }
        assert_eq!(
            impute(&net, &sched, &enc, &rows, &mask, &opts, 9).unwrap(),
            out
        );
    }
}
