use std::path::PathBuf;

use anyhow::{bail, ensure, Result};
use clap::ValueEnum;
use serde::Serialize;
use tabguide::diffusion::{
    train, Denoiser, DenoiserNet, NetConfig, NoiseSchedule, Optimizer, TrainConfig,
};
use tabguide::grad::Matrix;
use tabguide::guidance::row_seed;
use tabguide::metrics::{
    angle_profile, probe_spec, projection_error_profile, residual_angle_profile,
    shell_distance_check, write_profile_csv, ProbeLoss, ProfileRow, ProjectorDenoiser,
    SyntheticManifold,
};

use super::{parse, require, set_path};
use crate::artifacts::{OutputDir, Provenance};
use crate::config::RunConfig;
use crate::data::{load_model, rows_for_checkpoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Diagnostic {
    /// Angle between guidance gradients and the manifold normal, per t.
    Angles,
    /// Distance of the dirty estimate to the projection of x_t, per t.
    Projection,
    /// Distance of noised samples to the scaled manifold against √((1−ᾱ)(d−n)).
    Shell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ManifoldArg {
    /// Unit circle; a small denoiser is trained in-run.
    Circle,
    /// Random affine subspace with the exact projector denoiser.
    Subspace,
}

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    #[arg(long, value_enum)]
    pub diag: Diagnostic,
    /// mae, mse, ce or inequality (angles only).
    #[arg(long, value_parser = parse::<ProbeLoss>, default_value = "mae")]
    pub loss: ProbeLoss,
    /// Use a trained model and rows of `--data` instead of a synthetic manifold.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "circle")]
    pub manifold: ManifoldArg,
    /// Ambient dimension (default 2 for angles/projection, 100 for shell).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Comma-separated steps; defaults to a grid over 1..T.
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<usize>>,
    /// Comma-separated ᾱ values for the shell check.
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.5,0.1")]
    pub alpha_bar: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub n_samples: usize,
    /// Training rows and epochs of the in-run circle model.
    #[arg(long, default_value_t = 5000)]
    pub train_rows: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

fn default_grid(steps: usize) -> Vec<usize> {
    let mut g: Vec<usize> = [1, 5, 10, 20, 50, 100, 150, 200]
        .into_iter()
        .filter(|&t| t <= steps)
        .collect();
    if g.last() != Some(&steps) {
        g.push(steps);
    }
    g
}

/// The small circle model shared by the synthetic diagnostics.
fn circle_model(
    m: &SyntheticManifold,
    sched: &NoiseSchedule,
    a: &Args,
    seed: u64,
) -> Result<DenoiserNet> {
    let data = m.sample(a.train_rows, row_seed(seed, 0));
    let mut net = DenoiserNet::init(NetConfig::compact(m.ambient_dim(), a.width, 16), seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed,
        optimizer: Optimizer::Adam,
    };
    eprintln!("training the circle denoiser ({} epochs)", a.epochs);
    train(&mut net, sched, &data, &cfg)?;
    Ok(net)
}

fn synthetic(cfg: &RunConfig, a: &Args) -> Result<Vec<ProfileRow>> {
    let seed = cfg.seed;
    if a.diag == Diagnostic::Shell {
        let m = SyntheticManifold::Circle {
            radius: a.radius,
            dim: a.dim.unwrap_or(100),
        };
        let mut rows = Vec::new();
        for (i, &ab) in a.alpha_bar.iter().enumerate() {
            rows.extend(shell_distance_check(&m, ab, a.n_samples, row_seed(seed, i))?.to_rows());
        }
        return Ok(rows);
    }
    let sched = NoiseSchedule::from_params(cfg.schedule.clone())?;
    let t_list = a.t.clone().unwrap_or_else(|| default_grid(sched.steps()));
    let dim = a.dim.unwrap_or(2);
    let (m, net): (SyntheticManifold, Box<dyn Denoiser + Sync>) = match a.manifold {
        ManifoldArg::Circle => {
            let m = SyntheticManifold::Circle {
                radius: a.radius,
                dim,
            };
            let net = circle_model(&m, &sched, a, seed)?;
            (m, Box::new(net))
        }
        ManifoldArg::Subspace => {
            let m = SyntheticManifold::random_subspace(1, dim, seed)?;
            let p = ProjectorDenoiser::new(&m, sched.clone())?;
            (m, Box::new(p))
        }
    };
    m.validate()?;
    match a.diag {
        Diagnostic::Angles => {
            let anchors = m.sample(a.n_samples, row_seed(seed, 1));
            let spec = probe_spec(a.loss, &anchors, (0, dim.min(2)));
            Ok(angle_profile(
                net.as_ref(),
                &sched,
                &spec,
                &m,
                a.n_samples,
                &t_list,
                seed,
                cfg.execution,
            )?)
        }
        _ => Ok(projection_error_profile(
            net.as_ref(),
            &sched,
            &m,
            a.n_samples,
            &t_list,
            seed,
        )?),
    }
}

fn from_checkpoint(cfg: &RunConfig, a: &Args) -> Result<(Vec<ProfileRow>, String)> {
    if a.diag != Diagnostic::Angles {
        bail!(
            "--diag {:?} needs an analytic manifold; drop --checkpoint",
            a.diag
        );
    }
    let model = load_model(require(&cfg.checkpoint, "--checkpoint")?)?;
    let enc = &model.checkpoint.encoder;
    let rows = rows_for_checkpoint(
        &model.checkpoint,
        require(&cfg.data, "--data")?,
        cfg.schema.as_deref(),
    )?;
    let n = rows.len().min(a.n_samples);
    ensure!(n >= 2, "need at least two data rows");
    let x = enc.encode_rows(&rows[..n])?;
    // Anchor each row to another row so the probe losses are not already zero.
    let anchors = Matrix::from_fn(n, enc.dim(), |r, c| x.get((r + n / 2) % n, c));
    let block = enc
        .columns()
        .iter()
        .find(|c| c.is_categorical())
        .map_or((0, enc.dim().min(2)), |c| (c.start, c.width));
    let spec = probe_spec(a.loss, &anchors, block);
    let t_list =
        a.t.clone()
            .unwrap_or_else(|| default_grid(model.schedule.steps()));
    let rows = residual_angle_profile(
        &model.net,
        &model.schedule,
        &spec,
        &x,
        &t_list,
        cfg.seed,
        cfg.execution,
    )?;
    Ok((rows, model.hash))
}

pub fn run(mut cfg: RunConfig, a: Args) -> Result<()> {
    let flags = serde_json::to_value(&a)?;
    set_path(&mut cfg.checkpoint, a.checkpoint.clone());
    set_path(&mut cfg.data, a.data.clone());
    set_path(&mut cfg.schema, a.schema.clone());
    set_path(&mut cfg.out, a.out.clone());
    cfg.validate()?;
    ensure!(a.n_samples > 0, "--n-samples must be positive");
    let (rows, checkpoint_hash) = match &cfg.checkpoint {
        Some(_) => {
            let (r, h) = from_checkpoint(&cfg, &a)?;
            (r, Some(h))
        }
        None => (synthetic(&cfg, &a)?, None),
    };
    let name = match a.diag {
        Diagnostic::Angles => "angles",
        Diagnostic::Projection => "projection",
        Diagnostic::Shell => "shell",
    };
    let mut out = OutputDir::create(require(&cfg.out, "--out")?)?;
    if a.diag == Diagnostic::Angles {
        // One row per t in the main table; the folded angle goes alongside.
        let (main, acute): (Vec<ProfileRow>, Vec<ProfileRow>) = rows
            .into_iter()
            .partition(|r| r.metric != "angle_acute_deg");
        out.write_with("angles.csv", |w| Ok(write_profile_csv(w, &main)?))?;
        if !acute.is_empty() {
            out.write_with("angles_acute.csv", |w| Ok(write_profile_csv(w, &acute)?))?;
        }
    } else {
        out.write_with(&format!("{name}.csv"), |w| Ok(write_profile_csv(w, &rows)?))?;
    }
    let prov = Provenance {
        seed: cfg.seed,
        config_hash: cfg.hash_with(&flags),
        checkpoint_hash,
    };
    out.finish("diag", &prov)
}
