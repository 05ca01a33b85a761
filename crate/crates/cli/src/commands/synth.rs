use std::path::PathBuf;

use anyhow::{ensure, Result};
use clap::ValueEnum;
use serde::Serialize;
use tabguide::metrics::SyntheticManifold;
use tabguide::synth::{correlated_gaussian, manifold_table, GaussianMixtureTable};

use super::{require, set_path};
use crate::artifacts::{OutputDir, Provenance, Stamped};
use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
pub enum Kind {
    Circle,
    Sphere,
    Subspace,
    Gaussian,
    Mixture,
}

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    #[arg(long, value_enum, default_value = "circle")]
    pub kind: Kind,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Ambient dimension of a manifold dataset.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Intrinsic dimension of a sphere or subspace.
    #[arg(long)]
    pub intrinsic: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Correlation of the Gaussian pair.
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
enum Truth {
    Manifold { manifold: SyntheticManifold },
    Gaussian { rho: f64 },
    Mixture { mixture: GaussianMixtureTable },
}

pub fn run(mut cfg: RunConfig, a: Args) -> Result<()> {
    let flags = serde_json::to_value(&a)?;
    set_path(&mut cfg.out, a.out.clone());
    cfg.validate()?;
    ensure!(a.n > 0, "--n must be positive");
    let seed = cfg.seed;
    let (schema, rows, truth) = match a.kind {
        Kind::Circle | Kind::Sphere | Kind::Subspace => {
            let m = match a.kind {
                Kind::Circle => SyntheticManifold::Circle {
                    radius: a.radius,
                    dim: a.dim.unwrap_or(2),
                },
                Kind::Sphere => {
                    let dim = a.dim.unwrap_or(3);
                    SyntheticManifold::Sphere {
                        radius: a.radius,
                        n: a.intrinsic.unwrap_or(dim.saturating_sub(1)),
                        dim,
                    }
                }
                _ => SyntheticManifold::random_subspace(
                    a.intrinsic.unwrap_or(1),
                    a.dim.unwrap_or(3),
                    seed,
                )?,
            };
            m.validate()?;
            let (s, r) = manifold_table(&m, a.n, seed);
            (s, r, Truth::Manifold { manifold: m })
        }
        Kind::Gaussian => {
            ensure!(a.rho.abs() < 1.0, "--rho must lie in (-1, 1)");
            let (s, r) = correlated_gaussian(a.n, a.rho, seed);
            (s, r, Truth::Gaussian { rho: a.rho })
        }
        Kind::Mixture => {
            let m = GaussianMixtureTable::default();
            let (s, r) = m.sample(a.n, seed);
            (s, r, Truth::Mixture { mixture: m })
        }
    };
    let prov = Provenance {
        seed,
        config_hash: cfg.hash_with(&flags),
        checkpoint_hash: None,
    };
    let mut out = OutputDir::create(require(&cfg.out, "--out")?)?;
    out.write("data.csv", &super::csv_bytes(&schema, &rows)?)?;
    out.write_json("schema.json", &schema)?;
    out.write_json(
        "truth.json",
        &Stamped {
            provenance: &prov,
            body: truth,
        },
    )?;
    eprintln!(
        "wrote {} rows to {}",
        rows.len(),
        out.path("data.csv").display()
    );
    out.finish("synth", &prov)?;
    Ok(())
}
