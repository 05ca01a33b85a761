use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use tabguide::codec::Encoder;
use tabguide::diffusion::{train_with, DenoiserNet, NoiseSchedule, Optimizer};
use tabguide::persist::{write_loss_trace, Checkpoint};

use super::{require, set, set_path};
use crate::artifacts::{OutputDir, Provenance};
use crate::config::RunConfig;
use crate::data::{read_table, resolve_schema, typed_rows};

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Infer the schema from the CSV (numbers → continuous).
    #[arg(long)]
    pub infer: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Width of the trunk layers.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub time_hidden: Option<usize>,
    #[arg(long)]
    pub time_embed_dim: Option<usize>,
    /// Diffusion steps T.
    #[arg(long)]
    pub steps: Option<usize>,
}

pub fn run(mut cfg: RunConfig, a: Args) -> Result<()> {
    let flags = serde_json::to_value(&a)?;
    set_path(&mut cfg.data, a.data);
    set_path(&mut cfg.schema, a.schema);
    set_path(&mut cfg.out, a.out);
    set(&mut cfg.train.epochs, a.epochs);
    set(&mut cfg.train.batch_size, a.batch_size);
    set(&mut cfg.train.learning_rate, a.lr);
    set(
        &mut cfg.train.optimizer,
        a.optimizer.map(|o| match o {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        }),
    );
    set(&mut cfg.net.hidden, a.hidden);
    set(&mut cfg.net.time_hidden, a.time_hidden);
    set(&mut cfg.net.time_embed_dim, a.time_embed_dim);
    set(&mut cfg.schedule.steps, a.steps);
    cfg.validate()?;

    let data = require(&cfg.data, "--data")?;
    let table = read_table(data)?;
    let schema = resolve_schema(&table, cfg.schema.as_deref(), a.infer)?;
    let rows = typed_rows(&schema, &table, data)?;
    let enc = Encoder::fit(&schema, &rows).context("fitting the encoder")?;
    let x = enc.encode_rows(&rows)?;
    let sched = NoiseSchedule::from_params(cfg.schedule.clone())?;
    let mut net = DenoiserNet::init(cfg.net.config(enc.dim()), cfg.seed)?;
    let tcfg = cfg.train.config(cfg.seed);
    let every = (tcfg.epochs / 10).max(1);
    let report = train_with(&mut net, &sched, &x, &tcfg, |e, loss| {
        if (e + 1) % every == 0 {
            eprintln!("epoch {}/{}: loss {loss:.5}", e + 1, tcfg.epochs);
        }
    })?;

    let config_hash = cfg.hash_with(&flags);
    let ck = Checkpoint::new(&net, &enc, &cfg.schedule, &tcfg, config_hash.clone());
    let text = ck.to_json();
    let mut out = OutputDir::create(require(&cfg.out, "--out")?)?;
    out.write("checkpoint.json", text.as_bytes())?;
    out.write_with("loss_trace.csv", |w| Ok(write_loss_trace(w, &report)?))?;
    let prov = Provenance {
        seed: cfg.seed,
        config_hash,
        checkpoint_hash: Some(tabguide::persist::sha256_hex(text.as_bytes())),
    };
    eprintln!("wrote {}", out.path("checkpoint.json").display());
    out.finish("train", &prov)?;
    Ok(())
}
