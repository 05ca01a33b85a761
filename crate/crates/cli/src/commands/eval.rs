use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use tabguide::codec::{Encoder, Row};
use tabguide::guidance::ConstraintDoc;
use tabguide::metrics::EvalReport;
use tabguide::tasks::{MaskTask, Mechanism};

use super::set_path;
use crate::artifacts::{OutputDir, Provenance, Stamped};
use crate::config::RunConfig;
use crate::data::{load_model, read_table, resolve_schema, rows_for_checkpoint, typed_rows};

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Model whose encoder defines columns and scaling. Without it the
    /// encoder is fitted on `--truth` (or `--samples`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub infer: bool,
    /// Complete reference rows of an imputation run.
    #[arg(long, requires_all = ["imputed", "mask"])]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub imputed: Option<PathBuf>,
    /// 0/1 mask CSV, 1 = missing.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Generated rows to check against `--constraint`.
    #[arg(long, requires = "constraint", conflicts_with = "truth")]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub constraint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

struct Scorer {
    encoder: Option<Encoder>,
    checkpoint: Option<(tabguide::persist::Checkpoint, String)>,
}

impl Scorer {
    fn rows(&mut self, path: &Path, schema: Option<&Path>, infer: bool) -> Result<Vec<Row>> {
        if let Some((ck, _)) = &self.checkpoint {
            return rows_for_checkpoint(ck, path, schema);
        }
        let table = read_table(path)?;
        let s = match &self.encoder {
            Some(e) => e.schema().clone(),
            None => resolve_schema(&table, schema, infer)?,
        };
        let rows = typed_rows(&s, &table, path)?;
        if self.encoder.is_none() {
            self.encoder = Some(Encoder::fit(&s, &rows)?);
        }
        Ok(rows)
    }

    fn encoder(&self) -> Result<&Encoder> {
        match (&self.checkpoint, &self.encoder) {
            (Some((ck, _)), _) => Ok(&ck.encoder),
            (None, Some(e)) => Ok(e),
            _ => bail!("no encoder"),
        }
    }
}

pub fn run(mut cfg: RunConfig, a: Args) -> Result<()> {
    let flags = serde_json::to_value(&a)?;
    set_path(&mut cfg.checkpoint, a.checkpoint.clone());
    set_path(&mut cfg.schema, a.schema.clone());
    set_path(&mut cfg.out, a.out.clone());
    cfg.validate()?;
    let checkpoint = match &cfg.checkpoint {
        Some(p) => {
            let m = load_model(p)?;
            Some((m.checkpoint, m.hash))
        }
        None => None,
    };
    let mut sc = Scorer {
        encoder: None,
        checkpoint,
    };
    let schema = cfg.schema.clone();
    let report = match (&a.truth, &a.samples) {
        (Some(truth), _) => {
            let truth_rows = sc.rows(truth, schema.as_deref(), a.infer)?;
            let imputed = sc.rows(
                a.imputed.as_deref().context("--imputed")?,
                schema.as_deref(),
                a.infer,
            )?;
            let mpath = a.mask.as_deref().context("--mask")?;
            let f = std::fs::File::open(mpath)
                .with_context(|| format!("opening {}", mpath.display()))?;
            let (headers, bits, n) = MaskTask::read_csv(f)?;
            let enc = sc.encoder()?;
            ensure!(
                headers.len() == enc.columns().len() && n == truth_rows.len(),
                "mask is {n}x{} but truth is {}x{}",
                headers.len(),
                truth_rows.len(),
                enc.columns().len()
            );
            let mask = MaskTask {
                mechanism: Mechanism::Mcar,
                ratio: bits.iter().filter(|&&b| b).count() as f64 / bits.len().max(1) as f64,
                rows: n,
                cols: headers.len(),
                bits,
                seed: cfg.seed,
                observed_columns: Vec::new(),
                driver_columns: Vec::new(),
            };
            EvalReport::imputation(&imputed, &truth_rows, &mask, enc, cfg.seed)?
        }
        (None, Some(samples)) => {
            let rows = sc.rows(samples, schema.as_deref(), a.infer)?;
            let cpath = a.constraint.as_deref().context("--constraint")?;
            let text = std::fs::read_to_string(cpath)
                .with_context(|| format!("reading {}", cpath.display()))?;
            let doc = ConstraintDoc::from_json(&text)?;
            EvalReport::constraint(&rows, &doc, sc.encoder()?, cfg.seed)?
        }
        (None, None) => bail!("pass --truth/--imputed/--mask or --samples/--constraint"),
    };
    let prov = Provenance {
        seed: cfg.seed,
        config_hash: cfg.hash_with(&flags),
        checkpoint_hash: sc.checkpoint.as_ref().map(|(_, h)| h.clone()),
    };
    let mut out = OutputDir::create(super::require(&cfg.out, "--out")?)?;
    out.write_json(
        "report.json",
        &Stamped {
            provenance: &prov,
            body: serde_json::json!({ "report": report }),
        },
    )?;
    out.finish("eval", &prov)
}
