use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use tabguide::codec::{Encoder, Row};
use tabguide::guidance::{row_seed, EtaSchedule, GuidanceConfig};
use tabguide::metrics::EvalReport;
use tabguide::pipeline::{impute, ImputeOptions, LossVariant};
use tabguide::tasks::{column_features, gen_mar, gen_mask, MaskTask, Mechanism};

use super::{
    parse, require, set, set_path, summarize, trial_file, trial_seed, GuidanceArgs, Summary,
};
use crate::artifacts::{OutputDir, Provenance, Stamped};
use crate::config::RunConfig;
use crate::data::{load_model, rows_for_checkpoint, Model};

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Complete rows to mask and impute.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Schema of `--data`, checked against the checkpoint.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_parser = parse::<Mechanism>)]
    pub mechanism: Option<Mechanism>,
    /// Fraction of cells to hide, in (0, 1).
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Always-observed columns for MAR.
    #[arg(long)]
    pub observed_cols: Option<usize>,
    /// Use this 0/1 mask CSV (1 = missing) instead of generating one.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// mae, mse, mae+ce or mse+ce.
    #[arg(long, value_parser = parse::<LossVariant>)]
    pub loss: Option<LossVariant>,
    /// Guided draws averaged per row.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Run every loss variant under both η schedules and tabulate.
    #[arg(long)]
    pub ablation: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub guidance: GuidanceArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrialMetrics {
    continuous_mse: Option<Summary>,
    categorical_accuracy: Option<Summary>,
    /// Hidden share of all cells.
    realized_ratio: Option<Summary>,
    /// Hidden share of the cells the mechanism may hide (MAR spares its
    /// always-observed columns).
    maskable_ratio: Option<Summary>,
}

#[derive(Serialize)]
struct Report<'a> {
    mechanism: Mechanism,
    ratio: f64,
    loss: &'a str,
    draws: usize,
    guidance: GuidanceConfig,
    summary: TrialMetrics,
    trials: Vec<EvalReport>,
}

#[derive(Serialize)]
struct AblationRow {
    loss: &'static str,
    schedule: EtaSchedule,
    eta: f64,
    continuous_mse: Option<Summary>,
    categorical_accuracy: Option<Summary>,
}

fn fixed_mask(path: &Path, enc: &Encoder, rows: usize) -> Result<MaskTask> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (headers, bits, n) =
        MaskTask::read_csv(f).with_context(|| format!("reading {}", path.display()))?;
    let names: Vec<&str> = enc.columns().iter().map(|c| c.name.as_str()).collect();
    ensure!(
        headers.iter().map(String::as_str).eq(names.iter().copied()),
        "mask columns {headers:?} differ from the model columns {names:?}"
    );
    ensure!(n == rows, "mask has {n} rows, data has {rows}");
    let missing = bits.iter().filter(|&&b| b).count();
    ensure!(missing > 0, "mask hides nothing: nothing to impute");
    Ok(MaskTask {
        mechanism: Mechanism::Mcar,
        ratio: missing as f64 / bits.len() as f64,
        rows,
        cols: names.len(),
        bits,
        seed: 0,
        observed_columns: Vec::new(),
        driver_columns: Vec::new(),
    })
}

/// One mask per trial, shared by every variant in an ablation.
fn trial_masks(cfg: &RunConfig, a: &Args, enc: &Encoder, rows: &[Row]) -> Result<Vec<MaskTask>> {
    if let Some(p) = &a.mask {
        let m = fixed_mask(p, enc, rows.len())?;
        return Ok(vec![m; cfg.trials]);
    }
    let ratio = cfg.task.ratio;
    if !(ratio > 0.0 && ratio < 1.0) {
        bail!("ratio must lie in (0, 1), got {ratio}: nothing to impute at 0");
    }
    let features = column_features(enc, rows)?;
    (0..cfg.trials)
        .map(|i| {
            let s = trial_seed(cfg, i);
            Ok(match (cfg.task.mechanism, cfg.task.observed_cols) {
                (Mechanism::Mar, Some(k)) => gen_mar(&features, ratio, k, s)?,
                (m, _) => gen_mask(m, &features, ratio, s)?,
            })
        })
        .collect()
}

fn run_trials(
    cfg: &RunConfig,
    model: &Model,
    rows: &[Row],
    masks: &[MaskTask],
    variant: LossVariant,
    guidance: GuidanceConfig,
) -> Result<Vec<(Vec<Row>, EvalReport)>> {
    let enc = &model.checkpoint.encoder;
    let opts = ImputeOptions {
        guidance,
        variant,
        n_draws: cfg.task.draws,
        sample: cfg.sample_options(),
    };
    masks
        .iter()
        .enumerate()
        .map(|(i, mask)| {
            let seed = trial_seed(cfg, i);
            let imputed = impute(
                &model.net,
                &model.schedule,
                enc,
                rows,
                mask,
                &opts,
                row_seed(seed, 1),
            )?;
            let report = EvalReport::imputation(&imputed.rows, rows, mask, enc, seed)?;
            Ok((imputed.rows, report))
        })
        .collect()
}

pub fn run(mut cfg: RunConfig, a: Args) -> Result<()> {
    let flags = serde_json::to_value(&a)?;
    set_path(&mut cfg.checkpoint, a.checkpoint.clone());
    set_path(&mut cfg.data, a.data.clone());
    set_path(&mut cfg.schema, a.schema.clone());
    set_path(&mut cfg.out, a.out.clone());
    set(&mut cfg.task.mechanism, a.mechanism);
    set(&mut cfg.task.ratio, a.ratio);
    if a.observed_cols.is_some() {
        cfg.task.observed_cols = a.observed_cols;
    }
    set(&mut cfg.task.loss, a.loss);
    set(&mut cfg.task.draws, a.draws);
    a.guidance.apply(&mut cfg);
    cfg.validate()?;

    let model = load_model(require(&cfg.checkpoint, "--checkpoint")?)?;
    let data = require(&cfg.data, "--data")?;
    let rows = rows_for_checkpoint(&model.checkpoint, data, cfg.schema.as_deref())?;
    let enc = &model.checkpoint.encoder;
    let masks = trial_masks(&cfg, &a, enc, &rows)?;
    let prov = Provenance {
        seed: cfg.seed,
        config_hash: cfg.hash_with(&flags),
        checkpoint_hash: Some(model.hash.clone()),
    };
    let mut out = OutputDir::create(require(&cfg.out, "--out")?)?;
    let headers: Vec<String> = enc.columns().iter().map(|c| c.name.clone()).collect();
    for (i, m) in masks.iter().enumerate() {
        out.write_with(&trial_file(&cfg, "mask", "csv", i), |w| {
            Ok(m.write_csv(w, &headers)?)
        })?;
    }

    if a.ablation {
        let mut table = Vec::new();
        for variant in LossVariant::ALL {
            for schedule in [EtaSchedule::Constant, EtaSchedule::LinearRamp] {
                let g = GuidanceConfig {
                    schedule,
                    ..cfg.guidance
                };
                let res = run_trials(&cfg, &model, &rows, &masks, variant, g)?;
                let row = AblationRow {
                    loss: variant.name(),
                    schedule,
                    eta: g.eta,
                    continuous_mse: summarize(res.iter().map(|(_, r)| r.continuous_mse)),
                    categorical_accuracy: summarize(
                        res.iter().map(|(_, r)| r.categorical_accuracy),
                    ),
                };
                eprintln!(
                    "{} / {:?}: mse {:?}",
                    row.loss,
                    schedule,
                    row.continuous_mse.map(|s| s.mean)
                );
                table.push(row);
            }
        }
        out.write_with("ablation.csv", |w| write_ablation_csv(w, &table))?;
        out.write_json(
            "ablation.json",
            &Stamped {
                provenance: &prov,
                body: serde_json::json!({ "rows": table }),
            },
        )?;
        return out.finish("impute", &prov);
    }

    let res = run_trials(&cfg, &model, &rows, &masks, cfg.task.loss, cfg.guidance)?;
    for (i, (imputed, _)) in res.iter().enumerate() {
        out.write(
            &trial_file(&cfg, "imputed", "csv", i),
            &super::csv_bytes(enc.schema(), imputed)?,
        )?;
    }
    let reports: Vec<EvalReport> = res.into_iter().map(|(_, r)| r).collect();
    let report = Report {
        mechanism: cfg.task.mechanism,
        ratio: cfg.task.ratio,
        loss: cfg.task.loss.name(),
        draws: cfg.task.draws,
        guidance: cfg.guidance,
        summary: TrialMetrics {
            continuous_mse: summarize(reports.iter().map(|r| r.continuous_mse)),
            categorical_accuracy: summarize(reports.iter().map(|r| r.categorical_accuracy)),
            realized_ratio: summarize(masks.iter().map(|m| Some(m.realized_ratio()))),
            maskable_ratio: summarize(masks.iter().map(|m| Some(m.maskable_ratio()))),
        },
        trials: reports,
    };
    if let Some(s) = report.summary.continuous_mse {
        eprintln!(
            "continuous MSE {:.4} ± {:.4} over {} trial(s)",
            s.mean, s.std, s.n
        );
    }
    if let Some(s) = report.summary.categorical_accuracy {
        eprintln!("categorical accuracy {:.2}% ± {:.2}", s.mean, s.std);
    }
    out.write_json(
        "report.json",
        &Stamped {
            provenance: &prov,
            body: report,
        },
    )?;
    out.finish("impute", &prov)
}

fn write_ablation_csv(w: &mut Vec<u8>, rows: &[AblationRow]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record([
        "loss",
        "schedule",
        "eta",
        "mse_mean",
        "mse_std",
        "accuracy_mean",
        "accuracy_std",
    ])?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let schedule = match r.schedule {
            EtaSchedule::Constant => "constant",
            EtaSchedule::LinearRamp => "linear_ramp",
        };
        c.write_record([
            r.loss.to_string(),
            schedule.to_string(),
            r.eta.to_string(),
            f(r.continuous_mse.map(|s| s.mean)),
            f(r.continuous_mse.map(|s| s.std)),
            f(r.categorical_accuracy.map(|s| s.mean)),
            f(r.categorical_accuracy.map(|s| s.std)),
        ])?;
    }
    c.flush()?;
    Ok(())
}
