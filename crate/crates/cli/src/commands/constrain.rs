use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use tabguide::guidance::{
    default_loss_for, ConstraintDoc, ConstraintSpec, GuidanceConfig, TaskKind,
};
use tabguide::metrics::EvalReport;
use tabguide::pipeline::generate;
use tabguide::tasks::{coverage, gen_constraint_scenario, ScenarioKind, ScenarioOptions};

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
    /// Reference rows: scenario thresholds and coverage come from them.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// range, category, and, or.
    #[arg(long, value_parser = parse::<ScenarioKind>, conflicts_with = "constraint")]
    pub scenario: Option<ScenarioKind>,
    /// Constraint document (JSON) to use instead of a generated scenario.
    #[arg(long)]
    pub constraint: Option<PathBuf>,
    /// Tail quantile of range scenarios.
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub range_column: Option<String>,
    #[arg(long)]
    pub category_column: Option<String>,
    /// Rows to draw.
    #[arg(long)]
    pub n: Option<usize>,
    /// Also draw the unguided (η = 0) control with the same seeds.
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub guidance: GuidanceArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Arm {
    violation_rate: Option<Summary>,
    /// Per child of a composition, in document order.
    child_violation_rates: Vec<Option<Summary>>,
    trials: Vec<EvalReport>,
}

#[derive(Serialize)]
struct Report {
    constraint: ConstraintDoc,
    reference_coverage: Option<f64>,
    samples: usize,
    guidance: GuidanceConfig,
    guided: Arm,
    baseline: Option<Arm>,
}

fn arm(reports: Vec<EvalReport>) -> Arm {
    let children = reports.first().map_or(0, |r| r.per_column.len());
    Arm {
        violation_rate: summarize(reports.iter().map(|r| r.violation_rate)),
        child_violation_rates: (0..children)
            .map(|c| summarize(reports.iter().map(|r| r.per_column[c].value)))
            .collect(),
        trials: reports,
    }
}

pub fn run(mut cfg: RunConfig, a: Args) -> Result<()> {
    let flags = serde_json::to_value(&a)?;
    set_path(&mut cfg.checkpoint, a.checkpoint);
    set_path(&mut cfg.data, a.data);
    set_path(&mut cfg.schema, a.schema);
    set_path(&mut cfg.out, a.out);
    if a.scenario.is_some() {
        cfg.task.scenario = a.scenario;
    }
    set(&mut cfg.task.quantile, a.quantile);
    if a.range_column.is_some() {
        cfg.task.range_column = a.range_column;
    }
    if a.category_column.is_some() {
        cfg.task.category_column = a.category_column;
    }
    set(&mut cfg.task.samples, a.n);
    a.guidance.apply(&mut cfg);
    cfg.validate()?;
    ensure!(cfg.task.samples > 0, "--n must be positive");

    let model = load_model(require(&cfg.checkpoint, "--checkpoint")?)?;
    let enc = &model.checkpoint.encoder;
    let reference = match &cfg.data {
        Some(p) => Some(rows_for_checkpoint(
            &model.checkpoint,
            p,
            cfg.schema.as_deref(),
        )?),
        None => None,
    };
    let (doc, cov, scenario) = match (&a.constraint, cfg.task.scenario) {
        (Some(p), _) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let doc = ConstraintDoc::from_json(&text)
                .with_context(|| format!("parsing {}", p.display()))?;
            let cov = match &reference {
                Some(rows) => Some(coverage(&doc, enc, rows)?),
                None => None,
            };
            let body = serde_json::json!({ "constraint": doc, "coverage": cov });
            (doc, cov, body)
        }
        (None, Some(kind)) => {
            let rows = reference
                .as_deref()
                .context("a generated scenario needs reference rows (--data)")?;
            let opts = ScenarioOptions {
                quantile: cfg.task.quantile,
                range_column: cfg.task.range_column.clone(),
                category_column: cfg.task.category_column.clone(),
            };
            let sc = gen_constraint_scenario(kind, enc, rows, &opts, cfg.seed)?;
            (
                sc.constraint.clone(),
                Some(sc.coverage),
                serde_json::json!({ "scenario": sc }),
            )
        }
        (None, None) => bail!("pass --scenario <range|category|and|or> or --constraint <file>"),
    };
    let spec = doc.resolve(enc, &default_loss_for(TaskKind::Inequality))?;
    let (mut out, prov) = sample_and_report(
        &cfg,
        cfg.hash_with(&flags),
        &model,
        doc,
        spec,
        cov,
        a.baseline,
    )?;
    out.write_json(
        "scenario.json",
        &Stamped {
            provenance: &prov,
            body: scenario,
        },
    )?;
    out.finish("constrain", &prov)
}

fn sample_and_report(
    cfg: &RunConfig,
    config_hash: String,
    model: &Model,
    doc: ConstraintDoc,
    spec: ConstraintSpec,
    cov: Option<f64>,
    baseline: bool,
) -> Result<(OutputDir, Provenance)> {
    let enc = &model.checkpoint.encoder;
    let prov = Provenance {
        seed: cfg.seed,
        config_hash,
        checkpoint_hash: Some(model.hash.clone()),
    };
    let mut out = OutputDir::create(require(&cfg.out, "--out")?)?;
    let opts = cfg.sample_options();
    let n = cfg.task.samples;
    let mut draw = |g: &GuidanceConfig, stem: &str| -> Result<Vec<EvalReport>> {
        (0..cfg.trials)
            .map(|i| {
                let seed = trial_seed(cfg, i);
                let rows = generate(
                    &model.net,
                    &model.schedule,
                    enc,
                    Some(&spec),
                    g,
                    n,
                    seed,
                    &opts,
                )?;
                out.write(
                    &trial_file(cfg, stem, "csv", i),
                    &super::csv_bytes(enc.schema(), &rows)?,
                )?;
                Ok(EvalReport::constraint(&rows, &doc, enc, seed)?)
            })
            .collect()
    };
    let guided = arm(draw(&cfg.guidance, "samples")?);
    let control = if baseline {
        Some(arm(draw(
            &GuidanceConfig::constant(0.0),
            "baseline_samples",
        )?))
    } else {
        None
    };
    if let Some(v) = guided.violation_rate {
        eprintln!("guided violation rate {:.2}%", v.mean);
    }
    if let Some(v) = control.as_ref().and_then(|c| c.violation_rate) {
        eprintln!("unguided violation rate {:.2}%", v.mean);
    }
    let report = Report {
        constraint: doc,
        reference_coverage: cov,
        samples: n,
        guidance: cfg.guidance,
        guided,
        baseline: control,
    };
    out.write_json(
        "report.json",
        &Stamped {
            provenance: &prov,
            body: report,
        },
    )?;
    Ok((out, prov))
}
