pub mod constrain;
pub mod diag;
pub mod eval;
pub mod impute;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use tabguide::guidance::{row_seed, EtaSchedule};
use tabguide::metrics::mean_std;

use crate::config::RunConfig;

/// Guidance flags shared by the sampling commands.
#[derive(clap::Args, Debug, Default)]
pub struct GuidanceArgs {
    /// Guidance strength η.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, value_enum)]
    pub eta_schedule: Option<ScheduleArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
pub enum ScheduleArg {
    Constant,
    LinearRamp,
}

impl From<ScheduleArg> for EtaSchedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Constant => EtaSchedule::Constant,
            ScheduleArg::LinearRamp => EtaSchedule::LinearRamp,
        }
    }
}

impl GuidanceArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(e) = self.eta {
            cfg.guidance.eta = e;
        }
        if let Some(s) = self.eta_schedule {
            cfg.guidance.schedule = s.into();
        }
    }
}

/// clap value parser over a `FromStr` type, keeping its error message.
pub fn parse<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

pub fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

pub fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("missing {flag} (flag or config file)"))
}

/// Seed of trial `i`: the run seed itself for single-trial runs.
pub fn trial_seed(cfg: &RunConfig, i: usize) -> u64 {
    if cfg.trials == 1 {
        cfg.seed
    } else {
        row_seed(cfg.seed, i)
    }
}

/// File name for a per-trial artifact.
pub fn trial_file(cfg: &RunConfig, stem: &str, ext: &str, i: usize) -> String {
    if cfg.trials == 1 {
        format!("{stem}.{ext}")
    } else {
        format!("{stem}_{i}.{ext}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and sample std over the trials that produced a value.
pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Option<Summary> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    let (mean, std) = mean_std(&v);
    Some(Summary {
        mean,
        std,
        n: v.len(),
    })
}

pub fn csv_bytes(
    schema: &tabguide::codec::TabularSchema,
    rows: &[tabguide::codec::Row],
) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    tabguide::codec::write_rows(&mut buf, schema, rows, None)?;
    Ok(buf)
}
