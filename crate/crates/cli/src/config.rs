//! Run configuration. Values resolve as CLI flag > config file > default.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tabguide::diffusion::{
    NetConfig, Optimizer, ScheduleParams, TrainConfig, DEFAULT_HIDDEN, DEFAULT_TIME_EMBED_DIM,
    DEFAULT_TIME_HIDDEN, TRUNK_LAYERS,
};
use tabguide::exec::Execution;
use tabguide::guidance::{GuidanceConfig, SampleOptions};
use tabguide::persist::sha256_hex;
use tabguide::pipeline::LossVariant;
use tabguide::tasks::{Mechanism, ScenarioKind, DEFAULT_QUANTILE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    pub hidden: usize,
    pub time_hidden: usize,
    pub time_embed_dim: usize,
}

impl Default for NetSettings {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            time_hidden: DEFAULT_TIME_HIDDEN,
            time_embed_dim: DEFAULT_TIME_EMBED_DIM,
        }
    }
}

impl NetSettings {
    pub fn config(&self, data_dim: usize) -> NetConfig {
        NetConfig {
            data_dim,
            time_embed_dim: self.time_embed_dim,
            time_hidden: self.time_hidden,
            hidden: vec![self.hidden; TRUNK_LAYERS - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            optimizer: d.optimizer,
        }
    }
}

impl TrainSettings {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSettings {
    pub mechanism: Mechanism,
    pub ratio: f64,
    /// Always-observed columns for MAR; `ceil(0.3 · cols)` when unset.
    pub observed_cols: Option<usize>,
    pub loss: LossVariant,
    /// Guided draws averaged per imputed row.
    pub draws: usize,
    pub scenario: Option<ScenarioKind>,
    pub quantile: f64,
    pub range_column: Option<String>,
    pub category_column: Option<String>,
    /// Rows drawn by `constrain`.
    pub samples: usize,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Mcar,
            ratio: 0.25,
            observed_cols: None,
            loss: LossVariant::Mae,
            draws: 1,
            scenario: None,
            quantile: DEFAULT_QUANTILE,
            range_column: None,
            category_column: None,
            samples: 1000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
    pub execution: Execution,
    pub chunk_rows: usize,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub schedule: ScheduleParams,
    pub net: NetSettings,
    pub train: TrainSettings,
    pub guidance: GuidanceConfig,
    pub task: TaskSettings,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self {
            trials: 1,
            chunk_rows: SampleOptions::default().chunk_rows,
            ..Self::default()
        }
    }

    /// Built-in defaults overlaid with the fields present in `path`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::defaults());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut base = serde_json::to_value(Self::defaults())?;
        let patch: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        merge(&mut base, patch);
        serde_json::from_value(base).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        anyhow::ensure!(self.trials >= 1, "trials must be at least 1");
        anyhow::ensure!(self.chunk_rows >= 1, "chunk_rows must be at least 1");
        anyhow::ensure!(self.task.draws >= 1, "draws must be at least 1");
        self.guidance.validate()?;
        Ok(())
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            chunk_rows: self.chunk_rows,
            execution: self.execution,
        }
    }

    /// Hash of the resolved configuration plus the command's own flags.
    /// The output directory and the execution knobs are left out: they do
    /// not change results.
    pub fn hash_with<T: Serialize>(&self, args: &T) -> String {
        let mut c = self.clone();
        c.out = None;
        c.execution = Execution::default();
        c.chunk_rows = 0;
        let doc = serde_json::json!({ "config": c, "args": args });
        sha256_hex(doc.to_string().as_bytes())
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
