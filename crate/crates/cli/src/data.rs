//! Loading tables, schemas and checkpoints from disk.

use std::path::Path;

use anyhow::{bail, Context, Result};
use tabguide::codec::{infer_schema, Dataset, Row, Table, TabularSchema};
use tabguide::diffusion::{DenoiserNet, NoiseSchedule};
use tabguide::persist::Checkpoint;

pub fn read_table(path: &Path) -> Result<Table> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Table::read(f).with_context(|| format!("reading {}", path.display()))
}

pub fn read_schema(path: &Path) -> Result<TabularSchema> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading schema {}", path.display()))?;
    let schema: TabularSchema = serde_json::from_str(&text)
        .with_context(|| format!("parsing schema {}", path.display()))?;
    schema
        .validate()
        .with_context(|| format!("schema {}", path.display()))?;
    Ok(schema)
}

/// Schema from `schema`, or inferred from the table when `infer` is set.
pub fn resolve_schema(table: &Table, schema: Option<&Path>, infer: bool) -> Result<TabularSchema> {
    match (schema, infer) {
        (Some(p), _) => read_schema(p),
        (None, true) => Ok(infer_schema(table, None)?),
        (None, false) => bail!("no schema given: pass --schema <path> or --infer"),
    }
}

pub fn typed_rows(schema: &TabularSchema, table: &Table, path: &Path) -> Result<Vec<Row>> {
    let ds = Dataset::from_table(schema, table)
        .with_context(|| format!("loading {}", path.display()))?;
    if ds.is_empty() {
        bail!("{}: no complete rows", path.display());
    }
    Ok(ds.rows)
}

/// Column-level differences between two schemas, one line each.
pub fn schema_diff(expected: &TabularSchema, found: &TabularSchema) -> Vec<String> {
    let mut out = Vec::new();
    for c in &expected.columns {
        match found.columns.iter().find(|f| f.name == c.name) {
            None => out.push(format!("`{}` missing", c.name)),
            Some(f) if f.kind.is_categorical() != c.kind.is_categorical() => {
                let kind = |k: bool| if k { "categorical" } else { "continuous" };
                out.push(format!(
                    "`{}` is {} in the checkpoint but {} in the data",
                    c.name,
                    kind(c.kind.is_categorical()),
                    kind(f.kind.is_categorical())
                ));
            }
            Some(_) => {}
        }
    }
    for f in &found.columns {
        if !expected.columns.iter().any(|c| c.name == f.name) {
            out.push(format!("`{}` not in the checkpoint", f.name));
        }
    }
    out
}

/// Checks a CSV (and an optional schema file) against the checkpoint
/// schema and returns the typed rows.
pub fn rows_for_checkpoint(
    ck: &Checkpoint,
    data: &Path,
    schema: Option<&Path>,
) -> Result<Vec<Row>> {
    let table = read_table(data)?;
    let found = match schema {
        Some(p) => read_schema(p)?,
        None => infer_schema(&table, ck.schema.target_column.as_deref())?,
    };
    let diff = schema_diff(&ck.schema, &found);
    // Without an explicit schema only absent columns are fatal: inferred kinds
    // misread numeric-coded categories and extra CSV columns are ignored.
    let fatal: Vec<&String> = diff
        .iter()
        .filter(|d| schema.is_some() || d.ends_with("missing"))
        .collect();
    if !fatal.is_empty() {
        bail!(
            "data does not match the checkpoint schema: {}",
            fatal
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join("; ")
        );
    }
    typed_rows(&ck.schema, &table, data)
}

pub struct Model {
    pub checkpoint: Checkpoint,
    pub hash: String,
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
}

pub fn load_model(path: &Path) -> Result<Model> {
    let (checkpoint, hash) = Checkpoint::read(path)?;
    let net = checkpoint.network()?;
    let schedule = checkpoint.noise_schedule()?;
    Ok(Model {
        checkpoint,
        hash,
        net,
        schedule,
    })
}
