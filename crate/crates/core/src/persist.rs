//! Versioned JSON checkpoints and run artifacts.
//!
//! Weights are stored as base64 blobs of little-endian `f64`, so a checkpoint
//! reloads bit-for-bit.

use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{Encoder, TabularSchema};
use crate::diffusion::{
    DenoiserNet, DiffusionError, Linear, NetConfig, NoiseSchedule, ScheduleParams, TrainConfig,
    TrainReport,
};
use crate::grad::{GradError, Matrix};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

impl PersistError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PersistError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64(blob: &str, expected: usize, what: &str) -> Result<Vec<f64>, PersistError> {
    let bytes = B64
        .decode(blob)
        .map_err(|e| PersistError::Format(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(PersistError::Format(format!(
            "{what}: {} bytes for {expected} values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap_or([0; 8])))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredLayer {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: String,
    pub bias: String,
}

/// Everything needed to sample from a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub schema: TabularSchema,
    pub encoder: Encoder,
    pub schedule: ScheduleParams,
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Layer names in storage order.
    pub layer_order: Vec<String>,
    pub layers: Vec<StoredLayer>,
}

impl Checkpoint {
    pub fn new(
        net: &DenoiserNet,
        encoder: &Encoder,
        schedule: &ScheduleParams,
        train: &TrainConfig,
        config_hash: impl Into<String>,
    ) -> Self {
        let names = NetConfig::layer_names();
        let layers = net
            .layers()
            .iter()
            .zip(&names)
            .map(|(l, name)| StoredLayer {
                name: name.clone(),
                fan_in: l.weight.rows(),
                fan_out: l.weight.cols(),
                weight: encode_f64(l.weight.data()),
                bias: encode_f64(l.bias.data()),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            seed: train.seed,
            config_hash: config_hash.into(),
            schema: encoder.schema().clone(),
            encoder: encoder.clone(),
            schedule: schedule.clone(),
            net: net.config().clone(),
            train: train.clone(),
            layer_order: names,
            layers,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).unwrap_or_default();
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PersistError> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PersistError::Format(e.to_string()))?;
        let version = v
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| PersistError::Format("missing version field".into()))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(PersistError::Version {
                found: version as u32,
            });
        }
        let ck: Checkpoint =
            serde_json::from_value(v).map_err(|e| PersistError::Format(e.to_string()))?;
        if ck.encoder.dim() != ck.net.data_dim {
            return Err(PersistError::Format(format!(
                "encoder dimension {} but network input {}",
                ck.encoder.dim(),
                ck.net.data_dim
            )));
        }
        if ck.layer_order != NetConfig::layer_names() {
            return Err(PersistError::Format(format!(
                "unexpected layer order {:?}",
                ck.layer_order
            )));
        }
        Ok(ck)
    }

    pub fn network(&self) -> Result<DenoiserNet, PersistError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = decode_f64(&l.weight, l.fan_in * l.fan_out, &l.name)?;
            let b = decode_f64(&l.bias, l.fan_out, &l.name)?;
            layers.push(Linear {
                weight: Matrix::new(l.fan_in, l.fan_out, w)?,
                bias: Matrix::new(1, l.fan_out, b)?,
            });
        }
        Ok(DenoiserNet::from_layers(self.net.clone(), layers)?)
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, PersistError> {
        Ok(NoiseSchedule::from_params(self.schedule.clone())?)
    }

    pub fn write(&self, path: &Path) -> Result<String, PersistError> {
        let text = self.to_json();
        std::fs::write(path, &text).map_err(|e| PersistError::io(path, e))?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// Loads a checkpoint and returns it with the hash of its bytes.
    pub fn read(path: &Path) -> Result<(Self, String), PersistError> {
        let text = std::fs::read_to_string(path).map_err(|e| PersistError::io(path, e))?;
        Ok((Self::from_json(&text)?, sha256_hex(text.as_bytes())))
    }
}

/// `epoch,loss` lines.
pub fn write_loss_trace<W: Write>(mut w: W, report: &TrainReport) -> std::io::Result<()> {
    writeln!(w, "epoch,loss")?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Cell, Column};

    fn fixture() -> (DenoiserNet, Encoder) {
        let schema =
            TabularSchema::new(vec![Column::continuous("a"), Column::categorical("b", 2)]).unwrap();
        let rows = vec![
            vec![Cell::Number(1.0), Cell::Category("x".into())],
            vec![Cell::Number(2.0), Cell::Category("y".into())],
        ];
        let enc = Encoder::fit(&schema, &rows).unwrap();
        let net = DenoiserNet::init(NetConfig::compact(enc.dim(), 8, 4), 3).unwrap();
        (net, enc)
    }

    #[test]
    fn round_trip_is_exact() {
        let (net, enc) = fixture();
        let ck = Checkpoint::new(
            &net,
            &enc,
            &ScheduleParams::default(),
            &TrainConfig::default(),
            "abc",
        );
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let net2 = back.network().unwrap();
        assert_eq!(net2, net);
        let x = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 * 0.1 - 0.5);
        use crate::diffusion::Denoiser;
        assert_eq!(
            net.predict_eps(&x, &[1, 5, 9, 200]).unwrap(),
            net2.predict_eps(&x, &[1, 5, 9, 200]).unwrap()
        );
        assert_eq!(ck.to_json(), back.to_json());
    }

    #[test]
    fn rejects_bad_version_and_blobs() {
        let (net, enc) = fixture();
        let ck = Checkpoint::new(
            &net,
            &enc,
            &ScheduleParams::default(),
            &TrainConfig::default(),
            "",
        );
        let text = ck
            .to_json()
            .replacen("\"version\": 1", "\"version\": 99", 1);
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(PersistError::Version { found: 99 })
        ));
        let mut bad = ck.clone();
        bad.layers[0].weight = B64.encode([0u8; 8]);
        assert!(bad.network().is_err());
        assert!(Checkpoint::from_json("{}").is_err());
    }

    #[test]
    fn hashes() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut buf = Vec::new();
        write_loss_trace(
            &mut buf,
            &TrainReport {
                epoch_losses: vec![0.5, 0.25],
            },
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,loss\n1,0.5\n2,0.25\n"
        );
    }
}
