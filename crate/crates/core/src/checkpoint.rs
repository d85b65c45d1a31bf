//! Binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (schedule, network, metadata, per-layer offsets), then the raw and
//! EMA parameter blocks as little-endian `f64`. All integers little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CdmError, Result};
use crate::net::{ClassifierNet, NetSpec, Params};
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::train::{LossMode, TrainConfig};

pub const MAGIC: &[u8; 8] = b"CDMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub seed: u64,
    pub config_hash: String,
    pub w_ce: f64,
    pub loss_mode: LossMode,
    pub ema_decay: f64,
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSet {
    Raw,
    #[default]
    Ema,
}

impl ParamSet {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "ema" => Ok(Self::Ema),
            other => Err(CdmError::InvalidConfig(format!(
                "unknown parameter set '{other}' (raw or ema)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleSpec,
    pub net: NetSpec,
    pub params: Params,
    pub ema: Params,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    rows: usize,
    cols: usize,
    /// Offset of the weight within each block, in `f64`s; the bias follows.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schedule: ScheduleSpec,
    net: NetSpec,
    meta: CheckpointMeta,
    layers: Vec<LayerEntry>,
    param_count: usize,
}

impl Checkpoint {
    pub fn new(
        schedule: ScheduleSpec,
        net: NetSpec,
        params: Params,
        ema: Params,
        meta: CheckpointMeta,
    ) -> Result<Self> {
        net.validate()?;
        let expected = Params::zeros(&net);
        for p in [&params, &ema] {
            let same = p.layers.len() == expected.layers.len()
                && p.layers
                    .iter()
                    .zip(&expected.layers)
                    .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len());
            if !same {
                return Err(CdmError::Checkpoint(
                    "parameter shapes do not match the network descriptor".into(),
                ));
            }
        }
        let sched = schedule.build()?;
        if sched.num_classes() != net.num_classes {
            return Err(CdmError::Checkpoint(format!(
                "schedule has {} classes, network has {}",
                sched.num_classes(),
                net.num_classes
            )));
        }
        Ok(Self {
            schedule,
            net,
            params,
            ema,
            meta,
        })
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn classifier(&self, which: ParamSet) -> Result<ClassifierNet> {
        let p = match which {
            ParamSet::Raw => &self.params,
            ParamSet::Ema => &self.ema,
        };
        ClassifierNet::from_params(self.net.clone(), p.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut layers = Vec::new();
        let mut offset = 0;
        for l in &self.params.layers {
            let (rows, cols) = l.weight.dim();
            layers.push(LayerEntry { rows, cols, offset });
            offset += rows * cols + l.bias.len();
        }
        let header = Header {
            schedule: self.schedule,
            net: self.net.clone(),
            meta: self.meta.clone(),
            layers,
            param_count: offset,
        };
        let json = serde_json::to_vec(&header).map_err(|e| CdmError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + 16 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in [&self.params, &self.ema] {
            for v in p.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| CdmError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CdmError::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(err("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| CdmError::Checkpoint(e.to_string()))?;
        let data = &body[header_len..];
        let n = header.param_count;
        if data.len() != 16 * n {
            return Err(CdmError::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                16 * n,
                data.len()
            )));
        }
        let read_block = |block: &[u8]| -> Vec<f64> {
            block
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let mut params = Params::zeros(&header.net);
        if params.len() != n || header.layers.len() != params.layers.len() {
            return Err(err("parameter count does not match the network descriptor"));
        }
        for (entry, layer) in header.layers.iter().zip(&params.layers) {
            if (entry.rows, entry.cols) != layer.weight.dim() {
                return Err(err("layer shape does not match the network descriptor"));
            }
        }
        let mut ema = params.clone();
        params.copy_from_flat(&read_block(&data[..8 * n]))?;
        ema.copy_from_flat(&read_block(&data[8 * n..]))?;
        Self::new(header.schedule, header.net, params, ema, header.meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CdmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CdmError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CdmError::Checkpoint(m) => CdmError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
