//! Model files: `GMCDCKPT`, a little-endian `u32` header length, a JSON
//! header, then the parameter, first-moment and second-moment vectors as
//! little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::NoiseSchedule;
use crate::error::{GmcdError, Result};
use crate::geometry::PackingResult;
use crate::predictor::{Predictor, PredictorConfig, RAdam, RAdamConfig, TensorSpec};
use crate::training::TrainState;

pub const MAGIC: &[u8; 8] = b"GMCDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobLayout {
    pub name: String,
    /// Byte offset from the start of the blob section.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub predictor: PredictorConfig,
    pub optimizer: RAdamConfig,
    pub schedule: NoiseSchedule,
    pub packing: PackingResult,
    pub step: u64,
    pub blobs: Vec<BlobLayout>,
    pub tensors: Vec<TensorSpec>,
    /// Hex SHA-256 of the blob section.
    pub sha256: String,
    /// Free-form provenance such as the config hash and seed.
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: TrainState,
    pub schedule: NoiseSchedule,
    pub packing: PackingResult,
    pub meta: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn integrity(msg: impl Into<String>) -> GmcdError {
    GmcdError::Integrity(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.state.predictor.params();
        let opt = &self.state.optimizer;
        let mut blob = Vec::with_capacity(24 * params.len());
        let mut layout = Vec::new();
        for (name, data) in [("params", params), ("m", &opt.m[..]), ("v", &opt.v[..])] {
            layout.push(BlobLayout {
                name: name.into(),
                offset: blob.len(),
                len: data.len(),
            });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            predictor: self.state.predictor.config().clone(),
            optimizer: opt.config,
            schedule: self.schedule.clone(),
            packing: self.packing.clone(),
            step: opt.step,
            blobs: layout,
            tensors: self.state.predictor.layout().tensors.clone(),
            sha256: hex(&Sha256::digest(&blob)),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| integrity("header too large"))?.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(integrity("not a checkpoint file (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let blob_start = 12usize.checked_add(hlen).filter(|e| *e <= bytes.len()).ok_or_else(|| integrity("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[12..blob_start]).map_err(|e| integrity(format!("unreadable header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(integrity(format!("unsupported format version {}", header.format_version)));
        }
        let blob = &bytes[blob_start..];
        if hex(&Sha256::digest(blob)) != header.sha256 {
            return Err(integrity("checksum mismatch in parameter blobs"));
        }
        let read = |name: &str| -> Result<Vec<f64>> {
            let b = header.blobs.iter().find(|b| b.name == name).ok_or_else(|| integrity(format!("missing blob {name}")))?;
            let end = b.offset + 8 * b.len;
            let raw = blob.get(b.offset..end).ok_or_else(|| integrity(format!("blob {name} out of bounds")))?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let predictor = Predictor::from_params(header.predictor.clone(), read("params")?)?;
        if predictor.layout().tensors != header.tensors {
            return Err(integrity("tensor layout differs from the predictor config"));
        }
        let mut optimizer = RAdam::new(predictor.num_params(), header.optimizer)?;
        optimizer.m = read("m")?;
        optimizer.v = read("v")?;
        if optimizer.m.len() != predictor.num_params() || optimizer.v.len() != predictor.num_params() {
            return Err(integrity("optimizer buffers do not match parameters"));
        }
        optimizer.step = header.step;
        header.packing.validate()?;
        Ok(Self {
            state: TrainState { predictor, optimizer },
            schedule: header.schedule,
            packing: header.packing,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::linear_schedule;
    use crate::geometry::{pack_sphere, PackingConfig};
    use crate::predictor::Arch;

    fn sample() -> Checkpoint {
        let pack = pack_sphere(&PackingConfig::new(4, 3, 1)).unwrap();
        let mut cfg = PredictorConfig::new(Arch::Transformer, 4, 3, 4);
        cfg.hidden_size = 8;
        cfg.num_heads = 2;
        cfg.ffn_size = 8;
        let p = Predictor::new(cfg).unwrap();
        let mut state = TrainState::new(p, RAdamConfig::default()).unwrap();
        state.optimizer.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.5);
        state.optimizer.step = 17;
        Checkpoint {
            state,
            schedule: linear_schedule(10, 1e-4, 0.3).unwrap(),
            packing: pack,
            meta: serde_json::json!({"seed": 3}),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.state.predictor.params(), c.state.predictor.params());
        assert_eq!(back.state.optimizer, c.state.optimizer);
        assert_eq!(back.schedule, c.schedule);
        assert_eq!(back.packing, c.packing);
        assert_eq!(back.meta, c.meta);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(GmcdError::Integrity(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]), Err(GmcdError::Integrity(_))));
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPTxxxx"), Err(GmcdError::Integrity(_))));
        let mut header = bytes.clone();
        header[14] = b'#';
        assert!(Checkpoint::from_bytes(&header).is_err());
    }
}
