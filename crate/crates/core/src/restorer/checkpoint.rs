//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "HEALCKPT"
//! hlen      u32       length of the JSON header in bytes
//! header    hlen      UTF-8 JSON (see `Header`)
//! weights   rest      f32 values of every parameter, in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, Restorer, RestorerConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::schedule::ScheduleParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HEALCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    restorer_config: RestorerConfig,
    schedule: ScheduleParams,
    train_fingerprint: String,
    seed: u64,
    steps_trained: usize,
    config_hash: String,
    weights_sha256: String,
    params: Vec<ParamEntry>,
}

/// Serialized weights plus everything needed to rebuild the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RestorerCheckpoint {
    pub restorer_config: RestorerConfig,
    pub schedule: ScheduleParams,
    /// SHA-256 of the training configuration JSON; empty when untrained.
    pub train_fingerprint: String,
    pub seed: u64,
    pub steps_trained: usize,
    params: ParamStore<f32>,
}

/// SHA-256 over the canonical JSON of the architecture and schedule.
pub fn config_hash(config: &RestorerConfig, schedule: &ScheduleParams) -> String {
    let json = serde_json::to_vec(&(config, schedule)).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

pub fn train_fingerprint(config: &TrainConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

impl RestorerCheckpoint {
    pub fn new(
        restorer: &Restorer<f32>,
        schedule: ScheduleParams,
        train_config: Option<&TrainConfig>,
        seed: u64,
        steps_trained: usize,
    ) -> Self {
        RestorerCheckpoint {
            restorer_config: restorer.config().clone(),
            schedule,
            train_fingerprint: train_config.map(train_fingerprint).unwrap_or_default(),
            seed,
            steps_trained,
            params: restorer.params().clone(),
        }
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn restorer(&self) -> Result<Restorer<f32>> {
        Restorer::with_params(self.restorer_config.clone(), self.params.clone())
    }

    pub fn model(&self) -> Result<Model> {
        Ok(Model::new(self.restorer()?, self.schedule.build()?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut weights = Vec::with_capacity(self.params.num_scalars() * 4);
        for p in self.params.params() {
            for v in &p.value {
                weights.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            restorer_config: self.restorer_config.clone(),
            schedule: self.schedule,
            train_fingerprint: self.train_fingerprint.clone(),
            seed: self.seed,
            steps_trained: self.steps_trained,
            config_hash: config_hash(&self.restorer_config, &self.schedule),
            weights_sha256: hex::encode(Sha256::digest(&weights)),
            params: self
                .params
                .params()
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + weights.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&weights);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| corrupt("header extends past end of file"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| corrupt(format!("bad header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        if header.config_hash != config_hash(&header.restorer_config, &header.schedule) {
            return Err(corrupt("config hash mismatch"));
        }
        let weights = &bytes[12 + hlen..];
        let expected: usize = header
            .params
            .iter()
            .map(|p| p.shape.iter().product::<usize>() * 4)
            .sum();
        if weights.len() != expected {
            return Err(corrupt(format!(
                "weight blob has {} bytes, header describes {expected}",
                weights.len()
            )));
        }
        if hex::encode(Sha256::digest(weights)) != header.weights_sha256 {
            return Err(corrupt("weight checksum mismatch"));
        }

        let mut params = ParamStore::new();
        let mut floats = weights
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        for entry in header.params {
            let len = entry.shape.iter().product();
            let value: Vec<f32> = floats.by_ref().take(len).collect();
            params.add(entry.name, entry.shape, value);
        }
        let ckpt = RestorerCheckpoint {
            restorer_config: header.restorer_config,
            schedule: header.schedule,
            train_fingerprint: header.train_fingerprint,
            seed: header.seed,
            steps_trained: header.steps_trained,
            params,
        };
        // Layout must match the architecture the header claims.
        ckpt.restorer()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn tiny() -> RestorerConfig {
        RestorerConfig {
            channels_per_level: vec![8, 8],
            attention_from_level: 2,
            time_embed_dim: 8,
            input_size: 32,
            norm_groups: 4,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let r = Restorer::<f32>::new(tiny(), 5).unwrap();
        let ckpt = RestorerCheckpoint::new(&r, ScheduleParams::default(), Some(&TrainConfig::desk()), 5, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();
        let back = RestorerCheckpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let x = Tensor::from_vec([1, 1, 32, 32], (0..1024).map(|i| (i % 7) as f32 / 7.0).collect());
        let a = r.forward(&x, &[30]);
        let b = back.restorer().unwrap().forward(&x, &[30]);
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(back.schedule.build().unwrap(), ScheduleParams::default().build().unwrap());
    }

    #[test]
    fn detects_tampering() {
        let r = Restorer::<f32>::new(tiny(), 5).unwrap();
        let bytes = RestorerCheckpoint::new(&r, ScheduleParams::default(), None, 5, 0).to_bytes();

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(RestorerCheckpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));

        let truncated = &bytes[..bytes.len() - 4];
        assert!(RestorerCheckpoint::from_bytes(truncated).is_err());

        let text = String::from_utf8_lossy(&bytes).into_owned();
        let pos = text.find("\"time_embed_dim\":8").unwrap();
        let mut edited = bytes.clone();
        edited[pos + 17] = b'9';
        assert!(matches!(RestorerCheckpoint::from_bytes(&edited), Err(Error::Checkpoint(_))));

        assert!(RestorerCheckpoint::from_bytes(b"nope").is_err());
    }
}
