//! Portable checkpoints.
//!
//! Layout: a UTF-8 JSON header, one NUL byte, then every tensor as
//! little-endian `f32` values, concatenated in the order the header lists
//! them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::classes::SpeedClassMap;
use crate::error::{Error, Result};
use crate::model::{MetadataStats, ModelConfig, ModelParameters};

pub const FORMAT: &str = "freeflow-checkpoint/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub class_map: SpeedClassMap,
    pub metadata_stats: MetadataStats,
    /// Epoch (0-based) whose parameters these are.
    pub epoch: usize,
    pub val_within5: f64,
    /// Digest of the train/val/test assignment the model was trained under.
    pub split_digest: String,
    pub params: ModelParameters<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    fingerprint: String,
    model: ModelConfig,
    train: TrainConfig,
    class_map: SpeedClassMap,
    metadata_stats: MetadataStats,
    epoch: usize,
    seed: u64,
    val_within5: f64,
    split_digest: String,
    tensors: Vec<TensorEntry>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the model and training configuration.
pub fn config_fingerprint(model: &ModelConfig, train: &TrainConfig) -> String {
    let json = serde_json::to_string(&(model, train)).expect("configs serialize");
    sha256_hex(json.as_bytes())
}

impl Checkpoint {
    pub fn fingerprint(&self) -> String {
        config_fingerprint(&self.model, &self.train)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.model.classes != self.class_map.len() {
            return Err(Error::mismatch(format!(
                "model has {} classes but the class map has {}",
                self.model.classes,
                self.class_map.len()
            )));
        }
        let tensors = self.params.tensors();
        let header = Header {
            format: FORMAT.into(),
            fingerprint: self.fingerprint(),
            model: self.model.clone(),
            train: self.train.clone(),
            class_map: self.class_map.clone(),
            metadata_stats: self.metadata_stats,
            epoch: self.epoch,
            seed: self.train.seed,
            val_within5: self.val_within5,
            split_digest: self.split_digest.clone(),
            tensors: tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    len: t.data.len(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header).map_err(|source| Error::Json {
            context: "checkpoint header".into(),
            source,
        })?;
        out.push(0);
        for t in &tensors {
            for v in t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nul = bytes
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::Checkpoint("no header terminator".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nul]).map_err(|source| Error::Json {
            context: "checkpoint header".into(),
            source,
        })?;
        if header.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", header.format)));
        }
        if header.fingerprint != config_fingerprint(&header.model, &header.train) {
            return Err(Error::Checkpoint("config fingerprint does not match header".into()));
        }
        if header.model.classes != header.class_map.len() {
            return Err(Error::Checkpoint("class count disagrees with class map".into()));
        }
        let mut params = ModelParameters::<f32>::zeros(&header.model);
        let mut payload = &bytes[nul + 1..];
        {
            let slots = params.tensors_mut();
            if slots.len() != header.tensors.len() {
                return Err(Error::Checkpoint(format!(
                    "header lists {} tensors, model needs {}",
                    header.tensors.len(),
                    slots.len()
                )));
            }
            for (slot, entry) in slots.into_iter().zip(&header.tensors) {
                if slot.name != entry.name || slot.shape != entry.shape || slot.data.len() != entry.len {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} {:?} does not fit slot {} {:?}",
                        entry.name, entry.shape, slot.name, slot.shape
                    )));
                }
                let n = entry.len * 4;
                if payload.len() < n {
                    return Err(Error::Checkpoint(format!("payload truncated in {}", entry.name)));
                }
                for (v, chunk) in slot.data.iter_mut().zip(payload[..n].chunks_exact(4)) {
                    *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                }
                payload = &payload[n..];
            }
        }
        if !payload.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing payload bytes", payload.len())));
        }
        let mut train = header.train;
        train.seed = header.seed;
        Ok(Checkpoint {
            model: header.model,
            train,
            class_map: header.class_map,
            metadata_stats: header.metadata_stats,
            epoch: header.epoch,
            val_within5: header.val_within5,
            split_digest: header.split_digest,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, Variant};

    fn checkpoint(variant: Variant) -> Checkpoint {
        let class_map = SpeedClassMap::build(&[20, 35, 50, 65]).unwrap();
        let mut model = ModelConfig::new(variant, class_map.len());
        model.input_px = 16;
        model.hidden_dim = 12;
        Checkpoint {
            params: init_parameters(&model, 7).unwrap(),
            model,
            train: TrainConfig::default(),
            class_map,
            metadata_stats: MetadataStats {
                min: [0.0, 1.0, 15.0],
                max: [2.0, 5.0, 70.0],
            },
            epoch: 3,
            val_within5: 0.5,
            split_digest: "abc".into(),
        }
    }

    #[test]
    fn bytes_roundtrip() {
        for v in Variant::ALL {
            let c = checkpoint(v);
            assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn layout_is_header_nul_payload() {
        let c = checkpoint(Variant::FeaturesOnly);
        let bytes = c.to_bytes().unwrap();
        let nul = bytes.iter().position(|&b| b == 0).unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nul]).unwrap();
        let floats: usize = header["tensors"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["len"].as_u64().unwrap() as usize)
            .sum();
        assert_eq!(bytes.len() - nul - 1, 4 * floats);
        assert_eq!(header["tensors"][0]["name"], "meta_dense.weight");
        let first = f32::from_le_bytes(bytes[nul + 1..nul + 5].try_into().unwrap());
        assert_eq!(first, c.params.meta_dense.as_ref().unwrap().weight.data[0]);
    }

    #[test]
    fn corruption_detected() {
        let bytes = checkpoint(Variant::Combined).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let no_nul: Vec<u8> = bytes.iter().copied().filter(|&b| b != 0).take(50).collect();
        assert!(Checkpoint::from_bytes(&no_nul).is_err());
    }

    #[test]
    fn tampered_config_detected() {
        let bytes = checkpoint(Variant::Combined).to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == 0).unwrap()]).to_string();
        let tampered = text.replace("\"hidden_dim\":12", "\"hidden_dim\":13");
        assert_ne!(text, tampered);
        let mut b = tampered.into_bytes();
        b.extend_from_slice(&bytes[bytes.iter().position(|&b| b == 0).unwrap()..]);
        assert!(Checkpoint::from_bytes(&b).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = checkpoint(Variant::ImageryOnly);
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }
}
