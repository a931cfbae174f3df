use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::jsonl::{read_json, write_json};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParam {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Versioned JSON snapshot of a model's parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub config_fingerprint: String,
    /// Model-specific settings needed to rebuild the architecture.
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<NamedParam>,
}

impl Checkpoint {
    pub fn from_store(
        model_kind: impl Into<String>,
        config_fingerprint: impl Into<String>,
        meta: serde_json::Value,
        store: &ParamStore,
    ) -> Self {
        let params = store
            .ids()
            .map(|(p, id)| {
                let v = store.value(p);
                NamedParam {
                    id: id.to_string(),
                    rows: v.rows(),
                    cols: v.cols(),
                    data: v.data().to_vec(),
                }
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model_kind: model_kind.into(),
            config_fingerprint: config_fingerprint.into(),
            meta,
            params,
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for p in &self.params {
            let m = Matrix::new_finite(p.rows, p.cols, p.data.clone())
                .map_err(|e| Error::format(format!("checkpoint param '{}'", p.id), e.to_string()))?;
            store.add(p.id.clone(), m);
        }
        Ok(store)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.model_kind != kind {
            return Err(Error::format(
                "checkpoint",
                format!("expected model kind '{kind}', found '{}'", self.model_kind),
            ));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_json(path, ck)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            format!("unsupported checkpoint version {}", ck.format_version),
        ));
    }
    Ok(ck)
}

/// Short content hash of any serializable configuration.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
