//! Checkpoint directory format: a JSON manifest plus one raw binary blob
//! per parameter matrix (little-endian f32, row-major). The manifest pins
//! parameter order, shapes, a content hash over all blob bytes, the model
//! config, and the seed the run used.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ParamSet;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    /// What the parameters belong to: "lm", "sentence_transformer", "generator".
    pub kind: String,
    /// The component's own configuration, embedded verbatim.
    pub config: serde_json::Value,
    pub seed: u64,
    pub params: Vec<ParamMeta>,
    /// SHA-256 over all blob bytes in manifest order.
    pub blob_hash: String,
}

fn blob_name(param_name: &str) -> String {
    format!("{param_name}.bin")
}

fn f32_bytes(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.len() * 4);
    for &x in m.iter() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

/// Write `params` as a checkpoint under `dir` (created if needed).
pub fn save_params(
    dir: &Path,
    kind: &str,
    config: serde_json::Value,
    seed: u64,
    params: &ParamSet,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut metas = Vec::with_capacity(params.len());
    let mut hasher = Sha256::new();
    for (name, value) in params.iter() {
        let bytes = f32_bytes(value);
        hasher.update(&bytes);
        let path = dir.join(blob_name(name));
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        metas.push(ParamMeta {
            name: name.to_string(),
            rows: value.nrows(),
            cols: value.ncols(),
        });
    }
    let manifest = CheckpointManifest {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        config,
        seed,
        params: metas,
        blob_hash: hex::encode(hasher.finalize()),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Load a checkpoint directory, verifying schema version, shapes, and the
/// blob hash.
pub fn load_params(dir: &Path) -> Result<(CheckpointManifest, ParamSet)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported schema version {} (expected {})",
            manifest.schema_version, SCHEMA_VERSION
        )));
    }

    let mut params = ParamSet::new();
    let mut hasher = Sha256::new();
    for meta in &manifest.params {
        let path = dir.join(blob_name(&meta.name));
        let mut f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).map_err(|e| Error::io(&path, e))?;
        let expected = meta.rows * meta.cols * 4;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "blob {} holds {} bytes, expected {expected}",
                path.display(),
                bytes.len()
            )));
        }
        hasher.update(&bytes);
        let mut values = Vec::with_capacity(meta.rows * meta.cols);
        for chunk in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            values.push(v as f64);
        }
        let arr = Array2::from_shape_vec((meta.rows, meta.cols), values)
            .map_err(|e| Error::Checkpoint(format!("blob {}: {e}", meta.name)))?;
        params.insert(&meta.name, arr);
    }
    let actual_hash = hex::encode(hasher.finalize());
    if actual_hash != manifest.blob_hash {
        return Err(Error::Checkpoint(format!(
            "blob hash mismatch: manifest says {}, bytes give {actual_hash}",
            manifest.blob_hash
        )));
    }
    Ok((manifest, params))
}

/// The manifest's blob hash without loading parameter data. Used to prove
/// that several evaluations really ran off one checkpoint.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    Ok(manifest.blob_hash)
}
