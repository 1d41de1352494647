//! Versioned binary checkpoint format.
//!
//! Layout: `b"PNAV"` magic, `u32` version, `u64` manifest length, a JSON
//! manifest listing `(path, shape)` per parameter plus free-form metadata,
//! then the concatenated little-endian float64 payloads in manifest order.
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::param::ParamSet;

const MAGIC: &[u8; 4] = b"PNAV";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("payload truncated at parameter {0}")]
    Truncated(String),
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    params: Vec<ManifestEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(
    params: &ParamSet,
    meta: serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let manifest = ManifestFile {
        params: params
            .iter()
            .map(|(_, e)| ManifestEntry {
                path: e.path.clone(),
                shape: e.shape.clone(),
            })
            .collect(),
        meta,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, e) in params.iter() {
        for v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(ParamSet, serde_json::Value), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut l8 = [0u8; 8];
    r.read_exact(&mut l8)?;
    let manifest_len = u64::from_le_bytes(l8) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: ManifestFile = serde_json::from_slice(&manifest_bytes)?;

    let mut params = ParamSet::new();
    for entry in &manifest.params {
        let numel: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| CheckpointError::Truncated(entry.path.clone()))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.register(entry.path.clone(), &entry.shape, data);
    }
    Ok((params, manifest.meta))
}
