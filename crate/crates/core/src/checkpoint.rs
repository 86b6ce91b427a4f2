//! Model checkpoint container.
//!
//! Layout: magic bytes `OSLB`, format version (u32 LE), manifest byte length
//! (u64 LE), JSON manifest, then the raw parameter payload as little-endian
//! f64 buffers concatenated in manifest order. The manifest records each
//! tensor's name, shape, and byte offset into the payload plus a free-form
//! `meta` object for architecture hyperparameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"OSLB";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt manifest: {0}")]
    BadManifest(#[from] serde_json::Error),
    #[error("tensor {name}: payload truncated at offset {offset}")]
    Truncated { name: String, offset: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload region.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named parameter tensors plus architecture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut offset = 0u64;
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, shape, data)| {
                    let e = TensorEntry {
                        name: name.clone(),
                        shape: shape.clone(),
                        offset,
                    };
                    offset += (data.len() * 8) as u64;
                    e
                })
                .collect(),
        };
        let manifest_bytes = serde_json::to_vec(&manifest)?;

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&manifest_bytes)?;
        for (_, _, data) in &self.tensors {
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let mut long = [0u8; 8];
        r.read_exact(&mut long)?;
        let manifest_len = u64::from_le_bytes(long) as usize;
        let mut manifest_bytes = vec![0u8; manifest_len];
        r.read_exact(&mut manifest_bytes)?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 8;
            if end > payload.len() {
                return Err(CheckpointError::Truncated {
                    name: entry.name,
                    offset: entry.offset,
                });
            }
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect();
            tensors.push((entry.name, entry.shape, data));
        }

        Ok(Checkpoint {
            meta: manifest.meta,
            tensors,
        })
    }
}
