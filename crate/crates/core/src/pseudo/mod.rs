//! Pseudo-pair construction over the unlabeled demonstration pool: embed
//! every trajectory with a trained task encoder, take exact nearest
//! neighbors in raw (unnormalized) L2, and persist the result.
//!
//! Retrieval deliberately uses raw L2 while the training objective uses
//! cosine similarity; the two metrics are independent design points and
//! must not be conflated.
//!
//! File layouts put a single JSON header line before a raw little-endian
//! payload: u32 neighbor indices for pair sets, f64 rows for embedding
//! dumps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Trajectory;
use crate::env::Image;
use crate::nn::{EncoderVariant, Model};

#[derive(Debug, Error)]
pub enum PseudoError {
    #[error("unlabeled pool is empty")]
    EmptyPool,
    #[error("k={k} out of range; need 1 <= k <= {max} for a pool of {n}")]
    KOutOfRange { k: usize, n: usize, max: usize },
    #[error("embedding row {0} is not finite")]
    NonFinite(usize),
    #[error("pool trajectory {0} does not match the encoder's environment")]
    KindMismatch(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file header: {0}")]
    BadHeader(String),
    #[error("payload length does not match header")]
    Truncated,
}

/// Identifies which encoder produced an embedding or pair set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Content identifier for the encoder weights (checkpoint hash or tag).
    pub checkpoint: String,
    pub encoder: EncoderVariant,
    /// Demo-frame subsampling stride used when embedding.
    pub token_stride: usize,
}

/// Row i is the task embedding of unlabeled-pool trajectory i.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub n: usize,
    pub d: usize,
    /// Row-major, n*d values, all finite.
    pub rows: Vec<f64>,
    pub provenance: Provenance,
}

impl EmbeddingMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn save(&self, path: &Path) -> Result<(), PseudoError> {
        let header = EmbedHeader {
            n: self.n,
            d: self.d,
            provenance: self.provenance.clone(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &header).map_err(|e| PseudoError::BadHeader(e.to_string()))?;
        w.write_all(b"\n")?;
        for v in &self.rows {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PseudoError> {
        let mut r = BufReader::new(File::open(path)?);
        let header: EmbedHeader = read_header(&mut r)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != header.n * header.d * 8 {
            return Err(PseudoError::Truncated);
        }
        let rows: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { n: header.n, d: header.d, rows, provenance: header.provenance })
    }
}

#[derive(Serialize, Deserialize)]
struct EmbedHeader {
    n: usize,
    d: usize,
    provenance: Provenance,
}

/// For each pool trajectory, its k nearest pool neighbors in ascending
/// distance order. Pairs are directional: the anchor conditions the policy
/// and the neighbor is imitated.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPairSet {
    pub k: usize,
    pub n: usize,
    /// Row-major, n*k neighbor indices.
    pub neighbors: Vec<u32>,
    pub provenance: Provenance,
}

impl PseudoPairSet {
    pub fn neighbors_of(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn save(&self, path: &Path) -> Result<(), PseudoError> {
        let header = PairHeader {
            k: self.k,
            n: self.n,
            provenance: self.provenance.clone(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &header).map_err(|e| PseudoError::BadHeader(e.to_string()))?;
        w.write_all(b"\n")?;
        for v in &self.neighbors {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PseudoError> {
        let mut r = BufReader::new(File::open(path)?);
        let header: PairHeader = read_header(&mut r)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != header.n * header.k * 4 {
            return Err(PseudoError::Truncated);
        }
        let neighbors: Vec<u32> = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { k: header.k, n: header.n, neighbors, provenance: header.provenance })
    }
}

#[derive(Serialize, Deserialize)]
struct PairHeader {
    k: usize,
    n: usize,
    provenance: Provenance,
}

fn read_header<T: for<'de> Deserialize<'de>>(r: &mut BufReader<File>) -> Result<T, PseudoError> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(PseudoError::BadHeader("missing newline after header".into()));
    }
    line.pop();
    serde_json::from_slice(&line).map_err(|e| PseudoError::BadHeader(e.to_string()))
}

/// Embed every pool trajectory with the model's task encoder. Row order
/// follows pool order; every row must come out finite.
pub fn embed_pool(
    model: &Model,
    pool: &[&Trajectory],
    token_stride: usize,
    checkpoint_id: &str,
) -> Result<EmbeddingMatrix, PseudoError> {
    if pool.is_empty() {
        return Err(PseudoError::EmptyPool);
    }
    for (i, t) in pool.iter().enumerate() {
        if t.kind() != model.cfg.kind {
            return Err(PseudoError::KindMismatch(i));
        }
    }
    let demos: Vec<Vec<&Image>> = pool.iter().map(|t| t.frames.iter().collect()).collect();
    let rows_nested = model.encode_tasks_host(&demos, token_stride);
    let d = model.cfg.embed_dim;
    let mut rows = Vec::with_capacity(pool.len() * d);
    for (i, row) in rows_nested.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(PseudoError::NonFinite(i));
        }
        rows.extend_from_slice(row);
    }
    Ok(EmbeddingMatrix {
        n: pool.len(),
        d,
        rows,
        provenance: Provenance {
            checkpoint: checkpoint_id.to_string(),
            encoder: model.cfg.encoder,
            token_stride,
        },
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact k nearest neighbors of row `i` by L2 distance, self excluded,
/// ties broken toward the lower index. Uses a partial selection rather
/// than a full sort; the full-sort formulation serves as its test oracle.
pub fn knn(m: &EmbeddingMatrix, i: usize, k: usize) -> Result<Vec<u32>, PseudoError> {
    let n = m.n;
    assert!(i < n, "anchor index {i} out of range");
    if k < 1 || k > n - 1 {
        return Err(PseudoError::KOutOfRange { k, n, max: n - 1 });
    }
    let anchor = m.row(i);
    let mut cand: Vec<(f64, u32)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| (dist2(anchor, m.row(j)), j as u32))
        .collect();
    let by_dist_then_index =
        |a: &(f64, u32), b: &(f64, u32)| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_dist_then_index);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_dist_then_index);
    Ok(cand.into_iter().map(|(_, j)| j).collect())
}

/// Run [`knn`] for every row and bundle the result with the matrix's
/// provenance.
pub fn build_pseudo_pairs(m: &EmbeddingMatrix, k: usize) -> Result<PseudoPairSet, PseudoError> {
    let mut neighbors = Vec::with_capacity(m.n * k);
    for i in 0..m.n {
        neighbors.extend_from_slice(&knn(m, i, k)?);
    }
    Ok(PseudoPairSet { k, n: m.n, neighbors, provenance: m.provenance.clone() })
}
