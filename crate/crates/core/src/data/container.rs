//! Single-file dataset container.
//!
//! Layout: `b"OSLD"` magic, u32 LE version, u64 LE header length, JSON
//! header, concatenated raw frame bytes, then action arrays (little-endian
//! f64 pairs for continuous actions, one u8 per discrete action). The
//! header records per-trajectory byte offsets, so readers can seek; the
//! writer streams without buffering the blobs.

use super::{DataError, DemoSet, Trajectory};
use crate::env::{Action, EnvConfig, EnvKind, Image};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"OSLD";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    env: EnvConfig,
    image: [usize; 2],
    frames_bytes: u64,
    actions_bytes: u64,
    trajectories: Vec<TrajEntry>,
}

#[derive(Serialize, Deserialize)]
struct TrajEntry {
    task: crate::env::TaskSpec,
    seed: u64,
    frames_at: u64,
    frame_count: u32,
    actions_at: u64,
}

fn action_stride(kind: EnvKind) -> u64 {
    match kind {
        EnvKind::SemanticNav => 16,
        EnvKind::PinPad => 1,
    }
}

pub fn write_dataset(path: &Path, set: &DemoSet) -> Result<(), DataError> {
    let (h, w) = set.cfg.image_hw();
    let frame_bytes = (h * w * 3) as u64;
    let stride = action_stride(set.cfg.kind());

    let mut entries = Vec::with_capacity(set.demos.len());
    let mut frames_at = 0u64;
    let mut actions_at = 0u64;
    for demo in &set.demos {
        if demo.actions.len() + 1 != demo.frames.len() {
            return Err(DataError::Format(format!(
                "trajectory has {} frames but {} actions",
                demo.frames.len(),
                demo.actions.len()
            )));
        }
        entries.push(TrajEntry {
            task: demo.task,
            seed: demo.seed,
            frames_at,
            frame_count: demo.frames.len() as u32,
            actions_at,
        });
        frames_at += frame_bytes * demo.frames.len() as u64;
        actions_at += stride * demo.actions.len() as u64;
    }
    let header = Header {
        env: set.cfg.clone(),
        image: [h, w],
        frames_bytes: frames_at,
        actions_bytes: actions_at,
        trajectories: entries,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| DataError::Format(e.to_string()))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header_json.len() as u64).to_le_bytes())?;
    out.write_all(&header_json)?;
    for demo in &set.demos {
        for frame in &demo.frames {
            if (frame.h, frame.w) != (h, w) {
                return Err(DataError::Format(format!(
                    "frame is {}x{} but the dataset is {h}x{w}",
                    frame.h, frame.w
                )));
            }
            out.write_all(&frame.rgb)?;
        }
    }
    for demo in &set.demos {
        for action in &demo.actions {
            match action {
                Action::Nav(a) => {
                    out.write_all(&a[0].to_le_bytes())?;
                    out.write_all(&a[1].to_le_bytes())?;
                }
                Action::Pad(a) => out.write_all(&[*a])?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<DemoSet, DataError> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {magic:?}; not a dataset container"
        )));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(DataError::Format(format!("unsupported version {version}")));
    }
    let mut len8 = [0u8; 8];
    input.read_exact(&mut len8)?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_json = vec![0u8; header_len];
    input.read_exact(&mut header_json)?;
    let header: Header =
        serde_json::from_slice(&header_json).map_err(|e| DataError::Format(e.to_string()))?;

    let [h, w] = header.image;
    let frame_bytes = h * w * 3;
    let kind = header.env.kind();
    let stride = action_stride(kind) as usize;

    // Trajectory blobs are contiguous and ordered, so a sequential read
    // suffices; offsets are still validated against the running position.
    let mut demos = Vec::with_capacity(header.trajectories.len());
    let mut pos = 0u64;
    for entry in &header.trajectories {
        if entry.frames_at != pos {
            return Err(DataError::Format(format!(
                "frame offset {} does not match stream position {pos}",
                entry.frames_at
            )));
        }
        let mut frames = Vec::with_capacity(entry.frame_count as usize);
        for _ in 0..entry.frame_count {
            let mut rgb = vec![0u8; frame_bytes];
            input.read_exact(&mut rgb)?;
            frames.push(Image { h, w, rgb });
        }
        pos += (frame_bytes as u64) * entry.frame_count as u64;
        demos.push(Trajectory { task: entry.task, seed: entry.seed, frames, actions: Vec::new() });
    }
    if pos != header.frames_bytes {
        return Err(DataError::Format("frame blob length mismatch".into()));
    }
    let mut pos = 0u64;
    for (demo, entry) in demos.iter_mut().zip(&header.trajectories) {
        if entry.actions_at != pos {
            return Err(DataError::Format(format!(
                "action offset {} does not match stream position {pos}",
                entry.actions_at
            )));
        }
        let count = entry.frame_count as usize - 1;
        let mut buf = vec![0u8; count * stride];
        input.read_exact(&mut buf)?;
        demo.actions = match kind {
            EnvKind::SemanticNav => buf
                .chunks_exact(16)
                .map(|c| {
                    Action::Nav([
                        f64::from_le_bytes(c[0..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..16].try_into().unwrap()),
                    ])
                })
                .collect(),
            EnvKind::PinPad => buf.iter().map(|&a| Action::Pad(a)).collect(),
        };
        pos += (count * stride) as u64;
    }
    if pos != header.actions_bytes {
        return Err(DataError::Format("action blob length mismatch".into()));
    }
    Ok(DemoSet { cfg: header.env, demos })
}
