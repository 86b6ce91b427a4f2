//! Iterated self-training: the round-1 teacher trains on labels alone;
//! every later round embeds the unlabeled pool with the previous round's
//! encoder, rebuilds pseudo pairs, and trains a fresh student on labels
//! plus pseudo pairs.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{DemoDataset, Trajectory};
use crate::nn::Model;
use crate::pseudo::{build_pseudo_pairs, embed_pool, PseudoError, PseudoPairSet};
use crate::seed;

use super::{config_delta, train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum IterateError {
    #[error("self-training needs at least one round")]
    NoRounds,
    #[error("round {round} failed after {} completed round(s): {source}", completed.len())]
    Failed {
        round: usize,
        /// Rounds that finished before the failure; their artifacts stay
        /// on disk for inspection and resumption.
        completed: Vec<RoundArtifacts>,
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundArtifacts {
    pub round: usize,
    pub checkpoint: PathBuf,
    /// Absent for round 1, which has no pseudo supervision.
    pub pairs: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

/// The student seed for a self-training round. Round 1 is the teacher
/// itself; later rounds re-derive a fresh seed from the teacher's so that
/// staged pipelines and [`self_train_iterate`] agree bit for bit.
pub fn round_seed(teacher_seed: u64, round: usize) -> u64 {
    if round <= 1 {
        teacher_seed
    } else {
        seed::derive(teacher_seed, &[seed::tag("round"), round as u64])
    }
}

/// Run `rounds` rounds of self-training under `out_dir/round_<r>/`. The
/// student config of every round equals the teacher config except for its
/// seed, which is re-derived per round.
pub fn self_train_iterate(
    teacher: &TrainConfig,
    dataset: &DemoDataset,
    k: usize,
    rounds: usize,
    out_dir: &Path,
) -> Result<Vec<RoundArtifacts>, IterateError> {
    if rounds < 1 {
        return Err(IterateError::NoRounds);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut completed: Vec<RoundArtifacts> = Vec::new();
    let mut prev_model: Option<Model> = None;
    for round in 1..=rounds {
        let dir = out_dir.join(format!("round_{round}"));
        std::fs::create_dir_all(&dir)?;

        let mut cfg = teacher.clone();
        let mut pairs: Option<PseudoPairSet> = None;
        let mut pairs_path = None;
        let mut emb_path = None;
        if round > 1 {
            cfg.seed = round_seed(teacher.seed, round);
            assert_eq!(
                config_delta(teacher, &cfg),
                vec!["seed"],
                "student must differ from the teacher only in seed"
            );
            let encoder = prev_model.as_ref().expect("a prior round always completed");
            let pool: Vec<&Trajectory> =
                dataset.unlabeled.iter().map(|&i| dataset.demo(i)).collect();
            let id = format!("{}-round{}", teacher.id(), round - 1);
            let matrix = embed_pool(encoder, &pool, cfg.token_stride, &id)?;
            let ep = dir.join("embeddings.bin");
            matrix.save(&ep)?;
            let set = build_pseudo_pairs(&matrix, k)?;
            let pp = dir.join("pairs.bin");
            set.save(&pp)?;
            emb_path = Some(ep);
            pairs_path = Some(pp);
            pairs = Some(set);
        }

        match train(&cfg, dataset, pairs.as_ref(), &dir) {
            Ok(outcome) => {
                completed.push(RoundArtifacts {
                    round,
                    checkpoint: outcome.final_checkpoint.clone(),
                    pairs: pairs_path,
                    embeddings: emb_path,
                });
                prev_model = Some(outcome.model);
            }
            Err(e) => {
                return Err(IterateError::Failed { round, completed, source: Box::new(e) });
            }
        }
    }
    Ok(completed)
}
