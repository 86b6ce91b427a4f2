//! Core library for a semi-supervised one-shot imitation learning lab.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`]: dense f64 tensors with reverse-mode autodiff on a
//!   define-by-run tape, plus the Adam optimizer and gradient-check helpers.
//! - [`nn`]: the concrete networks — a 5-layer CNN frame encoder, a
//!   final-frame or bidirectional-transformer task encoder, and a
//!   FiLM-conditioned MLP policy.
//! - [`env`]: two deterministic pixel environments (semantic goal navigation
//!   and sequential pad pressing) with success predicates.
//! - [`data`]: scripted experts, demonstration collection, labeled/unlabeled
//!   splits, the on-disk dataset container, and image augmentations.
//! - [`loss`]: imitation, paired-demo InfoNCE, and augmentation-based
//!   self-supervised contrastive objectives.
//! - [`train`]: the optimization loop with warmup schedule, loss logging,
//!   and checkpointing.
//! - [`pseudo`]: teacher-encoder embedding of the unlabeled pool, exact kNN
//!   retrieval, pseudo-pair construction, and iterated self-training.
//! - [`metrics`]: rollout success evaluation and the trajectory-retrieval
//!   score.
//!
//! Everything is deterministic given a seed: identical configs reproduce
//! checkpoints and reports byte for byte.

pub mod checkpoint;
pub mod data;
pub mod env;
pub mod hash;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pseudo;
pub mod seed;
pub mod tensor;
pub mod train;
