//! The optimization loop: batch assembly, the warmup schedule, per-step
//! loss logging, checkpointing, and iterated self-training on pseudo pairs.
//!
//! A step draws one labeled batch (imitation, plus contrastive and
//! self-supervised terms when enabled) and, when a pseudo-pair set is
//! present, one pseudo batch trained with the imitation loss only. All
//! sampling comes from a per-step seeded stream, so (config, datasets,
//! seed) fully determine the checkpoint bytes.

mod iterate;

pub use iterate::{round_seed, self_train_iterate, IterateError, RoundArtifacts};

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DemoDataset, Trajectory};
use crate::env::{EnvConfig, EnvKind};
use crate::loss::{self, ImitationPair, LossError};
use crate::nn::{EncoderVariant, Model, ModelConfig, NnError};
use crate::pseudo::PseudoPairSet;
use crate::seed;
use crate::tensor::adam::Adam;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("labeled set is empty")]
    EmptyLabeled,
    #[error("pseudo-pair set covers {pairs} pool rows but the pool has {pool}")]
    PseudoMismatch { pairs: usize, pool: usize },
    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize, last_good: Option<PathBuf> },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a training run depends on. Two runs with equal configs and
/// datasets produce byte-identical checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub encoder: EncoderVariant,
    pub label_fraction: f64,
    pub use_contrastive: bool,
    pub use_selfsup: bool,
    pub weight_contrastive: f64,
    pub weight_selfsup: f64,
    pub weight_pseudo: f64,
    pub tau: f64,
    pub lr: f64,
    pub warmup: usize,
    pub iterations: usize,
    /// Imitation pairs per batch (labeled and pseudo batches alike).
    pub batch_size: usize,
    /// Tasks per contrastive batch; each contributes two demos.
    pub contrastive_tasks: usize,
    /// Action timesteps sampled per imitation pair; 0 means every timestep.
    pub timesteps_per_pair: usize,
    /// Final frames per self-supervised batch.
    pub selfsup_frames: usize,
    /// Demo-frame subsampling stride for task encoding.
    pub token_stride: usize,
    pub frame_stack: usize,
    pub seed: u64,
    /// Snapshot every this many steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Full-scale settings: 200k iterations with warmup for SemanticNav,
    /// 60k for PinPad, batch 32, every timestep of every sampled pair.
    pub fn paper(kind: EnvKind) -> Self {
        let common = |env: EnvConfig, encoder, lr, warmup, iterations, frame_stack, token_stride| Self {
            env,
            encoder,
            label_fraction: 1.0,
            use_contrastive: false,
            use_selfsup: false,
            weight_contrastive: 10.0,
            weight_selfsup: 0.05,
            weight_pseudo: 0.5,
            tau: 0.1,
            lr,
            warmup,
            iterations,
            batch_size: 32,
            contrastive_tasks: 16,
            timesteps_per_pair: 0,
            selfsup_frames: 32,
            token_stride,
            frame_stack,
            seed: 0,
            checkpoint_every: 10_000,
        };
        match kind {
            EnvKind::SemanticNav => common(
                EnvConfig::default_for(kind),
                EncoderVariant::FinalFrame,
                1e-3,
                4000,
                200_000,
                2,
                1,
            ),
            EnvKind::PinPad => common(
                EnvConfig::default_for(kind),
                EncoderVariant::Transformer,
                3e-4,
                0,
                60_000,
                1,
                4,
            ),
        }
    }

    /// Workstation-scale settings: 20k/10k iterations and small batch
    /// knobs, sized so a full experiment finishes in tens of minutes on
    /// one core while preserving every qualitative effect.
    pub fn desk(kind: EnvKind) -> Self {
        let mut cfg = Self::paper(kind);
        match kind {
            EnvKind::SemanticNav => {
                cfg.iterations = 20_000;
                cfg.warmup = 2000;
                cfg.batch_size = 3;
                cfg.contrastive_tasks = 5;
                cfg.timesteps_per_pair = 2;
                cfg.selfsup_frames = 4;
                cfg.checkpoint_every = 5000;
            }
            EnvKind::PinPad => {
                cfg.iterations = 10_000;
                cfg.batch_size = 4;
                cfg.contrastive_tasks = 6;
                cfg.timesteps_per_pair = 2;
                cfg.checkpoint_every = 2500;
            }
        }
        cfg
    }

    pub fn model_config(&self) -> ModelConfig {
        let (h, _) = self.env.image_hw();
        ModelConfig {
            kind: self.env.kind(),
            encoder: self.encoder,
            frame_stack: self.frame_stack,
            embed_dim: 64,
            max_demo_len: 101,
            image_size: h,
            selfsup_head: self.use_selfsup,
        }
    }

    /// Stable short identifier for artifact naming and provenance.
    pub fn id(&self) -> String {
        crate::hash::short_hash(self)
    }
}

/// Names of the fields on which two configs differ. Teacher and student
/// runs must differ only in `seed` (the pseudo set is passed separately);
/// callers assert that with this diff.
pub fn config_delta(a: &TrainConfig, b: &TrainConfig) -> Vec<&'static str> {
    let mut d = Vec::new();
    macro_rules! cmp {
        ($($field:ident),+ $(,)?) => {
            $(if a.$field != b.$field { d.push(stringify!($field)); })+
        };
    }
    cmp!(
        env,
        encoder,
        label_fraction,
        use_contrastive,
        use_selfsup,
        weight_contrastive,
        weight_selfsup,
        weight_pseudo,
        tau,
        lr,
        warmup,
        iterations,
        batch_size,
        contrastive_tasks,
        timesteps_per_pair,
        selfsup_frames,
        token_stride,
        frame_stack,
        seed,
        checkpoint_every,
    );
    d
}

/// Linear warmup from zero to `lr`, then constant.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.warmup == 0 {
        return cfg.lr;
    }
    cfg.lr * (step as f64 / cfg.warmup as f64).min(1.0)
}

/// One row of the per-step loss log. Disabled or skipped terms log 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub loss_im: f64,
    pub loss_con: f64,
    pub loss_ss: f64,
    pub loss_pseudo: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub final_checkpoint: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub loss_log: Vec<LossRow>,
    /// Contrastive pairs dropped because a sampled task had one labeled demo.
    pub dropped_contrastive_pairs: usize,
    /// Imitation pairs where conditioning and target are the same demo
    /// because the task had a single labeled demo.
    pub self_paired: usize,
}

fn pick_timesteps(len: usize, per_pair: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(len > 0, "a demo always has at least one action");
    if per_pair == 0 || per_pair >= len {
        return (0..len).collect();
    }
    let mut idx = rand::seq::index::sample(rng, len, per_pair).into_vec();
    idx.sort_unstable();
    idx
}

fn sample_labeled_pairs<'a>(
    dataset: &'a DemoDataset,
    tasks: &[&Vec<usize>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    self_paired: &mut usize,
) -> Vec<ImitationPair<'a>> {
    (0..cfg.batch_size)
        .map(|_| {
            let demos = tasks[rng.random_range(0..tasks.len())];
            let (a, b) = if demos.len() == 1 {
                *self_paired += 1;
                (0, 0)
            } else {
                let a = rng.random_range(0..demos.len());
                let mut b = rng.random_range(0..demos.len() - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            };
            let cond = dataset.demo(demos[a]);
            let target = dataset.demo(demos[b]);
            let timesteps = pick_timesteps(target.actions.len(), cfg.timesteps_per_pair, rng);
            ImitationPair { cond, target, timesteps }
        })
        .collect()
}

fn sample_contrastive<'a>(
    dataset: &'a DemoDataset,
    tasks: &[&Vec<usize>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    dropped: &mut usize,
) -> Vec<&'a Trajectory> {
    let b = cfg.contrastive_tasks.min(tasks.len());
    let chosen = rand::seq::index::sample(rng, tasks.len(), b);
    let mut out = Vec::with_capacity(2 * b);
    for ti in chosen {
        let demos = tasks[ti];
        if demos.len() < 2 {
            *dropped += 1;
            continue;
        }
        let pick = rand::seq::index::sample(rng, demos.len(), 2);
        out.push(dataset.demo(demos[pick.index(0)]));
        out.push(dataset.demo(demos[pick.index(1)]));
    }
    out
}

fn sample_pseudo_pairs<'a>(
    dataset: &'a DemoDataset,
    pairs: &PseudoPairSet,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<ImitationPair<'a>> {
    (0..cfg.batch_size)
        .map(|_| {
            let anchor = rng.random_range(0..pairs.n);
            let neighbors = pairs.neighbors_of(anchor);
            let j = neighbors[rng.random_range(0..neighbors.len())] as usize;
            // Directional: the anchor conditions the policy, the retrieved
            // neighbor is imitated.
            let cond = dataset.demo(dataset.unlabeled[anchor]);
            let target = dataset.demo(dataset.unlabeled[j]);
            let timesteps = pick_timesteps(target.actions.len(), cfg.timesteps_per_pair, rng);
            ImitationPair { cond, target, timesteps }
        })
        .collect()
}

/// Run the optimization loop and write `loss.csv`, periodic snapshots, and
/// `final.oslb` into `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    dataset: &DemoDataset,
    pseudo: Option<&PseudoPairSet>,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    if dataset.labeled_count() == 0 {
        return Err(TrainError::EmptyLabeled);
    }
    assert_eq!(dataset.set.cfg.kind(), cfg.env.kind(), "dataset/config environment mismatch");
    if let Some(p) = pseudo {
        if p.n != dataset.unlabeled.len() {
            return Err(TrainError::PseudoMismatch { pairs: p.n, pool: dataset.unlabeled.len() });
        }
    }

    std::fs::create_dir_all(out_dir)?;
    let mut model = Model::new(cfg.model_config(), seed::derive(cfg.seed, &[seed::tag("init")]));
    let mut adam = Adam::new(&model.params.sizes());
    let mut csv = BufWriter::new(File::create(out_dir.join("loss.csv"))?);
    writeln!(csv, "step,loss_im,loss_con,loss_ss,loss_pseudo,lr")?;

    let tasks: Vec<&Vec<usize>> = dataset.labeled.values().collect();
    let selfsup_on = cfg.use_selfsup && dataset.unlabeled.len() >= 2;
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut snapshots = Vec::new();
    let mut last_good = None;
    let mut dropped = 0;
    let mut self_paired = 0;

    for step in 1..=cfg.iterations {
        let mut rng = seed::rng(cfg.seed, &[seed::tag("train-step"), step as u64]);
        let im_pairs = sample_labeled_pairs(dataset, &tasks, cfg, &mut rng, &mut self_paired);
        let con_demos = if cfg.use_contrastive {
            sample_contrastive(dataset, &tasks, cfg, &mut rng, &mut dropped)
        } else {
            Vec::new()
        };
        let ss_frames: Vec<&crate::env::Image> = if selfsup_on {
            rand::seq::index::sample(&mut rng, dataset.unlabeled.len(), cfg.selfsup_frames.min(dataset.unlabeled.len()))
                .iter()
                .map(|i| dataset.demo(dataset.unlabeled[i]).frames.last().expect("demo has frames"))
                .collect()
        } else {
            Vec::new()
        };
        let ps_pairs = pseudo.map(|p| sample_pseudo_pairs(dataset, p, cfg, &mut rng));

        let mut f = model.forward(true);
        let lim = loss::loss_imitation(&mut f, &im_pairs, cfg.token_stride)?;
        let mut row = LossRow {
            step,
            loss_im: f.g.scalar(lim),
            loss_con: 0.0,
            loss_ss: 0.0,
            loss_pseudo: 0.0,
            lr: lr_at(step, cfg),
        };
        let mut total = lim;
        if let Some(pairs) = &ps_pairs {
            let lps = loss::loss_imitation(&mut f, pairs, cfg.token_stride)?;
            row.loss_pseudo = f.g.scalar(lps);
            let w = f.g.affine(lps, cfg.weight_pseudo, 0.0);
            total = f.g.add(total, w).expect("scalars add");
        }
        // A batch can lose its contrastive term entirely when every sampled
        // task had a single labeled demo; the step then trains without it.
        if con_demos.len() >= 4 {
            let lcon = loss::loss_contrastive(&mut f, &con_demos, cfg.tau, cfg.token_stride)?;
            row.loss_con = f.g.scalar(lcon);
            let w = f.g.affine(lcon, cfg.weight_contrastive, 0.0);
            total = f.g.add(total, w).expect("scalars add");
        }
        if ss_frames.len() >= 2 {
            let aug_seed = seed::derive(cfg.seed, &[seed::tag("selfsup-aug"), step as u64]);
            let lss = loss::loss_selfsup(&mut f, &ss_frames, cfg.tau, aug_seed)?;
            row.loss_ss = f.g.scalar(lss);
            let w = f.g.affine(lss, cfg.weight_selfsup, 0.0);
            total = f.g.add(total, w).expect("scalars add");
        }

        if !f.g.scalar(total).is_finite() {
            csv.flush()?;
            return Err(TrainError::NonFinite { step, last_good });
        }
        let grads = f.backward_grads(total);
        drop(f);
        adam.step_slices(
            model.params.entries_mut().iter_mut().map(|p| p.data.as_mut_slice()),
            &grads,
            row.lr,
        );

        writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.step, row.loss_im, row.loss_con, row.loss_ss, row.loss_pseudo, row.lr
        )?;
        log.push(row);

        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.iterations {
            let path = out_dir.join(format!("step_{step:07}.oslb"));
            model.save(&path)?;
            snapshots.push(path.clone());
            last_good = Some(path);
        }
    }

    csv.flush()?;
    let final_checkpoint = out_dir.join("final.oslb");
    model.save(&final_checkpoint)?;
    Ok(TrainOutcome {
        model,
        final_checkpoint,
        snapshots,
        loss_log: log,
        dropped_contrastive_pairs: dropped,
        self_paired,
    })
}
