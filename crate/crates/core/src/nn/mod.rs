//! Model architecture: shared CNN frame encoder, task encoder (final-frame
//! or bidirectional transformer), and a FiLM-conditioned MLP policy.
//!
//! Every pathway consumes the same stacked-frame input format: `stack`
//! consecutive frames concatenated along channels, earliest first, with the
//! first frame duplicated at the start of an episode. The frame encoder is
//! fully shared between the policy's state pathway and the task encoder's
//! token pathway.

pub mod forward;
pub mod lipschitz;

pub use forward::{DemoTokens, Forward};

use crate::checkpoint::Checkpoint;
use crate::env::{EnvKind, Image};
use crate::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("checkpoint does not contain a model config: {0}")]
    BadMeta(String),
    #[error("checkpoint tensor {name} has shape {got:?}, expected {want:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, want: Vec<usize> },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderVariant {
    /// z is the embedding of the demo's final stacked frame.
    FinalFrame,
    /// z is a class-token readout over all (subsampled) frame tokens.
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: EnvKind,
    pub encoder: EncoderVariant,
    pub frame_stack: usize,
    /// Embedding width D; must be divisible by the attention head count.
    pub embed_dim: usize,
    /// Rows in the learned positional table; one per possible frame index,
    /// so horizon + 1.
    pub max_demo_len: usize,
    /// Square input resolution the conv stack is laid out for.
    pub image_size: usize,
    /// When set, the parameter set includes the self-supervised projection
    /// head used by the augmentation contrastive loss.
    pub selfsup_head: bool,
}

pub const HEADS: usize = 2;
pub const TRANSFORMER_LAYERS: usize = 2;
pub const FILM_BLOCKS: usize = 3;
pub const POLICY_WIDTH: usize = 128;
pub const CONV_CHANNELS: [usize; 5] = [16, 32, 32, 64, 64];
/// LayerNorm epsilon, small enough that normalized rows have variance
/// within 1e-8 of one.
pub const LN_EPS: f64 = 1e-10;

impl ModelConfig {
    pub fn defaults(kind: EnvKind) -> Self {
        match kind {
            EnvKind::SemanticNav => Self {
                kind,
                encoder: EncoderVariant::FinalFrame,
                frame_stack: 2,
                embed_dim: 64,
                max_demo_len: 101,
                image_size: 64,
                selfsup_head: false,
            },
            EnvKind::PinPad => Self {
                kind,
                encoder: EncoderVariant::Transformer,
                frame_stack: 1,
                embed_dim: 64,
                max_demo_len: 101,
                image_size: 16,
                selfsup_head: false,
            },
        }
    }

    /// Conv strides: downsample to a 4x4 grid regardless of input size.
    pub fn strides(&self) -> [usize; 5] {
        match self.image_size {
            64 => [2, 2, 2, 2, 1],
            16 => [2, 2, 1, 1, 1],
            other => panic!("no conv plan for {other}x{other} inputs"),
        }
    }

    pub fn in_channels(&self) -> usize {
        3 * self.frame_stack
    }

    /// Flattened width of the final 4x4 conv feature map.
    pub fn flat_width(&self) -> usize {
        4 * 4 * CONV_CHANNELS[4]
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::SemanticNav => 2,
            EnvKind::PinPad => 5,
        }
    }

    pub fn ff_width(&self) -> usize {
        4 * self.embed_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered, named parameter store. Entry order is the canonical order for
/// optimizer state and gradient vectors, and it is fixed by construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "{name}");
        assert!(
            self.index.insert(name.to_string(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push(Param { name: name.to_string(), shape, data });
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Param {
        &self.entries[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        let i = self.index[name];
        &mut self.entries[i]
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.entries.iter().map(|p| p.data.len()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    /// Fresh-initialized model. Weights use uniform fan-in scaling (He
    /// bound before ReLU/GELU, Xavier bound otherwise); class token and
    /// positional embeddings are N(0, 0.02^2); biases are zero except the
    /// FiLM scale half, which starts at one so every block begins as a
    /// plain hidden layer.
    pub fn new(cfg: ModelConfig, init_seed: u64) -> Self {
        assert_eq!(cfg.embed_dim % HEADS, 0, "embedding width must split across heads");
        let mut rng = seed::rng(init_seed, &[seed::tag("init")]);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let mut p = ParamSet::default();

        let he = |rng: &mut _, fan_in: usize, n: usize| uniform(rng, (6.0 / fan_in as f64).sqrt(), n);
        let xavier = |rng: &mut _, fan_in: usize, n: usize| uniform(rng, (3.0 / fan_in as f64).sqrt(), n);

        let d = cfg.embed_dim;
        let mut c_in = cfg.in_channels();
        for (i, &c_out) in CONV_CHANNELS.iter().enumerate() {
            let fan = c_in * 9;
            p.add(&format!("conv{}.w", i + 1), vec![c_out, c_in, 3, 3], he(&mut rng, fan, c_out * fan));
            p.add(&format!("conv{}.b", i + 1), vec![c_out], vec![0.0; c_out]);
            c_in = c_out;
        }
        let flat = cfg.flat_width();
        p.add("proj.w", vec![d, flat], xavier(&mut rng, flat, d * flat));
        p.add("proj.b", vec![d], vec![0.0; d]);

        if cfg.encoder == EncoderVariant::Transformer {
            p.add("task.token_proj.w", vec![d, d], xavier(&mut rng, d, d * d));
            p.add("task.token_proj.b", vec![d], vec![0.0; d]);
            let pos: Vec<f64> = (0..cfg.max_demo_len * d).map(|_| normal.sample(&mut rng)).collect();
            p.add("task.pos", vec![cfg.max_demo_len, d], pos);
            let cls: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
            p.add("task.cls", vec![1, d], cls);
            for l in 0..TRANSFORMER_LAYERS {
                let pre = format!("task.l{l}");
                p.add(&format!("{pre}.ln1.g"), vec![d], vec![1.0; d]);
                p.add(&format!("{pre}.ln1.b"), vec![d], vec![0.0; d]);
                for name in ["wq", "wk", "wv", "wo"] {
                    p.add(&format!("{pre}.{name}"), vec![d, d], xavier(&mut rng, d, d * d));
                    p.add(&format!("{pre}.b{}", &name[1..]), vec![d], vec![0.0; d]);
                }
                p.add(&format!("{pre}.ln2.g"), vec![d], vec![1.0; d]);
                p.add(&format!("{pre}.ln2.b"), vec![d], vec![0.0; d]);
                let ff = cfg.ff_width();
                p.add(&format!("{pre}.ff1.w"), vec![ff, d], he(&mut rng, d, ff * d));
                p.add(&format!("{pre}.ff1.b"), vec![ff], vec![0.0; ff]);
                p.add(&format!("{pre}.ff2.w"), vec![d, ff], xavier(&mut rng, ff, d * ff));
                p.add(&format!("{pre}.ff2.b"), vec![d], vec![0.0; d]);
            }
            p.add("task.ln_out.g", vec![d], vec![1.0; d]);
            p.add("task.ln_out.b", vec![d], vec![0.0; d]);
        }

        let w = POLICY_WIDTH;
        for k in 0..FILM_BLOCKS {
            let in_w = if k == 0 { d } else { w };
            p.add(&format!("policy.block{k}.w"), vec![w, in_w], he(&mut rng, in_w, w * in_w));
            p.add(&format!("policy.block{k}.b"), vec![w], vec![0.0; w]);
            p.add(&format!("policy.film{k}.w"), vec![2 * w, d], xavier(&mut rng, d, 2 * w * d));
            let mut film_b = vec![0.0; 2 * w];
            film_b[..w].fill(1.0);
            p.add(&format!("policy.film{k}.b"), vec![2 * w], film_b);
        }
        let act = cfg.action_dim();
        p.add("policy.head.w", vec![act, w], xavier(&mut rng, w, act * w));
        p.add("policy.head.b", vec![act], vec![0.0; act]);

        if cfg.selfsup_head {
            p.add("ssl.w", vec![d, d], xavier(&mut rng, d, d * d));
            p.add("ssl.b", vec![d], vec![0.0; d]);
        }

        Self { cfg, params: p }
    }

    /// Convert one stacked observation (the last `stack` frames ending at
    /// `frames[t]`, earliest first, first frame duplicated before the
    /// episode start) into planar [C,H,W] floats in [0,1].
    pub fn stack_input(&self, frames: &[&Image], t: usize) -> Vec<f64> {
        let s = self.cfg.frame_stack;
        let (h, w) = (frames[0].h, frames[0].w);
        assert_eq!(
            (h, w),
            (self.cfg.image_size, self.cfg.image_size),
            "frame dims do not match the model's conv plan"
        );
        let mut out = vec![0.0; 3 * s * h * w];
        for k in 0..s {
            let idx = (t + k + 1).saturating_sub(s);
            let img = frames[idx.min(t)];
            for c in 0..3 {
                let plane = ((k * 3 + c) * h) * w;
                for y in 0..h {
                    for x in 0..w {
                        out[plane + y * w + x] = img.rgb[(y * w + x) * 3 + c] as f64 / 255.0;
                    }
                }
            }
        }
        out
    }

    /// Token inputs for a demo: the final-frame variant uses only the last
    /// stacked frame; the transformer uses every `stride`-th frame index
    /// plus always the final one. Returned positions index the positional
    /// table and reflect true timesteps.
    pub fn demo_tokens(&self, frames: &[&Image], stride: usize) -> DemoTokens {
        assert!(!frames.is_empty(), "a demo needs at least one frame");
        assert!(stride >= 1);
        let last = frames.len() - 1;
        let positions: Vec<usize> = match self.cfg.encoder {
            EncoderVariant::FinalFrame => vec![last],
            EncoderVariant::Transformer => {
                let mut pos: Vec<usize> = (0..frames.len()).step_by(stride).collect();
                if *pos.last().unwrap() != last {
                    pos.push(last);
                }
                pos
            }
        };
        assert!(
            *positions.last().unwrap() < self.cfg.max_demo_len,
            "demo of length {} exceeds the positional table ({} rows)",
            frames.len(),
            self.cfg.max_demo_len
        );
        let mut inputs = Vec::with_capacity(positions.len() * self.cfg.in_channels() * frames[0].h * frames[0].w);
        for &t in &positions {
            inputs.extend_from_slice(&self.stack_input(frames, t));
        }
        DemoTokens { inputs, positions }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NnError> {
        let meta = serde_json::to_value(&self.cfg).expect("model config serializes");
        let tensors = self
            .params
            .entries()
            .iter()
            .map(|p| (p.name.clone(), p.shape.clone(), p.data.clone()))
            .collect();
        Checkpoint { meta, tensors }.save(path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NnError> {
        let ck = Checkpoint::load(path)?;
        let cfg: ModelConfig =
            serde_json::from_value(ck.meta.clone()).map_err(|e| NnError::BadMeta(e.to_string()))?;
        let mut model = Model::new(cfg, 0);
        for (name, shape, data) in ck.tensors {
            let param = model
                .params
                .index
                .get(&name)
                .copied()
                .ok_or_else(|| NnError::MissingTensor(name.clone()))?;
            let param = &mut model.params.entries[param];
            if param.shape != shape {
                return Err(NnError::ShapeMismatch { name, got: shape, want: param.shape.clone() });
            }
            param.data = data;
        }
        Ok(model)
    }
}

fn uniform<R: Rng>(rng: &mut R, bound: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}
