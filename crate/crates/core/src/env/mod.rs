//! The two benchmark environments: pixel rendering, dynamics, success
//! predicates, and scripted experts.
//!
//! Both environments are pure functions of (task, seed, action sequence).
//! Rendering is deterministic and side-effect free; observations are 8-bit
//! RGB, interleaved row-major.

pub mod pinpad;
pub mod semantic_nav;

pub use pinpad::{PinPad, PinPadConfig, PAD_COUNT};
pub use semantic_nav::{Scene, SemanticNav, SemanticNavConfig, VARIANT_COUNT};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode is done; reset before stepping")]
    EpisodeDone,
    #[error("invalid task payload: {0}")]
    BadTask(String),
    #[error("action {action} out of range for a {actions}-action environment")]
    BadAction { action: u8, actions: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    SemanticNav,
    PinPad,
}

/// 8-bit RGB image, interleaved, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn filled(h: usize, w: usize, color: [u8; 3]) -> Self {
        let mut rgb = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            rgb.extend_from_slice(&color);
        }
        Self { h, w, rgb }
    }

    pub fn put(&mut self, y: usize, x: usize, color: [u8; 3]) {
        debug_assert!(y < self.h && x < self.w);
        let at = (y * self.w + x) * 3;
        self.rgb[at..at + 3].copy_from_slice(&color);
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let at = (y * self.w + x) * 3;
        [self.rgb[at], self.rgb[at + 1], self.rgb[at + 2]]
    }
}

/// One environment action; the variant must match the environment kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Velocity command in [-1,1]^2 (values outside are clamped).
    Nav([f64; 2]),
    /// 0 up, 1 down, 2 left, 3 right, 4 no-op.
    Pad(u8),
}

/// Task identity plus everything reset needs to build an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskSpec {
    /// Navigate to the target object of a (target, distractor) scene.
    Nav(Scene),
    /// Press pad `first` then pad `second`.
    Pad { first: u8, second: u8 },
}

impl TaskSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            TaskSpec::Nav(_) => EnvKind::SemanticNav,
            TaskSpec::Pad { .. } => EnvKind::PinPad,
        }
    }

    /// Task class used for labels and retrieval scoring: the target object
    /// variant (10 classes) or the ordered pad pair index (30 classes).
    pub fn task_id(&self) -> usize {
        match self {
            TaskSpec::Nav(scene) => scene.target as usize,
            TaskSpec::Pad { first, second } => {
                pinpad::pair_index(*first, *second)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "env")]
pub enum EnvConfig {
    SemanticNav(SemanticNavConfig),
    PinPad(PinPadConfig),
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::SemanticNav(_) => EnvKind::SemanticNav,
            EnvConfig::PinPad(_) => EnvKind::PinPad,
        }
    }

    pub fn image_hw(&self) -> (usize, usize) {
        match self {
            EnvConfig::SemanticNav(c) => (c.image_size, c.image_size),
            EnvConfig::PinPad(c) => (c.grid * c.cell_px, c.grid * c.cell_px),
        }
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::SemanticNav => EnvConfig::SemanticNav(SemanticNavConfig::default()),
            EnvKind::PinPad => EnvConfig::PinPad(PinPadConfig::default()),
        }
    }
}

/// A running episode of either environment.
pub enum Env {
    Nav(SemanticNav),
    Pad(PinPad),
}

impl Env {
    pub fn reset(cfg: &EnvConfig, task: &TaskSpec, seed: u64) -> Result<Self, EnvError> {
        match (cfg, task) {
            (EnvConfig::SemanticNav(c), TaskSpec::Nav(scene)) => {
                Ok(Env::Nav(SemanticNav::reset(c.clone(), *scene, seed)?))
            }
            (EnvConfig::PinPad(c), TaskSpec::Pad { first, second }) => {
                Ok(Env::Pad(PinPad::reset(c.clone(), *first, *second, seed)?))
            }
            _ => Err(EnvError::BadTask(
                "task payload does not match environment kind".into(),
            )),
        }
    }

    pub fn observe(&self) -> Image {
        match self {
            Env::Nav(e) => e.observe(),
            Env::Pad(e) => e.observe(),
        }
    }

    pub fn step(&mut self, action: Action) -> Result<(), EnvError> {
        match (self, action) {
            (Env::Nav(e), Action::Nav(a)) => e.step(a),
            (Env::Pad(e), Action::Pad(a)) => e.step(a),
            _ => Err(EnvError::BadTask(
                "action variant does not match environment kind".into(),
            )),
        }
    }

    pub fn done(&self) -> bool {
        match self {
            Env::Nav(e) => e.done(),
            Env::Pad(e) => e.done(),
        }
    }

    pub fn succeeded(&self) -> bool {
        match self {
            Env::Nav(e) => e.succeeded(),
            Env::Pad(e) => e.succeeded(),
        }
    }

    pub fn expert_action(&self) -> Action {
        match self {
            Env::Nav(e) => Action::Nav(e.expert_action()),
            Env::Pad(e) => Action::Pad(e.expert_action()),
        }
    }
}

/// Enumerate every task of an environment in its canonical order.
pub fn all_tasks(cfg: &EnvConfig) -> Vec<TaskSpec> {
    match cfg {
        EnvConfig::SemanticNav(c) => semantic_nav::scenes(c).into_iter().map(TaskSpec::Nav).collect(),
        EnvConfig::PinPad(_) => pinpad::pairs()
            .into_iter()
            .map(|(first, second)| TaskSpec::Pad { first, second })
            .collect(),
    }
}

/// Number of task classes used for labeling (targets or ordered pairs).
pub fn class_count(kind: EnvKind) -> usize {
    match kind {
        EnvKind::SemanticNav => VARIANT_COUNT,
        EnvKind::PinPad => PAD_COUNT * (PAD_COUNT - 1),
    }
}
