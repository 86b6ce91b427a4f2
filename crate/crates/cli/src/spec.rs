//! Experiment descriptions: the five ablation settings, the two scale
//! presets, and the validated combination of environment, label fraction,
//! and self-training schedule that one experiment runs.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use oslab_core::env::EnvKind;
use oslab_core::hash;
use oslab_core::train::{round_seed, TrainConfig};

/// The five ablation settings. Their train configs differ only in the two
/// loss switches; the relabel variants additionally run self-training
/// rounds, which changes nothing in the per-round config but its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "imitation")]
    Imitation,
    #[serde(rename = "+contrastive")]
    Contrastive,
    #[serde(rename = "+contrastive+aug")]
    ContrastiveAug,
    #[serde(rename = "+contrastive+relabel")]
    ContrastiveRelabel,
    #[serde(rename = "+contrastive+aug+relabel")]
    ContrastiveAugRelabel,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Imitation,
        Setting::Contrastive,
        Setting::ContrastiveAug,
        Setting::ContrastiveRelabel,
        Setting::ContrastiveAugRelabel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Imitation => "imitation",
            Setting::Contrastive => "+contrastive",
            Setting::ContrastiveAug => "+contrastive+aug",
            Setting::ContrastiveRelabel => "+contrastive+relabel",
            Setting::ContrastiveAugRelabel => "+contrastive+aug+relabel",
        }
    }

    pub fn uses_contrastive(self) -> bool {
        self != Setting::Imitation
    }

    pub fn uses_selfsup(self) -> bool {
        matches!(self, Setting::ContrastiveAug | Setting::ContrastiveAugRelabel)
    }

    /// Whether the setting trains students on pseudo pairs (rounds >= 2).
    pub fn relabels(self) -> bool {
        matches!(self, Setting::ContrastiveRelabel | Setting::ContrastiveAugRelabel)
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-scale training runs (hours on one core).
    Paper,
    /// Reduced iteration and batch knobs sized for a workstation.
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }

    pub fn base(self, kind: EnvKind) -> TrainConfig {
        match self {
            Preset::Paper => TrainConfig::paper(kind),
            Preset::Desk => TrainConfig::desk(kind),
        }
    }
}

pub fn env_tag(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::SemanticNav => "semantic-nav",
        EnvKind::PinPad => "pinpad",
    }
}

pub fn parse_env(s: &str) -> Result<EnvKind, String> {
    match s {
        "semantic-nav" => Ok(EnvKind::SemanticNav),
        "pinpad" => Ok(EnvKind::PinPad),
        other => Err(format!("unknown environment {other:?}; expected semantic-nav or pinpad")),
    }
}

pub fn parse_setting(s: &str) -> Result<Setting, String> {
    Setting::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| {
            let names: Vec<&str> = Setting::ALL.iter().map(|v| v.name()).collect();
            format!("unknown setting {s:?}; expected one of {}", names.join(", "))
        })
}

pub fn parse_preset(s: &str) -> Result<Preset, String> {
    match s {
        "paper" => Ok(Preset::Paper),
        "desk" => Ok(Preset::Desk),
        other => Err(format!("unknown preset {other:?}; expected paper or desk")),
    }
}

/// Label fractions of the published ablation grid for one environment.
pub fn grid_fractions(kind: EnvKind) -> [f64; 3] {
    match kind {
        EnvKind::SemanticNav => [1.0, 0.3, 0.15],
        EnvKind::PinPad => [1.0, 0.1, 0.05],
    }
}

/// Demos collected per task class. The desk preset shrinks the PinPad
/// dataset so its smallest grid fraction leaves the teacher mid-curve;
/// at the full 400 the 10k-iteration teacher already saturates train
/// success and relabeling has no headroom left to demonstrate, while
/// far smaller pools starve the embedding until neighbors are mostly
/// wrong-task and pseudo pairs stop helping.
pub fn default_per_class(kind: EnvKind, preset: Preset) -> usize {
    match (kind, preset) {
        (EnvKind::SemanticNav, _) => 800,
        (EnvKind::PinPad, Preset::Paper) => 400,
        (EnvKind::PinPad, Preset::Desk) => 100,
    }
}

/// One experiment: a setting at one label fraction, plus its relabeling
/// schedule and evaluation protocol. The hash of the whole spec names the
/// experiment's artifact directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub env: EnvKind,
    pub setting: Setting,
    pub label_fraction: f64,
    pub preset: Preset,
    /// Neighbors per pool anchor when building pseudo pairs.
    pub k: usize,
    /// Self-training rounds; 1 is the plain teacher.
    pub rounds: usize,
    /// Seed of the round-1 teacher; later rounds re-derive from it.
    pub train_seed: u64,
    /// Evaluation seeds; each contributes `trials` rollouts per split.
    pub eval_seeds: Vec<u64>,
    /// Rollout trials per evaluation seed and split.
    pub trials: usize,
    /// Demos collected per task class.
    pub per_class: usize,
    /// Training iterations; 0 keeps the preset's count.
    pub iterations: usize,
}

impl ExperimentSpec {
    pub fn new(env: EnvKind, setting: Setting, label_fraction: f64, preset: Preset) -> Self {
        Self {
            env,
            setting,
            label_fraction,
            preset,
            k: 10,
            rounds: if setting.relabels() { 2 } else { 1 },
            train_seed: 0,
            eval_seeds: vec![0, 1, 2],
            trials: 100,
            per_class: default_per_class(env, preset),
            iterations: 0,
        }
    }

    pub fn id(&self) -> String {
        hash::short_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = grid_fractions(self.env);
        if !grid.iter().any(|f| (f - self.label_fraction).abs() < 1e-9) {
            bail!(
                "label fraction {} is not in the {} grid {:?}",
                self.label_fraction,
                env_tag(self.env),
                grid
            );
        }
        if self.setting.relabels() && self.rounds < 2 {
            bail!(
                "setting {} relabels, which needs rounds >= 2 (got {})",
                self.setting,
                self.rounds
            );
        }
        if !self.setting.relabels() && self.rounds != 1 {
            bail!(
                "setting {} never relabels; rounds must be 1 (got {})",
                self.setting,
                self.rounds
            );
        }
        if self.setting.uses_selfsup() && self.env != EnvKind::SemanticNav {
            bail!(
                "setting {} augments final frames, which only the semantic-nav encoder consumes",
                self.setting
            );
        }
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.rounds == 0 {
            bail!("rounds must be at least 1");
        }
        if self.trials == 0 || self.eval_seeds.is_empty() {
            bail!("evaluation needs at least one trial and one seed");
        }
        if self.per_class < 2 {
            bail!("per_class {} cannot satisfy the two-demos-per-class labeling floor", self.per_class);
        }
        Ok(())
    }

    /// The train config of one self-training round (round 1 = teacher).
    /// Rounds differ from the teacher only in their derived seed.
    pub fn train_config(&self, round: usize) -> TrainConfig {
        let mut cfg = self.preset.base(self.env);
        cfg.label_fraction = self.label_fraction;
        cfg.use_contrastive = self.setting.uses_contrastive();
        cfg.use_selfsup = self.setting.uses_selfsup();
        if self.iterations > 0 {
            cfg.iterations = self.iterations;
        }
        cfg.seed = round_seed(self.train_seed, round);
        cfg
    }
}
