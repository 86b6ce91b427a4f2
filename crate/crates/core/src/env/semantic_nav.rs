//! Continuous 2-D navigation toward a target object rendered among a
//! distractor.
//!
//! The agent is a point in the unit square. Each scene places two objects
//! that differ in (shape, color); the task is reaching the target object's
//! center while staying clear of the distractor's. Observations are 64x64
//! RGB renders; actions are velocity commands in [-1,1]^2.

use super::{EnvError, Image};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Object variants: shape in {square, circle} x 5 colors.
pub const VARIANT_COUNT: usize = 10;

/// Fixed palette table; indices 0..5 are the object colors
/// (red, green, blue, yellow, magenta).
pub const OBJECT_COLORS: [[u8; 3]; 5] = [
    [255, 40, 40],
    [40, 255, 40],
    [60, 60, 255],
    [255, 255, 40],
    [255, 40, 255],
];

const BACKGROUND: [u8; 3] = [12, 12, 12];
const AGENT_COLOR: [u8; 3] = [255, 255, 255];

/// An ordered (target, distractor) pair of object variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub target: u8,
    pub distractor: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SemanticNavConfig {
    pub image_size: usize,
    pub step_size: f64,
    pub success_radius: f64,
    pub horizon: usize,
    /// Minimum distance between the two object centers.
    pub min_center_gap: f64,
    /// Minimum distance from an object center to each wall.
    pub wall_margin: f64,
    /// Minimum distance from the agent spawn to both object centers.
    /// Larger than `success_radius`, so an episode can never begin solved.
    pub agent_clearance: f64,
    /// When set, scenes with target == distractor variant are enumerated
    /// too (10x10 = 100 scenes instead of the 90 ordered distinct pairs).
    /// Such scenes are visually ambiguous; the switch exists only to
    /// reproduce the larger-grid convention.
    pub include_same_variant_scenes: bool,
}

impl Default for SemanticNavConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            step_size: 0.05,
            success_radius: 0.08,
            horizon: 100,
            min_center_gap: 0.25,
            wall_margin: 0.1,
            agent_clearance: 0.15,
            include_same_variant_scenes: false,
        }
    }
}

/// Enumerate scenes in canonical order: target major, distractor minor.
pub fn scenes(cfg: &SemanticNavConfig) -> Vec<Scene> {
    let mut out = Vec::new();
    for target in 0..VARIANT_COUNT as u8 {
        for distractor in 0..VARIANT_COUNT as u8 {
            if target != distractor || cfg.include_same_variant_scenes {
                out.push(Scene { target, distractor });
            }
        }
    }
    let expected = if cfg.include_same_variant_scenes { 100 } else { 90 };
    assert_eq!(
        out.len(),
        expected,
        "scene enumeration produced {} scenes where the configured convention expects {}",
        out.len(),
        expected
    );
    out
}

pub struct SemanticNav {
    cfg: SemanticNavConfig,
    scene: Scene,
    agent: [f64; 2],
    target_pos: [f64; 2],
    distractor_pos: [f64; 2],
    steps: usize,
    succeeded: bool,
}

impl SemanticNav {
    pub fn reset(cfg: SemanticNavConfig, scene: Scene, seed: u64) -> Result<Self, EnvError> {
        if scene.target as usize >= VARIANT_COUNT || scene.distractor as usize >= VARIANT_COUNT {
            return Err(EnvError::BadTask(format!(
                "object variants must be below {VARIANT_COUNT}, got ({}, {})",
                scene.target, scene.distractor
            )));
        }
        if scene.target == scene.distractor && !cfg.include_same_variant_scenes {
            return Err(EnvError::BadTask(
                "target and distractor variants must differ".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = cfg.wall_margin;
        let hi = 1.0 - cfg.wall_margin;
        let sample = |rng: &mut ChaCha8Rng| [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];

        let target_pos = sample(&mut rng);
        let distractor_pos = loop {
            let p = sample(&mut rng);
            if dist(p, target_pos) >= cfg.min_center_gap {
                break p;
            }
        };
        let agent = loop {
            let p = [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)];
            if dist(p, target_pos) >= cfg.agent_clearance && dist(p, distractor_pos) >= cfg.agent_clearance {
                break p;
            }
        };
        Ok(Self {
            cfg,
            scene,
            agent,
            target_pos,
            distractor_pos,
            steps: 0,
            succeeded: false,
        })
    }

    pub fn scene(&self) -> Scene {
        self.scene
    }

    pub fn agent_pos(&self) -> [f64; 2] {
        self.agent
    }

    pub fn target_pos(&self) -> [f64; 2] {
        self.target_pos
    }

    pub fn done(&self) -> bool {
        self.succeeded || self.steps >= self.cfg.horizon
    }

    pub fn succeeded(&self) -> bool {
        self.succeeded
    }

    /// Apply one velocity command. Components outside [-1,1] are clamped,
    /// and the resulting position is clamped to the unit square.
    pub fn step(&mut self, action: [f64; 2]) -> Result<(), EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeDone);
        }
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            self.agent[i] = (self.agent[i] + self.cfg.step_size * a).clamp(0.0, 1.0);
        }
        self.steps += 1;
        let r = self.cfg.success_radius;
        if dist(self.agent, self.target_pos) <= r && dist(self.agent, self.distractor_pos) > r {
            self.succeeded = true;
        }
        Ok(())
    }

    /// Proportional controller toward the target center; optimal because
    /// dynamics are a clamped integrator with no obstacles that block.
    pub fn expert_action(&self) -> [f64; 2] {
        let s = self.cfg.step_size;
        [
            ((self.target_pos[0] - self.agent[0]) / s).clamp(-1.0, 1.0),
            ((self.target_pos[1] - self.agent[1]) / s).clamp(-1.0, 1.0),
        ]
    }

    pub fn observe(&self) -> Image {
        let n = self.cfg.image_size;
        let mut img = Image::filled(n, n, BACKGROUND);
        draw_object(&mut img, self.target_pos, self.scene.target);
        draw_object(&mut img, self.distractor_pos, self.scene.distractor);
        draw_agent(&mut img, self.agent);
        img
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn to_px(p: f64, n: usize) -> i64 {
    (p * (n - 1) as f64).round() as i64
}

/// Objects are roughly 11 px across at the default 64 px render: squares
/// are 11x11 blocks, circles radius 5.5. Wall margins keep them fully in
/// frame.
fn draw_object(img: &mut Image, pos: [f64; 2], variant: u8) {
    let color = OBJECT_COLORS[(variant % 5) as usize];
    let circle = variant >= 5;
    let cy = to_px(pos[1], img.h);
    let cx = to_px(pos[0], img.w);
    for dy in -5i64..=5 {
        for dx in -5i64..=5 {
            if circle && (dy * dy + dx * dx) as f64 > 30.25 {
                continue;
            }
            let (y, x) = (cy + dy, cx + dx);
            if y >= 0 && x >= 0 && (y as usize) < img.h && (x as usize) < img.w {
                img.put(y as usize, x as usize, color);
            }
        }
    }
}

fn draw_agent(img: &mut Image, pos: [f64; 2]) {
    let cy = to_px(pos[1], img.h);
    let cx = to_px(pos[0], img.w);
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (y, x) = (cy + dy, cx + dx);
            if y >= 0 && x >= 0 && (y as usize) < img.h && (x as usize) < img.w {
                img.put(y as usize, x as usize, AGENT_COLOR);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SemanticNavConfig {
        SemanticNavConfig::default()
    }

    fn any_scene() -> Scene {
        Scene { target: 3, distractor: 7 }
    }

    #[test]
    fn scene_enumeration_counts() {
        assert_eq!(scenes(&cfg()).len(), 90);
        let mut wide = cfg();
        wide.include_same_variant_scenes = true;
        assert_eq!(scenes(&wide).len(), 100);
    }

    #[test]
    fn same_variant_scene_rejected_by_default() {
        let err = SemanticNav::reset(cfg(), Scene { target: 2, distractor: 2 }, 0);
        assert!(err.is_err());
    }

    #[test]
    fn placement_invariants_hold_over_many_resets() {
        let c = cfg();
        for seed in 0..1000 {
            let env = SemanticNav::reset(c.clone(), any_scene(), seed).unwrap();
            let gap = dist(env.target_pos, env.distractor_pos);
            assert!(gap >= c.min_center_gap, "seed {seed}: gap {gap}");
            for p in [env.target_pos, env.distractor_pos] {
                for v in p {
                    assert!(v >= c.wall_margin - 1e-12 && v <= 1.0 - c.wall_margin + 1e-12);
                }
            }
            assert!(dist(env.agent, env.target_pos) >= c.agent_clearance);
            assert!(dist(env.agent, env.distractor_pos) >= c.agent_clearance);
            assert!(!env.done(), "seed {seed}: episode done at reset");
        }
    }

    #[test]
    fn reset_is_deterministic_in_seed() {
        let a = SemanticNav::reset(cfg(), any_scene(), 42).unwrap();
        let b = SemanticNav::reset(cfg(), any_scene(), 42).unwrap();
        assert_eq!(a.agent, b.agent);
        assert_eq!(a.target_pos, b.target_pos);
        assert_eq!(a.observe(), b.observe());
        let c = SemanticNav::reset(cfg(), any_scene(), 43).unwrap();
        assert_ne!(a.agent, c.agent);
    }

    #[test]
    fn step_moves_by_scaled_action_and_clamps_at_walls() {
        let mut env = SemanticNav::reset(cfg(), any_scene(), 7).unwrap();
        let x0 = env.agent[0];
        env.step([1.0, 0.0]).unwrap();
        assert!((env.agent[0] - (x0 + 0.05).min(1.0)).abs() < 1e-15);

        // Out-of-range commands clamp to the unit action box, and forty
        // moves left pin the agent to the wall rather than erroring.
        let mut env = SemanticNav::reset(cfg(), any_scene(), 7).unwrap();
        env.agent = [0.02, 0.5];
        env.step([-100.0, 0.0]).unwrap();
        assert!((env.agent[0] - 0.0).abs() < 1e-15, "expected clamp to 0");
        for _ in 0..40 {
            env.step([-1.0, 0.0]).unwrap();
        }
        assert_eq!(env.agent[0], 0.0);
    }

    #[test]
    fn success_requires_target_proximity_and_distractor_clearance() {
        let mut env = SemanticNav::reset(cfg(), any_scene(), 1).unwrap();
        env.agent = [0.5, 0.5];
        env.target_pos = [0.55, 0.5];
        env.distractor_pos = [0.15, 0.85];
        env.step([0.0, 0.0]).unwrap();
        assert!(env.succeeded(), "within 0.08 of target, far from distractor");

        // Near both centers at once does not count.
        let mut env = SemanticNav::reset(cfg(), any_scene(), 1).unwrap();
        env.agent = [0.5, 0.5];
        env.target_pos = [0.55, 0.5];
        env.distractor_pos = [0.45, 0.5];
        env.step([0.0, 0.0]).unwrap();
        assert!(!env.succeeded(), "also within 0.08 of distractor");
        assert!(!env.done());
    }

    #[test]
    fn stepping_after_done_is_an_error() {
        let mut env = SemanticNav::reset(cfg(), any_scene(), 5).unwrap();
        while !env.done() {
            let a = env.expert_action();
            env.step(a).unwrap();
        }
        assert!(matches!(env.step([0.0, 0.0]), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn expert_succeeds_within_horizon() {
        let c = cfg();
        for seed in 0..100 {
            for scene in [any_scene(), Scene { target: 9, distractor: 0 }] {
                let mut env = SemanticNav::reset(c.clone(), scene, seed).unwrap();
                while !env.done() {
                    let a = env.expert_action();
                    env.step(a).unwrap();
                }
                assert!(env.succeeded(), "seed {seed}: expert failed");
            }
        }
    }

    #[test]
    fn render_is_pure_and_shows_all_three_entities() {
        let env = SemanticNav::reset(cfg(), Scene { target: 0, distractor: 6 }, 11).unwrap();
        let img = env.observe();
        assert_eq!(img, env.observe());
        assert_eq!(img.rgb.len(), 64 * 64 * 3);
        let count = |color: [u8; 3]| {
            img.rgb
                .chunks_exact(3)
                .filter(|px| [px[0], px[1], px[2]] == color)
                .count()
        };
        // Square target: full 11x11 block of red pixels.
        assert_eq!(count(OBJECT_COLORS[0]), 121);
        // Circle distractor (variant 6 = green circle) covers fewer pixels.
        let circle_px = count(OBJECT_COLORS[1]);
        assert!(circle_px > 80 && circle_px < 121, "circle covered {circle_px} px");
        assert!(count(AGENT_COLOR) >= 4, "agent marker missing");
    }
}
