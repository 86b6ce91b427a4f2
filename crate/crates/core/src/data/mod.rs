//! Demonstration datasets: expert collection, labeled/unlabeled splits,
//! on-disk container format, and image augmentation.

pub mod augment;
pub mod collect;
pub mod container;

use crate::env::{Action, EnvConfig, EnvKind, Image, TaskSpec};
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("label fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("label fraction {fraction} leaves task {task_id} with {labeled} labeled demo(s); contrastive pairing needs at least 2")]
    TooFewLabeled { fraction: f64, task_id: usize, labeled: usize },
    #[error("expert failed too often for task {task:?}: {collected} of {wanted} demos after {attempts} attempts (budget {budget})")]
    ResampleBudget { task: String, collected: usize, wanted: usize, attempts: usize, budget: usize },
    #[error("environment error during collection: {0}")]
    Env(#[from] crate::env::EnvError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("container format: {0}")]
    Format(String),
}

/// One expert demonstration. `actions[i]` was taken at `frames[i]`, so
/// `actions.len() == frames.len() - 1` always.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Ground-truth task of the collecting episode. Split views decide
    /// whether a learner may see it; scoring code may always use it.
    pub task: TaskSpec,
    pub seed: u64,
    pub frames: Vec<Image>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn task_id(&self) -> usize {
        self.task.task_id()
    }

    pub fn kind(&self) -> EnvKind {
        self.task.kind()
    }
}

/// A raw collected demo set plus its environment config.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub cfg: EnvConfig,
    pub demos: Vec<Trajectory>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitManifest {
    pub label_fraction: f64,
    pub seed: u64,
    /// When set, labeled demos are removed from the unlabeled pool.
    /// Default is inclusion: the pool is the entire collected set with
    /// labels stripped.
    pub exclude_labeled_from_pool: bool,
}

/// A semi-supervised view over a [`DemoSet`]: a per-task labeled index and
/// a flat unlabeled pool. Indices refer into `set.demos`.
pub struct DemoDataset {
    pub set: DemoSet,
    pub labeled: BTreeMap<usize, Vec<usize>>,
    pub unlabeled: Vec<usize>,
    pub manifest: SplitManifest,
}

impl DemoDataset {
    pub fn demo(&self, index: usize) -> &Trajectory {
        &self.set.demos[index]
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.values().map(Vec::len).sum()
    }
}

/// Label `ceil(f * n_task)` demos per task, chosen uniformly with a seed
/// derived per task so the split is a function of (dataset, f, seed) only.
/// The unlabeled pool is the whole set with labels stripped unless
/// `exclude_labeled_from_pool` is set.
pub fn make_split(
    set: DemoSet,
    label_fraction: f64,
    seed: u64,
    exclude_labeled_from_pool: bool,
) -> Result<DemoDataset, DataError> {
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(DataError::BadFraction(label_fraction));
    }
    let mut by_task: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, demo) in set.demos.iter().enumerate() {
        by_task.entry(demo.task_id()).or_default().push(i);
    }
    let mut labeled = BTreeMap::new();
    for (task_id, mut indices) in by_task {
        let take = (label_fraction * indices.len() as f64).ceil() as usize;
        let take = take.min(indices.len());
        if take < 2 {
            return Err(DataError::TooFewLabeled {
                fraction: label_fraction,
                task_id,
                labeled: take,
            });
        }
        let mut rng = seed::rng(seed, &[seed::tag("label-split"), task_id as u64]);
        indices.shuffle(&mut rng);
        let mut chosen: Vec<usize> = indices.into_iter().take(take).collect();
        chosen.sort_unstable();
        labeled.insert(task_id, chosen);
    }
    let unlabeled: Vec<usize> = if exclude_labeled_from_pool {
        let mut in_labeled = vec![false; set.demos.len()];
        for idx in labeled.values().flatten() {
            in_labeled[*idx] = true;
        }
        (0..set.demos.len()).filter(|i| !in_labeled[*i]).collect()
    } else {
        (0..set.demos.len()).collect()
    };
    Ok(DemoDataset {
        set,
        labeled,
        unlabeled,
        manifest: SplitManifest {
            label_fraction,
            seed,
            exclude_labeled_from_pool,
        },
    })
}

/// Train/test task partition, fixed by a seed (0 in every preset).
/// SemanticNav holds out one scene per target class (10 of 90); PinPad
/// holds out 5 of the 30 ordered pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub train: Vec<TaskSpec>,
    pub test: Vec<TaskSpec>,
}

pub fn task_split(cfg: &EnvConfig, seed: u64) -> TaskSplit {
    let all = crate::env::all_tasks(cfg);
    match cfg.kind() {
        EnvKind::SemanticNav => {
            // Stratified: exactly one held-out scene per target class.
            let mut train = Vec::new();
            let mut test = Vec::new();
            let mut by_class: BTreeMap<usize, Vec<TaskSpec>> = BTreeMap::new();
            for t in all {
                by_class.entry(t.task_id()).or_default().push(t);
            }
            for (class, scenes) in by_class {
                let mut rng = seed::rng(seed, &[seed::tag("task-split"), class as u64]);
                let held = rng.random_range(0..scenes.len());
                for (i, t) in scenes.into_iter().enumerate() {
                    if i == held {
                        test.push(t);
                    } else {
                        train.push(t);
                    }
                }
            }
            TaskSplit { train, test }
        }
        EnvKind::PinPad => {
            let mut order: Vec<usize> = (0..all.len()).collect();
            let mut rng = seed::rng(seed, &[seed::tag("task-split")]);
            order.shuffle(&mut rng);
            let held: std::collections::BTreeSet<usize> = order.into_iter().take(5).collect();
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, t) in all.into_iter().enumerate() {
                if held.contains(&i) {
                    test.push(t);
                } else {
                    train.push(t);
                }
            }
            TaskSplit { train, test }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Scene, SemanticNavConfig};

    fn tiny_set(demos_per_task: usize) -> DemoSet {
        // Hand-built single-frame demos are enough to exercise the split
        // logic; collection is tested separately.
        let cfg = EnvConfig::SemanticNav(SemanticNavConfig::default());
        let mut demos = Vec::new();
        for target in 0..3u8 {
            let scene = Scene { target, distractor: (target + 1) % 10 };
            for d in 0..demos_per_task {
                demos.push(Trajectory {
                    task: TaskSpec::Nav(scene),
                    seed: d as u64,
                    frames: vec![Image::filled(4, 4, [0, 0, 0]), Image::filled(4, 4, [1, 1, 1])],
                    actions: vec![Action::Nav([0.0, 0.0])],
                });
            }
        }
        DemoSet { cfg, demos }
    }

    #[test]
    fn split_counts_follow_ceil_of_fraction() {
        let ds = make_split(tiny_set(20), 0.15, 7, false).unwrap();
        for indices in ds.labeled.values() {
            assert_eq!(indices.len(), 3, "ceil(0.15 * 20)");
        }
        assert_eq!(ds.unlabeled.len(), 60, "pool keeps every demo");
        let full = make_split(tiny_set(20), 1.0, 7, false).unwrap();
        assert_eq!(full.labeled_count(), 60);
    }

    #[test]
    fn exclusion_flag_removes_labeled_demos_from_pool() {
        let ds = make_split(tiny_set(20), 0.15, 7, true).unwrap();
        assert_eq!(ds.unlabeled.len(), 60 - 9);
        for indices in ds.labeled.values() {
            for idx in indices {
                assert!(!ds.unlabeled.contains(idx));
            }
        }
    }

    #[test]
    fn fraction_leaving_fewer_than_two_labeled_is_rejected() {
        let err = make_split(tiny_set(20), 0.01, 7, false);
        assert!(matches!(err, Err(DataError::TooFewLabeled { labeled: 1, .. })));
        let err = make_split(tiny_set(20), 1.5, 7, false);
        assert!(matches!(err, Err(DataError::BadFraction(_))));
    }

    #[test]
    fn split_is_deterministic_in_seed_and_sensitive_to_it() {
        let a = make_split(tiny_set(20), 0.2, 7, false).unwrap();
        let b = make_split(tiny_set(20), 0.2, 7, false).unwrap();
        assert_eq!(a.labeled, b.labeled);
        let c = make_split(tiny_set(20), 0.2, 8, false).unwrap();
        assert_ne!(a.labeled, c.labeled);
    }

    #[test]
    fn nav_task_split_holds_out_one_scene_per_class() {
        let cfg = EnvConfig::SemanticNav(SemanticNavConfig::default());
        let split = task_split(&cfg, 0);
        assert_eq!(split.train.len(), 80);
        assert_eq!(split.test.len(), 10);
        let mut classes: Vec<usize> = split.test.iter().map(TaskSpec::task_id).collect();
        classes.sort_unstable();
        assert_eq!(classes, (0..10).collect::<Vec<_>>());
        assert_eq!(split, task_split(&cfg, 0), "split must be reproducible");
    }

    #[test]
    fn pad_task_split_holds_out_five_pairs() {
        let cfg = EnvConfig::default_for(EnvKind::PinPad);
        let split = task_split(&cfg, 0);
        assert_eq!(split.train.len(), 25);
        assert_eq!(split.test.len(), 5);
        for t in &split.test {
            assert!(!split.train.contains(t));
        }
    }
}
