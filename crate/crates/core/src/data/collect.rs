//! Expert rollout collection.
//!
//! Every stored demonstration is a successful expert episode; failed
//! rollouts are discarded and resampled under a 10x budget. Episode seeds
//! come from a counter-based derivation, so a dataset is a pure function
//! of (config, tasks, counts, root seed) regardless of collection order.

use super::{DataError, DemoSet, Trajectory};
use crate::env::{Action, Env, EnvConfig, TaskSpec};
use crate::seed;
use std::collections::BTreeMap;

pub struct Collected {
    pub demos: Vec<Trajectory>,
    pub discarded: usize,
}

/// Roll out the scripted expert until `n` successful demos exist for
/// `task`. Attempt seeds are numbered from 0, so retries after a failure
/// keep the remaining episodes aligned with the attempt counter.
pub fn collect(cfg: &EnvConfig, task: &TaskSpec, n: usize, seed: u64) -> Result<Collected, DataError> {
    assert!(n >= 1, "collection count must be at least 1");
    let budget = 10 * n;
    let mut demos = Vec::with_capacity(n);
    let mut attempts = 0;
    while demos.len() < n {
        if attempts >= budget {
            return Err(DataError::ResampleBudget {
                task: format!("{task:?}"),
                collected: demos.len(),
                wanted: n,
                attempts,
                budget,
            });
        }
        let ep_seed = seed::derive(seed, &[seed::tag("episode"), attempts as u64]);
        attempts += 1;
        if let Some(demo) = rollout_expert(cfg, task, ep_seed)? {
            demos.push(demo);
        }
    }
    Ok(Collected { demos, discarded: attempts - n })
}

/// One expert episode; `None` when it ends unsuccessfully.
fn rollout_expert(cfg: &EnvConfig, task: &TaskSpec, ep_seed: u64) -> Result<Option<Trajectory>, DataError> {
    let mut env = Env::reset(cfg, task, ep_seed)?;
    let mut frames = vec![env.observe()];
    let mut actions = Vec::new();
    while !env.done() {
        let a = env.expert_action();
        env.step(a)?;
        actions.push(a);
        frames.push(env.observe());
    }
    if !env.succeeded() {
        return Ok(None);
    }
    Ok(Some(Trajectory { task: *task, seed: ep_seed, frames, actions }))
}

/// Re-run a stored action sequence from the recorded reset seed and return
/// the terminal environment, for audits that need ground-truth state.
pub fn replay(cfg: &EnvConfig, task: &TaskSpec, ep_seed: u64, actions: &[Action]) -> Result<Env, DataError> {
    let mut env = Env::reset(cfg, task, ep_seed)?;
    for a in actions {
        env.step(*a)?;
    }
    Ok(env)
}

pub struct BuildReport {
    pub set: DemoSet,
    pub discarded: usize,
}

/// Collect `per_class` demos for every task class present in `tasks`,
/// spreading the count evenly over the class's task variants (scenes share
/// a target class; PinPad pairs are singleton classes). Remainders go to
/// the earlier variants in canonical order.
pub fn build_dataset(
    cfg: &EnvConfig,
    tasks: &[TaskSpec],
    per_class: usize,
    seed: u64,
) -> Result<BuildReport, DataError> {
    let mut by_class: BTreeMap<usize, Vec<TaskSpec>> = BTreeMap::new();
    for t in tasks {
        by_class.entry(t.task_id()).or_default().push(*t);
    }
    let mut demos = Vec::new();
    let mut discarded = 0;
    for (class, variants) in by_class {
        let m = variants.len();
        for (i, task) in variants.into_iter().enumerate() {
            let n = per_class / m + usize::from(i < per_class % m);
            if n == 0 {
                continue;
            }
            let task_seed = seed::derive(seed, &[seed::tag("collect"), class as u64, i as u64]);
            let got = collect(cfg, &task, n, task_seed)?;
            discarded += got.discarded;
            demos.extend(got.demos);
        }
    }
    Ok(BuildReport { set: DemoSet { cfg: cfg.clone(), demos }, discarded })
}
