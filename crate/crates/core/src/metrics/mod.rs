//! Evaluation: greedy rollout success rates over task splits, and the
//! trajectory-retrieval score of an embedding over a labeled pool.
//!
//! The rollout protocol per trial: sample a task from the split, reset the
//! environment with a fresh seed, collect one fresh conditioning demo via
//! the scripted expert, and roll the policy out greedily (argmax for
//! discrete actions, the tanh mean for continuous). A trial scores 1 iff
//! the episode's success predicate fires.

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{collect, DataError};
use crate::env::{Action, Env, EnvConfig, EnvError, EnvKind, Image, TaskSpec};
use crate::nn::Model;
use crate::pseudo::{knn, EmbeddingMatrix, Provenance, PseudoError};
use crate::seed;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("task split is empty")]
    EmptySplit,
    #[error("policy environment does not match the task split")]
    KindMismatch,
    #[error("label count {labels} does not match pool size {n}")]
    LabelMismatch { labels: usize, n: usize },
    #[error("retrieved demo {0} fails its own task on replay")]
    AuditFailed(usize),
    #[error(transparent)]
    Knn(#[from] PseudoError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Action source for evaluation rollouts. Scripted baselines ignore the
/// conditioning demo, so it is only collected for the learned policy.
pub enum RolloutPolicy<'a> {
    /// Encode the conditioning demo, then act greedily from the policy head.
    Learned { model: &'a Model, token_stride: usize },
    /// The same expert that generated the datasets; success-rate ceiling.
    ScriptedExpert,
    /// Uniform random actions; success-rate floor.
    UniformRandom,
}

/// Success counts for one task class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRate {
    pub successes: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    /// Split tag, conventionally "train" or "test".
    pub split: String,
    /// Trials per seed.
    pub trials: usize,
    pub seeds: Vec<u64>,
    /// Success rate per seed, in `seeds` order.
    pub per_seed: Vec<f64>,
    /// Mean of `per_seed`.
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    /// Aggregate success counts keyed by task class id.
    pub per_task: BTreeMap<usize, TaskRate>,
}

/// One planned evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub task_index: usize,
    pub demo_seed: u64,
    pub env_seed: u64,
}

/// The deterministic trial schedule for one evaluation seed. Every seed
/// gets its own task-sampling stream and disjoint episode seeds.
pub fn trial_plan(split_len: usize, trials: usize, eval_seed: u64) -> Vec<Trial> {
    let mut task_rng = seed::rng(eval_seed, &[seed::tag("eval-task")]);
    (0..trials)
        .map(|t| Trial {
            task_index: task_rng.random_range(0..split_len),
            demo_seed: seed::derive(eval_seed, &[seed::tag("eval-demo"), t as u64]),
            env_seed: seed::derive(eval_seed, &[seed::tag("eval-episode"), t as u64]),
        })
        .collect()
}

fn rollout(
    policy: &RolloutPolicy,
    cfg: &EnvConfig,
    task: &TaskSpec,
    env_seed: u64,
    z: Option<&[f64]>,
) -> Result<bool, MetricsError> {
    let mut env = Env::reset(cfg, task, env_seed)?;
    let mut history: Vec<Image> = vec![env.observe()];
    let mut rng = seed::rng(env_seed, &[seed::tag("random-policy")]);
    while !env.done() {
        let action = match policy {
            RolloutPolicy::ScriptedExpert => env.expert_action(),
            RolloutPolicy::UniformRandom => match cfg.kind() {
                EnvKind::SemanticNav => {
                    Action::Nav([rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
                }
                EnvKind::PinPad => Action::Pad(rng.random_range(0..5)),
            },
            RolloutPolicy::Learned { model, .. } => {
                let start = history.len().saturating_sub(model.cfg.frame_stack);
                let recent: Vec<&Image> = history[start..].iter().collect();
                model.act_greedy(&recent, z.expect("learned rollout needs an embedding"))
            }
        };
        env.step(action)?;
        history.push(env.observe());
    }
    Ok(env.succeeded())
}

/// Success rate of a policy over a task split: `trials` episodes per seed,
/// aggregated per seed and per task class.
pub fn eval_success(
    policy: &RolloutPolicy,
    cfg: &EnvConfig,
    split: &[TaskSpec],
    split_tag: &str,
    trials: usize,
    seeds: &[u64],
    checkpoint_id: &str,
) -> Result<EvalReport, MetricsError> {
    if split.is_empty() || seeds.is_empty() || trials == 0 {
        return Err(MetricsError::EmptySplit);
    }
    if split.iter().any(|t| t.kind() != cfg.kind()) {
        return Err(MetricsError::KindMismatch);
    }
    if let RolloutPolicy::Learned { model, .. } = policy {
        if model.cfg.kind != cfg.kind() {
            return Err(MetricsError::KindMismatch);
        }
    }

    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut per_task: BTreeMap<usize, TaskRate> = BTreeMap::new();
    for &s in seeds {
        let mut successes = 0usize;
        for trial in trial_plan(split.len(), trials, s) {
            let task = &split[trial.task_index];
            let z = match policy {
                RolloutPolicy::Learned { model, token_stride } => {
                    let demo = collect::collect(cfg, task, 1, trial.demo_seed)?
                        .demos
                        .remove(0);
                    let frames: Vec<&Image> = demo.frames.iter().collect();
                    Some(model.encode_task_host(&frames, *token_stride))
                }
                _ => None,
            };
            let ok = rollout(policy, cfg, task, trial.env_seed, z.as_deref())?;
            let entry = per_task.entry(task.task_id()).or_insert(TaskRate {
                successes: 0,
                trials: 0,
            });
            entry.trials += 1;
            if ok {
                entry.successes += 1;
                successes += 1;
            }
        }
        per_seed.push(successes as f64 / trials as f64);
    }

    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let std = if per_seed.len() > 1 {
        let var = per_seed.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (per_seed.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        checkpoint: checkpoint_id.to_string(),
        split: split_tag.to_string(),
        trials,
        seeds: seeds.to_vec(),
        per_seed,
        mean,
        std,
        per_task,
    })
}

/// How retrieved demos are scored against the anchor's task.
pub enum TrScoring<'a> {
    /// Compare stored task classes. Expert demos satisfy their own task by
    /// construction, so this coincides with replay-based scoring.
    StoredLabels,
    /// Additionally replay every retrieved demo in its own episode and
    /// verify the recorded success before trusting its label.
    ResimulateAudit {
        cfg: &'a EnvConfig,
        pool: &'a [&'a crate::data::Trajectory],
    },
}

/// Mean over anchors of the fraction of the anchor's k nearest neighbors
/// (self excluded, raw L2) that share the anchor's task class.
pub fn tr_score(m: &EmbeddingMatrix, labels: &[usize], k: usize) -> Result<f64, MetricsError> {
    tr_score_with(m, labels, k, &TrScoring::StoredLabels)
}

pub fn tr_score_with(
    m: &EmbeddingMatrix,
    labels: &[usize],
    k: usize,
    scoring: &TrScoring,
) -> Result<f64, MetricsError> {
    if labels.len() != m.n {
        return Err(MetricsError::LabelMismatch { labels: labels.len(), n: m.n });
    }
    let mut audited: BTreeSet<usize> = BTreeSet::new();
    let mut total = 0.0;
    for i in 0..m.n {
        let neighbors = knn(m, i, k)?;
        if let TrScoring::ResimulateAudit { cfg, pool } = scoring {
            for &j in &neighbors {
                let j = j as usize;
                if audited.insert(j) {
                    let demo = pool[j];
                    let env = collect::replay(cfg, &demo.task, demo.seed, &demo.actions)?;
                    if !env.succeeded() {
                        return Err(MetricsError::AuditFailed(j));
                    }
                }
            }
        }
        let hits = neighbors.iter().filter(|&&j| labels[j as usize] == labels[i]).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / m.n as f64)
}

/// Retrieval score when every other pool element is retrieved: depends only
/// on the class balance, Σ_c m_c(m_c−1) / (n(n−1)).
pub fn tr_full_retrieval(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let n = labels.len() as f64;
    counts
        .values()
        .map(|&m| (m * (m - 1)) as f64)
        .sum::<f64>()
        / (n * (n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub pool_size: usize,
    pub provenance: Provenance,
    /// (k, TR score) in sweep order.
    pub scores: Vec<(usize, f64)>,
}

/// TR at every k in the sweep. The neighbor list is computed once at the
/// largest k; smaller ks score its prefixes, which is exact because
/// neighbor order is consistent across k.
pub fn retrieval_sweep(
    m: &EmbeddingMatrix,
    labels: &[usize],
    ks: &[usize],
) -> Result<RetrievalReport, MetricsError> {
    if labels.len() != m.n {
        return Err(MetricsError::LabelMismatch { labels: labels.len(), n: m.n });
    }
    if let Some(&bad) = ks.iter().find(|&&k| k == 0) {
        return Err(MetricsError::Knn(PseudoError::KOutOfRange { k: bad, n: m.n, max: m.n - 1 }));
    }
    let kmax = *ks.iter().max().expect("sweep needs at least one k");
    let mut sums = vec![0.0; ks.len()];
    for i in 0..m.n {
        let neighbors = knn(m, i, kmax)?;
        let mut prefix_hits = vec![0usize; kmax + 1];
        for (rank, &j) in neighbors.iter().enumerate() {
            prefix_hits[rank + 1] =
                prefix_hits[rank] + usize::from(labels[j as usize] == labels[i]);
        }
        for (si, &k) in ks.iter().enumerate() {
            sums[si] += prefix_hits[k] as f64 / k as f64;
        }
    }
    let scores = ks
        .iter()
        .zip(&sums)
        .map(|(&k, &s)| (k, s / m.n as f64))
        .collect();
    Ok(RetrievalReport { pool_size: m.n, provenance: m.provenance.clone(), scores })
}

/// First two principal axes of the centered rows via power iteration with
/// deflation. Returns per-row 2-D coordinates and the two eigenvalues of
/// the covariance (descending).
pub fn pca_project_2d(m: &EmbeddingMatrix) -> (Vec<[f64; 2]>, [f64; 2]) {
    let (n, d) = (m.n, m.d);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (s, v) in mean.iter_mut().zip(m.row(i)) {
            *s += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);

    // Covariance of the centered rows; d is small so the d×d matrix is cheap.
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let r = m.row(i);
        for a in 0..d {
            let ca = r[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += ca * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / n as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }

    let mut axes = [vec![0.0; d], vec![0.0; d]];
    let mut eigs = [0.0; 2];
    for which in 0..2 {
        let mut v: Vec<f64> = (0..d)
            .map(|i| {
                let x = seed::splitmix64(seed::derive(97, &[which as u64, i as u64]));
                (x as f64 / u64::MAX as f64) - 0.5
            })
            .collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; d];
            for a in 0..d {
                let va = v[a];
                if va != 0.0 {
                    for b in 0..d {
                        w[b] += cov[a * d + b] * va;
                    }
                }
            }
            let next = normalize(&mut w);
            let delta = (next - lambda).abs();
            lambda = next;
            v = w;
            if delta <= 1e-13 * lambda.max(1.0) {
                break;
            }
        }
        eigs[which] = lambda;
        axes[which] = v.clone();
        // Deflate so the next iteration converges to the second axis.
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] -= lambda * v[a] * v[b];
            }
        }
    }

    let coords = (0..n)
        .map(|i| {
            let r = m.row(i);
            let proj = |axis: &[f64]| {
                r.iter()
                    .zip(axis)
                    .zip(&mean)
                    .map(|((x, a), mu)| (x - mu) * a)
                    .sum::<f64>()
            };
            [proj(&axes[0]), proj(&axes[1])]
        })
        .collect();
    (coords, eigs)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;
    use crate::env::Scene;
    use crate::nn::ModelConfig;
    use rand_chacha::ChaCha8Rng;

    fn nav_cfg() -> EnvConfig {
        EnvConfig::default_for(EnvKind::SemanticNav)
    }

    fn pad_cfg() -> EnvConfig {
        EnvConfig::default_for(EnvKind::PinPad)
    }

    #[test]
    fn expert_policy_succeeds_on_both_environments() {
        for cfg in [nav_cfg(), pad_cfg()] {
            let split = crate::env::all_tasks(&cfg);
            let report = eval_success(
                &RolloutPolicy::ScriptedExpert,
                &cfg,
                &split,
                "train",
                20,
                &[0],
                "expert",
            )
            .unwrap();
            assert_eq!(report.mean, 1.0, "{:?}", cfg.kind());
        }
    }

    #[test]
    fn random_pad_policy_rarely_presses_the_right_pair() {
        // Monte-Carlo floor; the 5% bound was measured once and frozen.
        let cfg = pad_cfg();
        let split = crate::env::all_tasks(&cfg);
        let report = eval_success(
            &RolloutPolicy::UniformRandom,
            &cfg,
            &split,
            "train",
            300,
            &[1],
            "random",
        )
        .unwrap();
        assert!(report.mean < 0.05, "random success {}", report.mean);
    }

    #[test]
    fn repeated_evaluation_is_identical() {
        let cfg = pad_cfg();
        let model = Model::new(ModelConfig::defaults(EnvKind::PinPad), 3);
        let split = crate::env::all_tasks(&cfg);
        let policy = RolloutPolicy::Learned { model: &model, token_stride: 4 };
        let run = || {
            eval_success(&policy, &cfg, &split, "train", 4, &[0, 1], "m").unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluation_runs_exactly_trials_times_seeds_episodes() {
        let cfg = pad_cfg();
        let split = crate::env::all_tasks(&cfg);
        let report = eval_success(
            &RolloutPolicy::UniformRandom,
            &cfg,
            &split,
            "train",
            25,
            &[0, 1, 2],
            "random",
        )
        .unwrap();
        let episodes: usize = report.per_task.values().map(|r| r.trials).sum();
        assert_eq!(episodes, 25 * 3);
        assert_eq!(report.per_seed.len(), 3);

        // Episode seeds never collide across evaluation seeds.
        let mut seen = BTreeSet::new();
        for s in [0u64, 1, 2] {
            for trial in trial_plan(split.len(), 100, s) {
                assert!(seen.insert(trial.env_seed), "episode seed reused");
            }
        }
    }

    #[test]
    fn degenerate_evaluations_are_rejected() {
        let cfg = pad_cfg();
        assert!(matches!(
            eval_success(&RolloutPolicy::UniformRandom, &cfg, &[], "train", 1, &[0], "x"),
            Err(MetricsError::EmptySplit)
        ));
        let nav_task = TaskSpec::Nav(Scene { target: 0, distractor: 5 });
        assert!(matches!(
            eval_success(&RolloutPolicy::UniformRandom, &cfg, &[nav_task], "train", 1, &[0], "x"),
            Err(MetricsError::KindMismatch)
        ));
    }

    fn prov() -> Provenance {
        Provenance {
            checkpoint: "t".into(),
            encoder: crate::nn::EncoderVariant::FinalFrame,
            token_stride: 1,
        }
    }

    fn clustered_matrix(per_class: usize, classes: usize, spread: f64, seed: u64) -> (EmbeddingMatrix, Vec<usize>) {
        let d = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for _ in 0..per_class {
                for j in 0..d {
                    let center = if j == c % d { 10.0 * (1 + c / d) as f64 } else { 0.0 };
                    rows.push(center + rng.random_range(-spread..spread));
                }
                labels.push(c);
            }
        }
        let n = labels.len();
        (EmbeddingMatrix { n, d, rows, provenance: prov() }, labels)
    }

    #[test]
    fn tight_clusters_retrieve_their_own_class() {
        let (m, labels) = clustered_matrix(6, 4, 0.01, 5);
        assert_eq!(tr_score(&m, &labels, 5).unwrap(), 1.0);
    }

    #[test]
    fn full_retrieval_equals_the_class_balance_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..7)).collect();
        let rows: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = EmbeddingMatrix { n, d: 4, rows, provenance: prov() };
        let got = tr_score(&m, &labels, n - 1).unwrap();
        assert!((got - tr_full_retrieval(&labels)).abs() < 1e-12);
    }

    #[test]
    fn random_embeddings_score_at_chance() {
        // 10 balanced classes: chance TR is 0.1 in expectation.
        let mut sum = 0.0;
        let runs = 20;
        for s in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
            let n = 200;
            let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
            let rows: Vec<f64> = (0..n * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = EmbeddingMatrix { n, d: 64, rows, provenance: prov() };
            sum += tr_score(&m, &labels, 10).unwrap();
        }
        let mean = sum / runs as f64;
        assert!((mean - 0.1).abs() < 0.03, "chance TR {mean}");
    }

    #[test]
    fn retrieval_score_ignores_rigid_motions() {
        let (m, labels) = clustered_matrix(5, 3, 2.0, 13);
        let base = tr_score(&m, &labels, 4).unwrap();
        // Reflect across a random hyperplane and translate.
        let d = m.d;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut rows = vec![0.0; m.n * d];
        for i in 0..m.n {
            let r = m.row(i);
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            for j in 0..d {
                rows[i * d + j] = r[j] - 2.0 * dot * v[j] + 3.5;
            }
        }
        let tm = EmbeddingMatrix { n: m.n, d, rows, provenance: prov() };
        assert_eq!(tr_score(&tm, &labels, 4).unwrap(), base);
    }

    #[test]
    fn audit_replays_retrieved_demos_and_catches_corruption() {
        let cfg = pad_cfg();
        let mut demos: Vec<Trajectory> = Vec::new();
        for (i, task) in [
            TaskSpec::Pad { first: 0, second: 1 },
            TaskSpec::Pad { first: 2, second: 5 },
        ]
        .iter()
        .enumerate()
        {
            demos.extend(collect::collect(&cfg, task, 2, 50 + i as u64).unwrap().demos);
        }
        let labels: Vec<usize> = demos.iter().map(|d| d.task.task_id()).collect();
        let model = Model::new(ModelConfig::defaults(EnvKind::PinPad), 7);
        let pool: Vec<&Trajectory> = demos.iter().collect();
        let m = crate::pseudo::embed_pool(&model, &pool, 4, "t").unwrap();

        let audited = TrScoring::ResimulateAudit { cfg: &cfg, pool: &pool };
        let a = tr_score_with(&m, &labels, 2, &audited).unwrap();
        let b = tr_score(&m, &labels, 2).unwrap();
        assert_eq!(a, b);

        // Breaking a stored action sequence must trip the audit.
        let mut broken = demos.clone();
        for a in broken[0].actions.iter_mut() {
            *a = Action::Pad(4);
        }
        let pool2: Vec<&Trajectory> = broken.iter().collect();
        let audited = TrScoring::ResimulateAudit { cfg: &cfg, pool: &pool2 };
        assert!(matches!(
            tr_score_with(&m, &labels, 2, &audited),
            Err(MetricsError::AuditFailed(0))
        ));
    }

    #[test]
    fn sweep_matches_individually_scored_ks() {
        let (m, labels) = clustered_matrix(4, 3, 5.0, 17);
        let report = retrieval_sweep(&m, &labels, &[1, 3, 5, 11]).unwrap();
        assert_eq!(report.pool_size, 12);
        for &(k, tr) in &report.scores {
            assert!((0.0..=1.0).contains(&tr));
            assert_eq!(tr, tr_score(&m, &labels, k).unwrap(), "k={k}");
        }
        assert!(matches!(
            retrieval_sweep(&m, &labels, &[0, 3]),
            Err(MetricsError::Knn(PseudoError::KOutOfRange { k: 0, .. }))
        ));
    }

    #[test]
    fn pca_recovers_a_planted_principal_axis() {
        // Points spread along e0 with small noise elsewhere: the first axis
        // must align with e0 and dominate the spectrum.
        let d = 8;
        let n = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut rows = Vec::with_capacity(n * d);
        for _ in 0..n {
            let main: f64 = rng.random_range(-10.0..10.0);
            rows.push(main + 100.0); // off-center to exercise centering
            for _ in 1..d {
                rows.push(rng.random_range(-0.1..0.1));
            }
        }
        let m = EmbeddingMatrix { n, d, rows: rows.clone(), provenance: prov() };
        let (coords, eigs) = pca_project_2d(&m);
        assert!(eigs[0] > eigs[1], "eigenvalues out of order: {eigs:?}");
        assert!(eigs[0] > 100.0 * eigs[1], "first axis should dominate");
        // Projected first coordinate correlates (up to sign) with the
        // planted coordinate.
        let planted: Vec<f64> = (0..n).map(|i| rows[i * d] - 100.0).collect();
        let dot: f64 = coords.iter().zip(&planted).map(|(c, p)| c[0] * p).sum();
        let nc = coords.iter().map(|c| c[0] * c[0]).sum::<f64>().sqrt();
        let np = planted.iter().map(|p| p * p).sum::<f64>().sqrt();
        assert!((dot.abs() / (nc * np) - 1.0).abs() < 1e-6);
    }
}
