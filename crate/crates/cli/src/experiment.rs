//! One experiment end to end: cached dataset, teacher, optional
//! self-training rounds, per-round success and retrieval metrics, and a
//! summary table plus charts under a single directory named by the spec
//! hash. Every stage is content-cached in the store, so an interrupted
//! experiment resumes from its last finished stage, and a re-run from the
//! same spec reproduces the summary byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use oslab_core::data::{make_split, task_split};
use oslab_core::env::EnvConfig;
use oslab_core::metrics::{eval_success, retrieval_sweep, RolloutPolicy};
use oslab_core::nn::Model;

use crate::spec::ExperimentSpec;
use crate::store::{write_json, Cached, DatasetKey, Store};
use crate::svg;

/// Task and label splits are protocol constants, not knobs: every
/// experiment shares them so settings stay comparable.
pub const TASK_SPLIT_SEED: u64 = 0;
pub const LABEL_SPLIT_SEED: u64 = 0;

/// Neighbor counts of the retrieval sweep, clipped to the pool size.
pub const SWEEP_KS: [usize; 5] = [1, 10, 50, 100, 200];

pub const SUMMARY_HEADER: &str = "config,split,seed,k,metric,value";

/// One line of an experiment's `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Content id of the training run the value belongs to.
    pub config: String,
    /// "train"/"test" for rollouts, "pool" for retrieval.
    pub split: String,
    /// Evaluation seed; empty for aggregates and retrieval.
    pub seed: String,
    /// Swept neighbor count; empty for rollout metrics.
    pub k: String,
    /// Metric name prefixed by the self-training round, e.g. "r1.success".
    pub metric: String,
    pub value: f64,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.config, r.split, r.seed, r.k, r.metric, r.value)
            .expect("string writes are infallible");
    }
    out
}

pub fn parse_summary(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(SUMMARY_HEADER) => {}
        other => bail!("summary header is {other:?}, expected {SUMMARY_HEADER:?}"),
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let [config, split, seed, k, metric, value] = fields[..] else {
            bail!("summary line {} has {} fields, expected 6", ln + 2, fields.len());
        };
        rows.push(SummaryRow {
            config: config.to_string(),
            split: split.to_string(),
            seed: seed.to_string(),
            k: k.to_string(),
            metric: metric.to_string(),
            value: value.parse().with_context(|| format!("summary line {}", ln + 2))?,
        });
    }
    Ok(rows)
}

/// Artifact pointers of one finished round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: usize,
    /// Training-run content id; doubles as the checkpoint id in reports.
    pub run: String,
    /// Pool embedding of this round's encoder.
    pub embeddings: String,
    /// Pseudo pairs this round consumed (absent for the teacher).
    pub pairs: Option<String>,
}

/// `manifest.json`: every store artifact the experiment depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: String,
    pub dataset: String,
    pub rounds: Vec<RoundEntry>,
}

pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub rows: Vec<SummaryRow>,
}

pub fn experiment_dir(out_root: &Path, spec: &ExperimentSpec) -> PathBuf {
    out_root.join(format!("exp-{}", spec.id()))
}

pub fn run_experiment(
    spec: &ExperimentSpec,
    store: &Store,
    out_root: &Path,
) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let dir = experiment_dir(out_root, spec);
    fs::create_dir_all(dir.join("charts"))?;
    write_json(&dir.join("spec.json"), spec)?;

    let env = EnvConfig::default_for(spec.env);
    let tasks = task_split(&env, TASK_SPLIT_SEED);
    let ds = store.ensure_dataset(&DatasetKey {
        env: env.clone(),
        split_seed: TASK_SPLIT_SEED,
        per_class: spec.per_class,
        collect_seed: 0,
    })?;
    let ds_id = ds.id;
    let dataset = make_split(ds.value, spec.label_fraction, LABEL_SPLIT_SEED, false)?;
    let labels: Vec<usize> =
        dataset.unlabeled.iter().map(|&i| dataset.demo(i).task_id()).collect();
    let ks: Vec<usize> = SWEEP_KS.iter().copied().filter(|&k| k < labels.len()).collect();

    let mut rows = Vec::new();
    let mut rounds = Vec::new();
    let mut prev: Option<(String, Model)> = None;
    for round in 1..=spec.rounds {
        let cfg = spec.train_config(round);
        // Pseudo pairs come from the previous round's encoder; its pool
        // embedding is already cached from that round's retrieval sweep.
        let pairs = match &prev {
            None => None,
            Some((prev_id, prev_model)) => {
                let emb = store.ensure_embeddings(
                    prev_id,
                    prev_model,
                    &ds_id,
                    &dataset,
                    cfg.token_stride,
                )?;
                Some(store.ensure_pairs(&emb.id, &emb.value, spec.k)?)
            }
        };
        let run = store.ensure_run(
            &cfg,
            &ds_id,
            &dataset,
            pairs.as_ref().map(|p| (p.id.as_str(), &p.value)),
        )?;
        let Cached { id: run_id, value: model, .. } = run;

        for (tag, split) in [("train", &tasks.train), ("test", &tasks.test)] {
            let report = store
                .ensure_eval(&run_id, tag, TASK_SPLIT_SEED, spec.trials, &spec.eval_seeds, || {
                    eval_success(
                        &RolloutPolicy::Learned { model: &model, token_stride: cfg.token_stride },
                        &env,
                        split,
                        tag,
                        spec.trials,
                        &spec.eval_seeds,
                        &run_id,
                    )
                })?
                .value;
            for (s, rate) in report.seeds.iter().zip(&report.per_seed) {
                rows.push(SummaryRow {
                    config: run_id.clone(),
                    split: tag.to_string(),
                    seed: s.to_string(),
                    k: String::new(),
                    metric: format!("r{round}.success"),
                    value: *rate,
                });
            }
            for (name, value) in [("success_mean", report.mean), ("success_std", report.std)] {
                rows.push(SummaryRow {
                    config: run_id.clone(),
                    split: tag.to_string(),
                    seed: String::new(),
                    k: String::new(),
                    metric: format!("r{round}.{name}"),
                    value,
                });
            }
        }

        let emb = store.ensure_embeddings(&run_id, &model, &ds_id, &dataset, cfg.token_stride)?;
        let sweep = retrieval_sweep(&emb.value, &labels, &ks)?;
        for &(k, score) in &sweep.scores {
            rows.push(SummaryRow {
                config: run_id.clone(),
                split: "pool".to_string(),
                seed: String::new(),
                k: k.to_string(),
                metric: format!("r{round}.tr"),
                value: score,
            });
        }

        rounds.push(RoundEntry {
            round,
            run: run_id.clone(),
            embeddings: emb.id,
            pairs: pairs.map(|p| p.id),
        });
        prev = Some((run_id, model));
    }

    fs::write(dir.join("summary.csv"), summary_csv(&rows))?;
    let manifest = Manifest { spec: spec.id(), dataset: ds_id, rounds };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_charts(&dir, spec, &rows)?;
    Ok(ExperimentOutcome { dir, manifest, rows })
}

fn find_metric(rows: &[SummaryRow], split: &str, metric: &str) -> Option<f64> {
    rows.iter().find(|r| r.split == split && r.metric == metric).map(|r| r.value)
}

fn write_charts(dir: &Path, spec: &ExperimentSpec, rows: &[SummaryRow]) -> Result<()> {
    let title_base = format!(
        "{} {} f={} ({})",
        crate::spec::env_tag(spec.env),
        spec.setting,
        spec.label_fraction,
        spec.preset.name()
    );

    // Success bars: one group per round, train and test bars with
    // sample-std whiskers over the evaluation seeds.
    let mut groups = Vec::new();
    for round in 1..=spec.rounds {
        let mut bars = Vec::new();
        for split in ["train", "test"] {
            let mean = find_metric(rows, split, &format!("r{round}.success_mean"));
            let std = find_metric(rows, split, &format!("r{round}.success_std"));
            if let Some(mean) = mean {
                bars.push(svg::Bar {
                    label: split.to_string(),
                    value: mean,
                    whisker: std.unwrap_or(0.0),
                });
            }
        }
        groups.push(svg::BarGroup { label: format!("round {round}"), bars });
    }
    fs::write(
        dir.join("charts").join("success.svg"),
        svg::bar_chart(&format!("success: {title_base}"), "success rate", &groups),
    )?;

    // Retrieval lines: TR versus k, one series per round.
    let mut x_labels = Vec::new();
    for r in rows.iter().filter(|r| r.metric == "r1.tr") {
        x_labels.push(r.k.clone());
    }
    let mut series = Vec::new();
    for round in 1..=spec.rounds {
        let metric = format!("r{round}.tr");
        let values = x_labels
            .iter()
            .map(|k| {
                rows.iter()
                    .find(|r| r.metric == metric && &r.k == k)
                    .map(|r| r.value)
            })
            .collect();
        series.push(svg::Series { label: format!("round {round}"), values });
    }
    fs::write(
        dir.join("charts").join("retrieval.svg"),
        svg::line_chart(&format!("retrieval: {title_base}"), "k", "TR", &x_labels, &series),
    )?;
    Ok(())
}
