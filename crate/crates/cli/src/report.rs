//! Cross-experiment reporting: merge per-experiment summaries into one
//! long CSV and render per-environment comparison charts (final-round
//! success bars with whiskers, retrieval curves over k).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use oslab_core::env::EnvKind;

use crate::experiment::{parse_summary, SummaryRow, SUMMARY_HEADER};
use crate::spec::{env_tag, ExperimentSpec, Setting};
use crate::store::read_json;
use crate::svg;

pub struct LoadedExperiment {
    pub dir: PathBuf,
    pub spec: ExperimentSpec,
    pub rows: Vec<SummaryRow>,
}

pub fn load_experiment(dir: &Path) -> Result<LoadedExperiment> {
    let spec: ExperimentSpec = read_json(&dir.join("spec.json"))
        .with_context(|| format!("{} is not an experiment directory", dir.display()))?;
    let text = fs::read_to_string(dir.join("summary.csv"))
        .with_context(|| format!("experiment {} has no summary.csv", dir.display()))?;
    if text.lines().next() != Some(SUMMARY_HEADER) {
        bail!(
            "summary schema mismatch in {} (config {}): expected header {:?}",
            dir.display(),
            spec.id(),
            SUMMARY_HEADER
        );
    }
    let rows = parse_summary(&text)
        .with_context(|| format!("summary of {} (config {})", dir.display(), spec.id()))?;
    Ok(LoadedExperiment { dir: dir.to_path_buf(), spec, rows })
}

fn setting_rank(s: Setting) -> usize {
    Setting::ALL.iter().position(|&v| v == s).expect("every setting is enumerated")
}

/// The value of a final-round metric, e.g. ("test", "success_mean").
fn final_metric(e: &LoadedExperiment, split: &str, name: &str) -> Option<f64> {
    let metric = format!("r{}.{}", e.spec.rounds, name);
    e.rows.iter().find(|r| r.split == split && r.metric == metric).map(|r| r.value)
}

fn final_tr(e: &LoadedExperiment, k: &str) -> Option<f64> {
    let metric = format!("r{}.tr", e.spec.rounds);
    e.rows.iter().find(|r| r.metric == metric && r.k == k).map(|r| r.value)
}

/// Merge experiment summaries under `out`: `merged.csv` plus, per
/// environment present, success bar charts for both splits and a
/// retrieval chart. Returns the written paths.
pub fn emit_report(experiments: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if experiments.is_empty() {
        bail!("report needs at least one experiment directory");
    }
    let mut loaded: Vec<LoadedExperiment> = experiments
        .iter()
        .map(|d| load_experiment(d))
        .collect::<Result<_>>()?;
    // Deterministic order regardless of argument order: environment,
    // setting, descending fraction, then spec id for any remaining tie.
    loaded.sort_by(|a, b| {
        (env_tag(a.spec.env), setting_rank(a.spec.setting))
            .cmp(&(env_tag(b.spec.env), setting_rank(b.spec.setting)))
            .then(b.spec.label_fraction.total_cmp(&a.spec.label_fraction))
            .then(a.spec.id().cmp(&b.spec.id()))
    });
    fs::create_dir_all(out)?;
    let mut written = Vec::new();

    let mut csv = String::from("env,setting,fraction,preset,rounds,spec,config,split,seed,k,metric,value\n");
    for e in &loaded {
        for r in &e.rows {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                env_tag(e.spec.env),
                e.spec.setting,
                e.spec.label_fraction,
                e.spec.preset.name(),
                e.spec.rounds,
                e.spec.id(),
                r.config,
                r.split,
                r.seed,
                r.k,
                r.metric,
                r.value
            )
            .expect("string writes are infallible");
        }
    }
    let merged = out.join("merged.csv");
    fs::write(&merged, csv)?;
    written.push(merged);

    for kind in [EnvKind::SemanticNav, EnvKind::PinPad] {
        let subset: Vec<&LoadedExperiment> =
            loaded.iter().filter(|e| e.spec.env == kind).collect();
        if subset.is_empty() {
            continue;
        }
        written.extend(env_charts(kind, &subset, out)?);
    }
    Ok(written)
}

fn env_charts(kind: EnvKind, subset: &[&LoadedExperiment], out: &Path) -> Result<Vec<PathBuf>> {
    let tag = env_tag(kind);
    let mut written = Vec::new();

    // Success bars grouped by fraction (descending), one bar per setting.
    let mut fractions: Vec<f64> = Vec::new();
    for e in subset {
        if !fractions.iter().any(|f| f == &e.spec.label_fraction) {
            fractions.push(e.spec.label_fraction);
        }
    }
    fractions.sort_by(|a, b| b.total_cmp(a));
    for split in ["train", "test"] {
        let mut groups = Vec::new();
        for &f in &fractions {
            let mut bars = Vec::new();
            for e in subset.iter().filter(|e| e.spec.label_fraction == f) {
                if let Some(mean) = final_metric(e, split, "success_mean") {
                    bars.push(svg::Bar {
                        label: e.spec.setting.name().to_string(),
                        value: mean,
                        whisker: final_metric(e, split, "success_std").unwrap_or(0.0),
                    });
                }
            }
            groups.push(svg::BarGroup { label: format!("f={f}"), bars });
        }
        let path = out.join(format!("{tag}_success_{split}.svg"));
        fs::write(
            &path,
            svg::bar_chart(&format!("{tag}: {split} success by setting"), "success rate", &groups),
        )?;
        written.push(path);
    }

    // Retrieval curves: final-round TR over k, one series per experiment.
    let mut x_labels: Vec<String> = Vec::new();
    for e in subset {
        let metric = format!("r{}.tr", e.spec.rounds);
        for r in e.rows.iter().filter(|r| r.metric == metric) {
            if !x_labels.contains(&r.k) {
                x_labels.push(r.k.clone());
            }
        }
    }
    x_labels.sort_by_key(|k| k.parse::<usize>().unwrap_or(usize::MAX));
    let series: Vec<svg::Series> = subset
        .iter()
        .map(|e| svg::Series {
            label: format!("{} f={}", e.spec.setting, e.spec.label_fraction),
            values: x_labels.iter().map(|k| final_tr(e, k)).collect(),
        })
        .collect();
    let path = out.join(format!("{tag}_retrieval.svg"));
    fs::write(
        &path,
        svg::line_chart(&format!("{tag}: retrieval score"), "k", "TR", &x_labels, &series),
    )?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::summary_csv;
    use crate::spec::Preset;
    use crate::store::write_json;

    fn fake_experiment(dir: &Path, spec: &ExperimentSpec, success: f64) {
        fs::create_dir_all(dir).unwrap();
        write_json(&dir.join("spec.json"), spec).unwrap();
        let mut rows = Vec::new();
        for split in ["train", "test"] {
            for (name, v) in [("success_mean", success), ("success_std", 0.02)] {
                rows.push(SummaryRow {
                    config: "cfg0".into(),
                    split: split.into(),
                    seed: String::new(),
                    k: String::new(),
                    metric: format!("r{}.{name}", spec.rounds),
                    value: v,
                });
            }
        }
        for k in [1, 10] {
            rows.push(SummaryRow {
                config: "cfg0".into(),
                split: "pool".into(),
                seed: String::new(),
                k: k.to_string(),
                metric: format!("r{}.tr", spec.rounds),
                value: success / 2.0,
            });
        }
        fs::write(dir.join("summary.csv"), summary_csv(&rows)).unwrap();
    }

    #[test]
    fn merged_report_is_order_independent_and_complete() {
        let root = std::env::temp_dir().join(format!("oslab-report-{}", std::process::id()));
        let a_dir = root.join("a");
        let b_dir = root.join("b");
        let a = ExperimentSpec::new(EnvKind::PinPad, Setting::Imitation, 0.05, Preset::Desk);
        let b = ExperimentSpec::new(EnvKind::PinPad, Setting::Contrastive, 0.05, Preset::Desk);
        fake_experiment(&a_dir, &a, 0.3);
        fake_experiment(&b_dir, &b, 0.7);

        let out1 = root.join("r1");
        let out2 = root.join("r2");
        emit_report(&[a_dir.clone(), b_dir.clone()], &out1).unwrap();
        emit_report(&[b_dir.clone(), a_dir.clone()], &out2).unwrap();
        let m1 = fs::read_to_string(out1.join("merged.csv")).unwrap();
        let m2 = fs::read_to_string(out2.join("merged.csv")).unwrap();
        assert_eq!(m1, m2);
        assert!(m1.contains("pinpad,+contrastive,0.05,desk,1,"));
        assert!(out1.join("pinpad_success_test.svg").exists());
        assert!(out1.join("pinpad_retrieval.svg").exists());
        assert!(!out1.join("semantic-nav_retrieval.svg").exists());
        fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn incompatible_artifacts_name_the_offender() {
        let root = std::env::temp_dir().join(format!("oslab-report-bad-{}", std::process::id()));
        let dir = root.join("x");
        let spec = ExperimentSpec::new(EnvKind::PinPad, Setting::Imitation, 0.05, Preset::Desk);
        fs::create_dir_all(&dir).unwrap();
        write_json(&dir.join("spec.json"), &spec).unwrap();
        fs::write(dir.join("summary.csv"), "wrong,header\n").unwrap();

        let err = emit_report(&[dir.clone()], &root.join("out")).unwrap_err();
        assert!(err.to_string().contains(&spec.id()), "error names the config: {err}");

        assert!(emit_report(&[], &root.join("out")).is_err(), "empty input is a usage error");
        fs::remove_dir_all(&root).unwrap();
    }
}
