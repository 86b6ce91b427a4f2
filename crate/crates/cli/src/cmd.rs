//! The `oslab` command-line surface: argument definitions, the
//! config-file/flag merge (restating a value is fine, contradicting it is
//! an error), and dispatch into the store and experiment pipeline.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oslab_core::data::{make_split, task_split, DemoDataset};
use oslab_core::env::{EnvConfig, EnvKind};
use oslab_core::metrics::{eval_success, pca_project_2d, retrieval_sweep, RolloutPolicy};
use oslab_core::nn::{EncoderVariant, Model};
use oslab_core::train::TrainConfig;

use crate::experiment::{run_experiment, ExperimentOutcome, LABEL_SPLIT_SEED, TASK_SPLIT_SEED};
use crate::report::emit_report;
use crate::spec::{
    default_per_class, env_tag, grid_fractions, parse_env, parse_preset, parse_setting,
    ExperimentSpec, Preset, Setting,
};
use crate::store::{read_json, write_json, DatasetKey, RunRecord, Store};

pub fn parse_encoder(s: &str) -> Result<EncoderVariant, String> {
    match s {
        "final-frame" => Ok(EncoderVariant::FinalFrame),
        "transformer" => Ok(EncoderVariant::Transformer),
        other => Err(format!("unknown encoder {other:?}; expected final-frame or transformer")),
    }
}

#[derive(Parser)]
#[command(
    name = "oslab",
    version,
    about = "One-shot imitation lab: demo datasets, training, relabeling, evaluation, reports"
)]
pub struct Cli {
    /// Artifact cache root shared by every subcommand.
    #[arg(long, global = true, default_value = "artifacts")]
    pub artifacts: PathBuf,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Collect expert demos for the train-task split and cache them.
    GenData(GenDataArgs),
    /// Train one model; the run is cached under its content id.
    Train(TrainArgs),
    /// Embed the unlabeled pool with a run's encoder and build pseudo pairs.
    Relabel(RelabelArgs),
    /// Rollout success rates of a cached run on the task splits.
    Eval(EvalArgs),
    /// Retrieval-score sweep of a cached run's pool embedding.
    Retrieval(RetrievalArgs),
    /// Run the setting x fraction experiment grid and report it.
    Sweep(SweepArgs),
    /// Merge finished experiments into one CSV plus comparison charts.
    Report(ReportArgs),
    /// Dump a run's pool embedding (optionally with a 2-D PCA view) as CSV.
    EmbedDump(EmbedDumpArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Environment: semantic-nav or pinpad.
    #[arg(long, value_parser = parse_env)]
    pub env: EnvKind,
    /// Demos per task class (default: the --preset sizing).
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Preset whose dataset sizing to default to.
    #[arg(long, default_value = "desk", value_parser = parse_preset)]
    pub preset: Preset,
    /// Demo-collection seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train/test task partition seed.
    #[arg(long, default_value_t = TASK_SPLIT_SEED)]
    pub split_seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training config JSON; flags may restate its values but not
    /// contradict them.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment: semantic-nav or pinpad (required without --config).
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvKind>,
    /// Preset the config starts from: paper or desk (default desk).
    /// Meaningless next to --config, which already fixes every field.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Loss-switch shorthand; sets --use-contrastive/--use-selfsup.
    #[arg(long, value_parser = parse_setting)]
    pub setting: Option<Setting>,
    /// Task encoder: final-frame or transformer.
    #[arg(long, value_parser = parse_encoder)]
    pub encoder: Option<EncoderVariant>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub use_contrastive: Option<bool>,
    #[arg(long)]
    pub use_selfsup: Option<bool>,
    #[arg(long)]
    pub weight_contrastive: Option<f64>,
    #[arg(long)]
    pub weight_selfsup: Option<f64>,
    #[arg(long)]
    pub weight_pseudo: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub contrastive_tasks: Option<usize>,
    #[arg(long)]
    pub timesteps_per_pair: Option<usize>,
    #[arg(long)]
    pub selfsup_frames: Option<usize>,
    #[arg(long)]
    pub token_stride: Option<usize>,
    #[arg(long)]
    pub frame_stack: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Demos per task class in the cached dataset.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Pseudo-pair artifact id (from relabel) to train a student on.
    #[arg(long)]
    pub pairs: Option<String>,
}

#[derive(Args)]
pub struct RelabelArgs {
    /// Training run whose encoder embeds the pool.
    #[arg(long)]
    pub run: String,
    /// Neighbors per pool anchor.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: String,
    /// Task split: train, test, or both.
    #[arg(long, default_value = "both")]
    pub split: String,
    /// Rollout trials per evaluation seed.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
}

#[derive(Args)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub run: String,
    /// Comma-separated neighbor counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,10,50,100,200")]
    pub k: Vec<usize>,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Environment: semantic-nav or pinpad.
    #[arg(long, value_parser = parse_env)]
    pub env: EnvKind,
    /// Comma-separated setting names, or "all".
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub settings: Vec<String>,
    /// Comma-separated label fractions (default: the environment's grid).
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_preset, default_value = "desk")]
    pub preset: Preset,
    /// Neighbors per pool anchor for relabel settings.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Self-training rounds for relabel settings.
    #[arg(long, default_value_t = 2)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub train_seed: u64,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Rollout trials per evaluation seed.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Demos per task class (default: the --preset sizing).
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Override the preset's training iterations (0 keeps them).
    #[arg(long, default_value_t = 0)]
    pub iterations: usize,
    /// Worker threads; each experiment runs on one worker.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Experiment output root (default <artifacts>/experiments).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Experiment directories (each holding spec.json + summary.csv).
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub experiments: Vec<PathBuf>,
    /// Output directory (default <artifacts>/report).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EmbedDumpArgs {
    #[arg(long)]
    pub run: String,
    /// Also write a 2-D PCA projection of the embedding.
    #[arg(long)]
    pub pca: bool,
    /// Output directory (default <artifacts>/dumps/<run>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolve the training config from `--config` and/or flags. With a file,
/// every flag must agree with it; without one, flags override the preset.
pub fn merged_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let (mut cfg, strict, origin) = match &args.config {
        Some(path) => {
            let cfg: TrainConfig = read_json(path)?;
            if args.preset.is_some() {
                bail!(
                    "--preset conflicts with --config {}: the file already fixes every field",
                    path.display()
                );
            }
            (cfg, true, path.display().to_string())
        }
        None => {
            let env = args.env.ok_or_else(|| anyhow!("--env is required without --config"))?;
            (args.preset.unwrap_or(Preset::Desk).base(env), false, String::new())
        }
    };
    if strict {
        if let Some(env) = args.env {
            if cfg.env.kind() != env {
                bail!("--env {} conflicts with {} in {origin}", env_tag(env), env_tag(cfg.env.kind()));
            }
        }
    }
    if let Some(enc) = args.encoder {
        if strict && cfg.encoder != enc {
            bail!("--encoder conflicts with the one in {origin}");
        }
        cfg.encoder = enc;
    }
    if let Some(s) = args.setting {
        if args.use_contrastive.is_some() || args.use_selfsup.is_some() {
            bail!("--setting conflicts with --use-contrastive/--use-selfsup; pick one form");
        }
        if strict
            && (cfg.use_contrastive != s.uses_contrastive() || cfg.use_selfsup != s.uses_selfsup())
        {
            bail!("--setting {s} conflicts with the loss switches in {origin}");
        }
        cfg.use_contrastive = s.uses_contrastive();
        cfg.use_selfsup = s.uses_selfsup();
    }
    macro_rules! merge {
        ($($flag:ident => $field:ident),+ $(,)?) => {
            $(if let Some(v) = args.$flag {
                if strict && cfg.$field != v {
                    bail!(
                        "--{} {} conflicts with {} in {origin}",
                        stringify!($flag).replace('_', "-"),
                        v,
                        cfg.$field
                    );
                }
                cfg.$field = v;
            })+
        };
    }
    merge!(
        fraction => label_fraction,
        use_contrastive => use_contrastive,
        use_selfsup => use_selfsup,
        weight_contrastive => weight_contrastive,
        weight_selfsup => weight_selfsup,
        weight_pseudo => weight_pseudo,
        tau => tau,
        lr => lr,
        warmup => warmup,
        iterations => iterations,
        batch_size => batch_size,
        contrastive_tasks => contrastive_tasks,
        timesteps_per_pair => timesteps_per_pair,
        selfsup_frames => selfsup_frames,
        token_stride => token_stride,
        frame_stack => frame_stack,
        seed => seed,
        checkpoint_every => checkpoint_every,
    );
    Ok(cfg)
}

/// Expand a sweep invocation into validated experiment specs, one per
/// setting x fraction cell.
pub fn sweep_specs(args: &SweepArgs) -> Result<Vec<ExperimentSpec>> {
    let settings: Vec<Setting> = if args.settings.len() == 1 && args.settings[0] == "all" {
        Setting::ALL.to_vec()
    } else {
        args.settings
            .iter()
            .map(|s| parse_setting(s).map_err(|e| anyhow!(e)))
            .collect::<Result<_>>()?
    };
    let fractions = args
        .fractions
        .clone()
        .unwrap_or_else(|| grid_fractions(args.env).to_vec());
    let mut specs = Vec::new();
    for &fraction in &fractions {
        for &setting in &settings {
            let mut spec = ExperimentSpec::new(args.env, setting, fraction, args.preset);
            spec.k = args.k;
            if setting.relabels() {
                spec.rounds = args.rounds;
            }
            spec.train_seed = args.train_seed;
            spec.eval_seeds = args.seeds.clone();
            spec.trials = args.trials;
            if let Some(pc) = args.per_class {
                spec.per_class = pc;
            }
            spec.iterations = args.iterations;
            spec.validate()
                .with_context(|| format!("sweep cell {} f={}", setting, fraction))?;
            specs.push(spec);
        }
    }
    Ok(specs)
}

struct RunContext {
    record: RunRecord,
    model: Model,
    dataset: DemoDataset,
    env: EnvConfig,
}

fn run_context(store: &Store, run_id: &str) -> Result<RunContext> {
    let record = store.run_record(run_id)?;
    let model = store.load_run_model(run_id)?;
    let set = store.load_dataset(&record.dataset)?;
    let dataset = make_split(set, record.cfg.label_fraction, LABEL_SPLIT_SEED, false)?;
    let env = record.cfg.env.clone();
    Ok(RunContext { record, model, dataset, env })
}

fn pool_labels(dataset: &DemoDataset) -> Vec<usize> {
    dataset.unlabeled.iter().map(|&i| dataset.demo(i).task_id()).collect()
}

fn cache_tag(fresh: bool) -> &'static str {
    if fresh {
        "fresh"
    } else {
        "cached"
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let store = Store::open(&cli.artifacts)?;
    match cli.cmd {
        Cmd::GenData(args) => gen_data(&store, &args),
        Cmd::Train(args) => train_cmd(&store, &args),
        Cmd::Relabel(args) => relabel(&store, &args),
        Cmd::Eval(args) => eval(&store, &args),
        Cmd::Retrieval(args) => retrieval(&store, &args),
        Cmd::Sweep(args) => sweep(&store, &args),
        Cmd::Report(args) => report(&store, &args),
        Cmd::EmbedDump(args) => embed_dump(&store, &args),
    }
}

fn gen_data(store: &Store, args: &GenDataArgs) -> Result<()> {
    let key = DatasetKey {
        env: EnvConfig::default_for(args.env),
        split_seed: args.split_seed,
        per_class: args.per_class.unwrap_or_else(|| default_per_class(args.env, args.preset)),
        collect_seed: args.seed,
    };
    let ds = store.ensure_dataset(&key)?;
    println!("dataset {} ({})", ds.id, cache_tag(ds.fresh));
    println!("  {} demos -> {}", ds.value.demos.len(), store.dataset_path(&ds.id).display());
    Ok(())
}

fn train_cmd(store: &Store, args: &TrainArgs) -> Result<()> {
    let cfg = merged_train_config(args)?;
    let kind = cfg.env.kind();
    let ds = store.ensure_dataset(&DatasetKey {
        env: cfg.env.clone(),
        split_seed: TASK_SPLIT_SEED,
        per_class: args
            .per_class
            .unwrap_or_else(|| default_per_class(kind, args.preset.unwrap_or(Preset::Desk))),
        collect_seed: 0,
    })?;
    let dataset = make_split(ds.value, cfg.label_fraction, LABEL_SPLIT_SEED, false)?;
    let pairs = match &args.pairs {
        Some(id) => Some((id.clone(), store.load_pairs(id)?)),
        None => None,
    };
    let run = store.ensure_run(
        &cfg,
        &ds.id,
        &dataset,
        pairs.as_ref().map(|(id, set)| (id.as_str(), set)),
    )?;
    println!("run {} ({})", run.id, cache_tag(run.fresh));
    println!("  config {}", store.run_dir(&run.id).join("config.json").display());
    println!("  checkpoint {}", store.checkpoint_path(&run.id).display());
    Ok(())
}

fn relabel(store: &Store, args: &RelabelArgs) -> Result<()> {
    let ctx = run_context(store, &args.run)?;
    let emb = store.ensure_embeddings(
        &args.run,
        &ctx.model,
        &ctx.record.dataset,
        &ctx.dataset,
        ctx.record.cfg.token_stride,
    )?;
    let pairs = store.ensure_pairs(&emb.id, &emb.value, args.k)?;
    println!("embeddings {} ({}) -> {}", emb.id, cache_tag(emb.fresh), store.embedding_path(&emb.id).display());
    println!(
        "pairs {} ({}) k={} over {} pool demos -> {}",
        pairs.id,
        cache_tag(pairs.fresh),
        pairs.value.k,
        pairs.value.n,
        store.pairs_path(&pairs.id).display()
    );
    println!("train a student with: oslab train ... --pairs {}", pairs.id);
    Ok(())
}

fn eval(store: &Store, args: &EvalArgs) -> Result<()> {
    let ctx = run_context(store, &args.run)?;
    let splits = task_split(&ctx.env, TASK_SPLIT_SEED);
    let chosen: Vec<(&str, &[_])> = match args.split.as_str() {
        "train" => vec![("train", &splits.train[..])],
        "test" => vec![("test", &splits.test[..])],
        "both" => vec![("train", &splits.train[..]), ("test", &splits.test[..])],
        other => bail!("unknown split {other:?}; expected train, test, or both"),
    };
    for (tag, split) in chosen {
        let cached = store.ensure_eval(
            &args.run,
            tag,
            TASK_SPLIT_SEED,
            args.trials,
            &args.seeds,
            || {
                eval_success(
                    &RolloutPolicy::Learned {
                        model: &ctx.model,
                        token_stride: ctx.record.cfg.token_stride,
                    },
                    &ctx.env,
                    split,
                    tag,
                    args.trials,
                    &args.seeds,
                    &args.run,
                )
            },
        )?;
        let r = &cached.value;
        println!(
            "{tag}: success {:.3} +- {:.3} over {} seeds x {} trials ({}) -> {}",
            r.mean,
            r.std,
            r.seeds.len(),
            r.trials,
            cache_tag(cached.fresh),
            store.eval_path(&cached.id).display()
        );
    }
    Ok(())
}

fn retrieval(store: &Store, args: &RetrievalArgs) -> Result<()> {
    if args.k.is_empty() {
        bail!("--k needs at least one neighbor count");
    }
    let ctx = run_context(store, &args.run)?;
    let emb = store.ensure_embeddings(
        &args.run,
        &ctx.model,
        &ctx.record.dataset,
        &ctx.dataset,
        ctx.record.cfg.token_stride,
    )?;
    let labels = pool_labels(&ctx.dataset);
    let report = retrieval_sweep(&emb.value, &labels, &args.k)?;

    let mut header = String::from("k ");
    let mut line = String::from("TR");
    for &(k, tr) in &report.scores {
        let _ = write!(header, " {k:>7}");
        let _ = write!(line, " {tr:>7.3}");
    }
    println!("pool {} encoder {}", report.pool_size, args.run);
    println!("{header}");
    println!("{line}");

    let json_path = store.root().join("retrievals").join(format!("{}.json", emb.id));
    write_json(&json_path, &report)?;
    let mut csv = String::from("k,tr\n");
    for &(k, tr) in &report.scores {
        let _ = writeln!(csv, "{k},{tr}");
    }
    let csv_path = store.root().join("retrievals").join(format!("{}.csv", emb.id));
    std::fs::write(&csv_path, csv)?;
    println!("-> {} and .csv", json_path.display());
    Ok(())
}

fn sweep(store: &Store, args: &SweepArgs) -> Result<()> {
    let specs = sweep_specs(args)?;
    let out = args.out.clone().unwrap_or_else(|| store.root().join("experiments"));
    println!(
        "sweep: {} experiments on {} ({} preset) -> {}",
        specs.len(),
        env_tag(args.env),
        args.preset.name(),
        out.display()
    );

    let results: Vec<(usize, Result<ExperimentOutcome>)> = if args.parallel <= 1 {
        specs
            .iter()
            .enumerate()
            .map(|(i, spec)| (i, run_experiment(spec, store, &out)))
            .collect()
    } else {
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..args.parallel.min(specs.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= specs.len() {
                        break;
                    }
                    let outcome = run_experiment(&specs[i], store, &out);
                    results.lock().expect("no poisoned worker").push((i, outcome));
                });
            }
        });
        let mut v = results.into_inner().expect("workers joined");
        v.sort_by_key(|(i, _)| *i);
        v
    };

    let mut dirs = Vec::new();
    for (i, outcome) in results {
        let spec = &specs[i];
        let outcome = outcome
            .with_context(|| format!("experiment {} f={}", spec.setting, spec.label_fraction))?;
        println!(
            "  done {} f={} -> {}",
            spec.setting,
            spec.label_fraction,
            outcome.dir.display()
        );
        dirs.push(outcome.dir);
    }

    let report_dir = out.join("report");
    let files = emit_report(&dirs, &report_dir)?;
    println!("report: {} files under {}", files.len(), report_dir.display());
    Ok(())
}

fn report(store: &Store, args: &ReportArgs) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| store.root().join("report"));
    let files = emit_report(&args.experiments, &out)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn embed_dump(store: &Store, args: &EmbedDumpArgs) -> Result<()> {
    let ctx = run_context(store, &args.run)?;
    let emb = store.ensure_embeddings(
        &args.run,
        &ctx.model,
        &ctx.record.dataset,
        &ctx.dataset,
        ctx.record.cfg.token_stride,
    )?;
    let labels = pool_labels(&ctx.dataset);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| store.root().join("dumps").join(&args.run));
    std::fs::create_dir_all(&out)?;

    let m = &emb.value;
    let mut csv = String::from("index,task");
    for d in 0..m.d {
        let _ = write!(csv, ",d{d}");
    }
    csv.push('\n');
    for i in 0..m.n {
        let _ = write!(csv, "{i},{}", labels[i]);
        for v in m.row(i) {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let emb_path = out.join("embeddings.csv");
    std::fs::write(&emb_path, csv)?;
    println!("wrote {} ({} x {})", emb_path.display(), m.n, m.d);

    if args.pca {
        let (points, eigenvalues) = pca_project_2d(m);
        let mut csv = String::from("index,task,x,y\n");
        for (i, p) in points.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{},{}", labels[i], p[0], p[1]);
        }
        let pca_path = out.join("pca.csv");
        std::fs::write(&pca_path, csv)?;
        println!(
            "wrote {} (eigenvalues {:.4}, {:.4})",
            pca_path.display(),
            eigenvalues[0],
            eigenvalues[1]
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::error::ErrorKind;

    fn parse(argv: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(argv)
    }

    fn train_args(argv: &[&str]) -> TrainArgs {
        let mut full = vec!["oslab", "train"];
        full.extend_from_slice(argv);
        match parse(&full).expect("argv parses").cmd {
            Cmd::Train(args) => args,
            _ => unreachable!(),
        }
    }

    #[test]
    fn unknown_flags_are_rejected_and_help_exits_cleanly() {
        assert!(parse(&["oslab", "train", "--frobnicate"]).is_err());
        assert!(parse(&["oslab", "no-such-command"]).is_err());
        let help = parse(&["oslab", "train", "--help"]).err().expect("help is not a parse");
        assert_eq!(help.kind(), ErrorKind::DisplayHelp);
    }

    #[test]
    fn flags_override_the_preset_without_a_config_file() {
        let args = train_args(&["--env", "pinpad", "--lr", "0.001", "--setting", "+contrastive"]);
        let cfg = merged_train_config(&args).unwrap();
        assert_eq!(cfg.env.kind(), EnvKind::PinPad);
        assert_eq!(cfg.lr, 0.001);
        assert!(cfg.use_contrastive);
        assert!(!cfg.use_selfsup);
        assert_eq!(cfg.iterations, TrainConfig::desk(EnvKind::PinPad).iterations);

        let err = merged_train_config(&train_args(&["--lr", "0.001"])).unwrap_err();
        assert!(err.to_string().contains("--env"), "{err}");
    }

    #[test]
    fn config_file_conflicts_are_rejected_not_resolved() {
        let dir = std::env::temp_dir().join(format!("oslab-cmd-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        write_json(&path, &TrainConfig::desk(EnvKind::PinPad)).unwrap();
        let path_str = path.to_str().unwrap();

        // Restating the file's value is fine; contradicting it is not.
        let same = train_args(&["--config", path_str, "--lr", "0.0003"]);
        assert_eq!(merged_train_config(&same).unwrap().lr, 3e-4);
        let clash = train_args(&["--config", path_str, "--lr", "0.001"]);
        let err = merged_train_config(&clash).unwrap_err();
        assert!(err.to_string().contains("--lr"), "{err}");

        let preset = train_args(&["--config", path_str, "--preset", "desk"]);
        assert!(merged_train_config(&preset).unwrap_err().to_string().contains("--preset"));
        let env = train_args(&["--config", path_str, "--env", "semantic-nav"]);
        assert!(merged_train_config(&env).unwrap_err().to_string().contains("--env"));
        let switches = train_args(&["--config", path_str, "--setting", "+contrastive"]);
        assert!(merged_train_config(&switches).is_err(), "file has contrastive off");
        let both =
            train_args(&["--env", "pinpad", "--setting", "imitation", "--use-contrastive", "true"]);
        assert!(merged_train_config(&both).is_err(), "two spellings of one switch");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn sweeps_expand_the_full_matrix() {
        let cli = parse(&[
            "oslab",
            "sweep",
            "--env",
            "semantic-nav",
            "--fractions",
            "1.0,0.3,0.15",
            "--settings",
            "all",
            "--preset",
            "desk",
        ])
        .unwrap();
        let Cmd::Sweep(args) = cli.cmd else { unreachable!() };
        let specs = sweep_specs(&args).unwrap();
        assert_eq!(specs.len(), 15, "5 settings x 3 fractions");
        assert!(specs.iter().all(|s| s.preset == Preset::Desk));
        assert_eq!(specs.iter().filter(|s| s.rounds == 2).count(), 6, "two relabel settings per fraction");

        let cli = parse(&[
            "oslab",
            "sweep",
            "--env",
            "pinpad",
            "--settings",
            "imitation,+contrastive",
            "--fractions",
            "0.05",
        ])
        .unwrap();
        let Cmd::Sweep(args) = cli.cmd else { unreachable!() };
        assert_eq!(sweep_specs(&args).unwrap().len(), 2);

        let cli = parse(&["oslab", "sweep", "--env", "pinpad", "--settings", "+contrastive+aug"]).unwrap();
        let Cmd::Sweep(args) = cli.cmd else { unreachable!() };
        assert!(sweep_specs(&args).is_err(), "augmentation needs semantic-nav");
    }

    #[test]
    fn list_flags_split_on_commas() {
        let cli = parse(&["oslab", "eval", "--run", "abc", "--seeds", "3,4,5"]).unwrap();
        let Cmd::Eval(args) = cli.cmd else { unreachable!() };
        assert_eq!(args.seeds, vec![3, 4, 5]);
        let cli = parse(&["oslab", "retrieval", "--run", "abc", "--k", "1,10,50,100,200"]).unwrap();
        let Cmd::Retrieval(args) = cli.cmd else { unreachable!() };
        assert_eq!(args.k, vec![1, 10, 50, 100, 200]);
    }
}
