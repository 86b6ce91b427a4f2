//! Wall-clock measurements for training steps, evaluation trials, and pool
//! embedding at desk-preset batch sizes. Run with --release.

use std::time::Instant;

use oslab_core::data::{collect, make_split, DemoSet, Trajectory};
use oslab_core::env::{all_tasks, EnvConfig, EnvKind, Image};
use oslab_core::metrics::{eval_success, RolloutPolicy};
use oslab_core::pseudo::{build_pseudo_pairs, embed_pool};
use oslab_core::train::{train, TrainConfig};

fn dataset(kind: EnvKind, tasks_n: usize, per_task: usize) -> oslab_core::data::DemoDataset {
    let cfg = EnvConfig::default_for(kind);
    let tasks = all_tasks(&cfg);
    let mut demos = Vec::new();
    for (i, task) in tasks.iter().take(tasks_n).enumerate() {
        demos.extend(collect::collect(&cfg, task, per_task, 1000 + i as u64).unwrap().demos);
    }
    make_split(DemoSet { cfg, demos }, 1.0, 0, false).unwrap()
}

fn time_train(label: &str, cfg: &TrainConfig, ds: &oslab_core::data::DemoDataset, pseudo: bool) {
    let dir = std::env::temp_dir().join(format!("oslab-bench-{label}-{}", std::process::id()));
    let pairs = if pseudo {
        let model = oslab_core::nn::Model::new(cfg.model_config(), 0);
        let pool: Vec<&Trajectory> = ds.unlabeled.iter().map(|&i| ds.demo(i)).collect();
        let m = embed_pool(&model, &pool, cfg.token_stride, "bench").unwrap();
        Some(build_pseudo_pairs(&m, 5).unwrap())
    } else {
        None
    };
    let steps = cfg.iterations;
    let t0 = Instant::now();
    train(cfg, ds, pairs.as_ref(), &dir).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("{label}: {:.1} ms/step ({steps} steps in {dt:.2}s)", dt / steps as f64 * 1e3);
    std::fs::remove_dir_all(&dir).ok();
}

fn main() {
    let nav = dataset(EnvKind::SemanticNav, 4, 24);
    let pad = dataset(EnvKind::PinPad, 4, 24);
    println!(
        "datasets: nav {} demos (mean len {:.1}), pad {} demos (mean len {:.1})",
        nav.set.demos.len(),
        nav.set.demos.iter().map(|d| d.actions.len()).sum::<usize>() as f64
            / nav.set.demos.len() as f64,
        pad.set.demos.len(),
        pad.set.demos.iter().map(|d| d.actions.len()).sum::<usize>() as f64
            / pad.set.demos.len() as f64,
    );

    let steps = 40;

    let mut c = TrainConfig::desk(EnvKind::SemanticNav);
    c.iterations = steps;
    time_train("nav-imitation", &c, &nav, false);

    c.use_contrastive = true;
    time_train("nav-contrastive", &c, &nav, false);

    c.use_selfsup = true;
    time_train("nav-con-aug", &c, &nav, false);
    time_train("nav-con-aug-pseudo", &c, &nav, true);

    let mut p = TrainConfig::desk(EnvKind::PinPad);
    p.iterations = steps;
    p.use_contrastive = true;
    time_train("pad-contrastive", &p, &pad, false);
    time_train("pad-contrastive-pseudo", &p, &pad, true);

    // Evaluation cost: learned policy, fresh demo per trial.
    let model = oslab_core::nn::Model::new(c.model_config(), 0);
    let cfg_env = EnvConfig::default_for(EnvKind::SemanticNav);
    let split = all_tasks(&cfg_env);
    let t0 = Instant::now();
    let trials = 20;
    eval_success(
        &RolloutPolicy::Learned { model: &model, token_stride: 1 },
        &cfg_env,
        &split,
        "train",
        trials,
        &[0],
        "bench",
    )
    .unwrap();
    println!("nav eval: {:.1} ms/trial", t0.elapsed().as_secs_f64() / trials as f64 * 1e3);

    let model = oslab_core::nn::Model::new(p.model_config(), 0);
    let cfg_env = EnvConfig::default_for(EnvKind::PinPad);
    let split = all_tasks(&cfg_env);
    let t0 = Instant::now();
    eval_success(
        &RolloutPolicy::Learned { model: &model, token_stride: 4 },
        &cfg_env,
        &split,
        "train",
        trials,
        &[0],
        "bench",
    )
    .unwrap();
    println!("pad eval: {:.1} ms/trial", t0.elapsed().as_secs_f64() / trials as f64 * 1e3);

    // Pool embedding throughput.
    let model = oslab_core::nn::Model::new(c.model_config(), 0);
    let pool: Vec<&Trajectory> = nav.unlabeled.iter().map(|&i| nav.demo(i)).collect();
    let t0 = Instant::now();
    embed_pool(&model, &pool, 1, "bench").unwrap();
    println!(
        "nav embed: {:.2} ms/demo ({} demos)",
        t0.elapsed().as_secs_f64() / pool.len() as f64 * 1e3,
        pool.len()
    );
    let model = oslab_core::nn::Model::new(p.model_config(), 0);
    let pool: Vec<&Trajectory> = pad.unlabeled.iter().map(|&i| pad.demo(i)).collect();
    let t0 = Instant::now();
    embed_pool(&model, &pool, 4, "bench").unwrap();
    println!(
        "pad embed: {:.2} ms/demo ({} demos)",
        t0.elapsed().as_secs_f64() / pool.len() as f64 * 1e3,
        pool.len()
    );

    let _ = Image::filled(1, 1, [0, 0, 0]);
}
