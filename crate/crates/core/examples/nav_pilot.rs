//! Full desk-scale SemanticNav pilot: dataset, three teacher variants, and
//! retrieval scores. Prints TR@k per variant plus the imitation-loss
//! halving statistic from the first run's log.

use std::time::Instant;

use oslab_core::data::{collect::build_dataset, make_split, task_split, Trajectory};
use oslab_core::env::{EnvConfig, EnvKind};
use oslab_core::metrics::retrieval_sweep;
use oslab_core::pseudo::embed_pool;
use oslab_core::train::{train, TrainConfig};

fn main() {
    let cfg = EnvConfig::default_for(EnvKind::SemanticNav);
    let split = task_split(&cfg, 0);
    let t0 = Instant::now();
    let report = build_dataset(&cfg, &split.train, 800, 0).unwrap();
    println!(
        "dataset: {} demos, {} discarded, {:.1}s",
        report.set.demos.len(),
        report.discarded,
        t0.elapsed().as_secs_f64()
    );
    let ds = make_split(report.set, 0.15, 0, false).unwrap();
    println!("labeled: {} of {}", ds.labeled_count(), ds.set.demos.len());

    let labels: Vec<usize> = ds.unlabeled.iter().map(|&i| ds.demo(i).task_id()).collect();

    let variants: [(&str, bool, bool); 3] = [
        ("imitation", false, false),
        ("+contrastive", true, false),
        ("+contrastive+aug", true, true),
    ];
    for (name, con, aug) in variants {
        let mut tc = TrainConfig::desk(EnvKind::SemanticNav);
        tc.label_fraction = 0.15;
        tc.use_contrastive = con;
        tc.use_selfsup = aug;
        let dir = std::env::temp_dir().join(format!("oslab-pilot-{}", name.replace('+', "p")));
        let t0 = Instant::now();
        let out = train(&tc, &ds, None, &dir).unwrap();
        let train_s = t0.elapsed().as_secs_f64();

        if name == "imitation" {
            let head: f64 =
                out.loss_log[..100].iter().map(|r| r.loss_im).sum::<f64>() / 100.0;
            let n = out.loss_log.len();
            let tail: f64 =
                out.loss_log[n - 100..].iter().map(|r| r.loss_im).sum::<f64>() / 100.0;
            println!("smoke: start MA {head:.4}, end MA {tail:.4}, ratio {:.3}", tail / head);
        }

        let pool: Vec<&Trajectory> = ds.unlabeled.iter().map(|&i| ds.demo(i)).collect();
        let t1 = Instant::now();
        let m = embed_pool(&out.model, &pool, tc.token_stride, name).unwrap();
        let sweep = retrieval_sweep(&m, &labels, &[1, 10, 50, 100, 200]).unwrap();
        println!(
            "{name}: train {train_s:.0}s, embed+tr {:.0}s, TR {:?}",
            t1.elapsed().as_secs_f64(),
            sweep
                .scores
                .iter()
                .map(|(k, v)| format!("@{k}={v:.3}"))
                .collect::<Vec<_>>()
        );
        std::fs::remove_dir_all(&dir).ok();
    }
}
