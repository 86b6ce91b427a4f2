//! Content-addressed artifact store. Every product (demo dataset,
//! training run, pool embedding, pseudo-pair set, evaluation report) lives
//! under a name derived from the hash of everything it depends on, so
//! repeated pipelines reuse finished stages and parallel workers never
//! collide: artifacts are written to a unique temp path and renamed into
//! place, and any losing writer's bytes equal the winner's.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use oslab_core::data::collect::build_dataset;
use oslab_core::data::{container, task_split, DemoDataset, DemoSet, Trajectory};
use oslab_core::env::EnvConfig;
use oslab_core::hash;
use oslab_core::metrics::{EvalReport, MetricsError};
use oslab_core::nn::Model;
use oslab_core::pseudo::{build_pseudo_pairs, embed_pool, EmbeddingMatrix, PseudoPairSet};
use oslab_core::train::{train, TrainConfig};

/// A store lookup result: the artifact's content id, the loaded value,
/// and whether this call produced it or found it cached.
pub struct Cached<T> {
    pub id: String,
    pub value: T,
    pub fresh: bool,
}

/// Everything demo generation depends on; its hash names the dataset.
/// Demos cover the train side of the task split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetKey {
    pub env: EnvConfig,
    pub split_seed: u64,
    pub per_class: usize,
    pub collect_seed: u64,
}

impl DatasetKey {
    pub fn standard(env: EnvConfig, per_class: usize) -> Self {
        Self { env, split_seed: 0, per_class, collect_seed: 0 }
    }

    pub fn id(&self) -> String {
        hash::short_hash(self)
    }
}

/// On-disk identity of a training run: its config plus the content ids of
/// the dataset and (for students) the pseudo-pair set it consumed. Written
/// to the run directory as `config.json`, which is all that is needed to
/// reproduce the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub cfg: TrainConfig,
    pub dataset: String,
    pub pairs: Option<String>,
}

#[derive(Serialize)]
struct EmbedKey<'a> {
    run: &'a str,
    dataset: &'a str,
    label_fraction: f64,
    label_seed: u64,
    exclude_labeled: bool,
    token_stride: usize,
}

#[derive(Serialize)]
struct PairsKey<'a> {
    embeddings: &'a str,
    k: usize,
}

#[derive(Serialize)]
struct EvalKey<'a> {
    run: &'a str,
    split: &'a str,
    split_seed: u64,
    trials: usize,
    seeds: &'a [u64],
}

pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["datasets", "runs", "embeddings", "pseudo", "evals", "retrievals"] {
            fs::create_dir_all(root.join(sub))
                .with_context(|| format!("creating artifact dir under {}", root.display()))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_path(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(format!("{id}.osld"))
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    pub fn checkpoint_path(&self, id: &str) -> PathBuf {
        self.run_dir(id).join("final.oslb")
    }

    pub fn embedding_path(&self, id: &str) -> PathBuf {
        self.root.join("embeddings").join(format!("{id}.bin"))
    }

    pub fn pairs_path(&self, id: &str) -> PathBuf {
        self.root.join("pseudo").join(format!("{id}.bin"))
    }

    pub fn eval_path(&self, id: &str) -> PathBuf {
        self.root.join("evals").join(format!("{id}.json"))
    }

    /// Generate, or reuse, the demo set for `key`. A fresh set is written
    /// with a sidecar `<id>.json` recording the key and discard count.
    pub fn ensure_dataset(&self, key: &DatasetKey) -> Result<Cached<DemoSet>> {
        let id = key.id();
        let path = self.dataset_path(&id);
        if path.exists() {
            let set = container::read_dataset(&path)
                .with_context(|| format!("reading cached dataset {id}"))?;
            return Ok(Cached { id, value: set, fresh: false });
        }
        let split = task_split(&key.env, key.split_seed);
        let report = build_dataset(&key.env, &split.train, key.per_class, key.collect_seed)?;
        let tmp = tmp_sibling(&path);
        container::write_dataset(&tmp, &report.set)?;
        publish_file(&tmp, &path)?;
        let meta = serde_json::json!({
            "key": key,
            "demos": report.set.demos.len(),
            "discarded": report.discarded,
        });
        write_json(&self.root.join("datasets").join(format!("{id}.json")), &meta)?;
        Ok(Cached { id, value: report.set, fresh: true })
    }

    pub fn load_dataset(&self, id: &str) -> Result<DemoSet> {
        let path = self.dataset_path(id);
        if !path.exists() {
            bail!("no cached dataset {id} under {}", self.root.display());
        }
        Ok(container::read_dataset(&path)?)
    }

    pub fn run_id(cfg: &TrainConfig, dataset_id: &str, pairs_id: Option<&str>) -> String {
        #[derive(Serialize)]
        struct RunKey<'a> {
            cfg: &'a TrainConfig,
            dataset: &'a str,
            pairs: Option<&'a str>,
        }
        hash::short_hash(&RunKey { cfg, dataset: dataset_id, pairs: pairs_id })
    }

    /// Train, or reuse, the run for (config, dataset, pairs). The run
    /// directory carries a `config.json` snapshot naming every input by
    /// content id, next to the checkpoints and the loss log.
    pub fn ensure_run(
        &self,
        cfg: &TrainConfig,
        dataset_id: &str,
        dataset: &DemoDataset,
        pairs: Option<(&str, &PseudoPairSet)>,
    ) -> Result<Cached<Model>> {
        let id = Self::run_id(cfg, dataset_id, pairs.map(|(pid, _)| pid));
        let dir = self.run_dir(&id);
        let ckpt = self.checkpoint_path(&id);
        if ckpt.exists() {
            let model = Model::load(&ckpt).with_context(|| format!("loading cached run {id}"))?;
            return Ok(Cached { id, value: model, fresh: false });
        }
        let tmp = tmp_sibling(&dir);
        fs::create_dir_all(&tmp)?;
        let record = RunRecord {
            cfg: cfg.clone(),
            dataset: dataset_id.to_string(),
            pairs: pairs.map(|(pid, _)| pid.to_string()),
        };
        write_json(&tmp.join("config.json"), &record)?;
        let outcome = train(cfg, dataset, pairs.map(|(_, set)| set), &tmp)
            .with_context(|| format!("training run {id}"))?;
        publish_dir(&tmp, &dir)?;
        Ok(Cached { id, value: outcome.model, fresh: true })
    }

    pub fn run_record(&self, id: &str) -> Result<RunRecord> {
        let path = self.run_dir(id).join("config.json");
        read_json(&path).with_context(|| format!("no cached run {id} under {}", self.root.display()))
    }

    pub fn load_run_model(&self, id: &str) -> Result<Model> {
        let path = self.checkpoint_path(id);
        if !path.exists() {
            bail!("no cached run {id} under {}", self.root.display());
        }
        Ok(Model::load(&path)?)
    }

    /// Embed the unlabeled pool with a run's encoder, content-cached. The
    /// embedding's provenance names the producing run.
    pub fn ensure_embeddings(
        &self,
        run_id: &str,
        model: &Model,
        dataset_id: &str,
        dataset: &DemoDataset,
        token_stride: usize,
    ) -> Result<Cached<EmbeddingMatrix>> {
        let id = hash::short_hash(&EmbedKey {
            run: run_id,
            dataset: dataset_id,
            label_fraction: dataset.manifest.label_fraction,
            label_seed: dataset.manifest.seed,
            exclude_labeled: dataset.manifest.exclude_labeled_from_pool,
            token_stride,
        });
        let path = self.embedding_path(&id);
        if path.exists() {
            return Ok(Cached { id: id.clone(), value: EmbeddingMatrix::load(&path)?, fresh: false });
        }
        let pool: Vec<&Trajectory> = dataset.unlabeled.iter().map(|&i| dataset.demo(i)).collect();
        let matrix = embed_pool(model, &pool, token_stride, run_id)?;
        let tmp = tmp_sibling(&path);
        matrix.save(&tmp)?;
        publish_file(&tmp, &path)?;
        Ok(Cached { id, value: matrix, fresh: true })
    }

    pub fn ensure_pairs(&self, emb_id: &str, m: &EmbeddingMatrix, k: usize) -> Result<Cached<PseudoPairSet>> {
        let id = hash::short_hash(&PairsKey { embeddings: emb_id, k });
        let path = self.pairs_path(&id);
        if path.exists() {
            return Ok(Cached { id: id.clone(), value: PseudoPairSet::load(&path)?, fresh: false });
        }
        let set = build_pseudo_pairs(m, k)?;
        let tmp = tmp_sibling(&path);
        set.save(&tmp)?;
        publish_file(&tmp, &path)?;
        Ok(Cached { id, value: set, fresh: true })
    }

    pub fn load_pairs(&self, id: &str) -> Result<PseudoPairSet> {
        let path = self.pairs_path(id);
        if !path.exists() {
            bail!("no cached pseudo-pair set {id} under {}", self.root.display());
        }
        Ok(PseudoPairSet::load(&path)?)
    }

    /// Evaluate, or reuse, success rates; reports are cached as JSON named
    /// by (run, split, protocol).
    pub fn ensure_eval(
        &self,
        run_id: &str,
        split: &str,
        split_seed: u64,
        trials: usize,
        seeds: &[u64],
        eval: impl FnOnce() -> Result<EvalReport, MetricsError>,
    ) -> Result<Cached<EvalReport>> {
        let id = hash::short_hash(&EvalKey { run: run_id, split, split_seed, trials, seeds });
        let path = self.eval_path(&id);
        if path.exists() {
            return Ok(Cached { id: id.clone(), value: read_json(&path)?, fresh: false });
        }
        let report = eval()?;
        let tmp = tmp_sibling(&path);
        write_json(&tmp, &report)?;
        publish_file(&tmp, &path)?;
        Ok(Cached { id, value: report, fresh: true })
    }
}

/// Pretty JSON with a trailing newline, the format of every store sidecar.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn tmp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    path.with_file_name(format!(".{name}.tmp-{}-{n}", std::process::id()))
}

/// Move a finished artifact into place. A concurrent writer may have
/// published the same content first; the loser just discards its copy.
fn publish_file(tmp: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        fs::remove_file(tmp)?;
        return Ok(());
    }
    match fs::rename(tmp, dst) {
        Ok(()) => Ok(()),
        Err(_) if dst.exists() => {
            let _ = fs::remove_file(tmp);
            Ok(())
        }
        Err(e) => Err(e).with_context(|| format!("publishing {}", dst.display())),
    }
}

fn publish_dir(tmp: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        fs::remove_dir_all(tmp)?;
        return Ok(());
    }
    match fs::rename(tmp, dst) {
        Ok(()) => Ok(()),
        Err(_) if dst.exists() => {
            let _ = fs::remove_dir_all(tmp);
            Ok(())
        }
        Err(e) => Err(e).with_context(|| format!("publishing {}", dst.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use oslab_core::data::make_split;
    use oslab_core::env::EnvKind;

    fn scratch(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("oslab-store-{tag}-{}", std::process::id()))
    }

    #[test]
    fn datasets_are_generated_once_and_reread_bit_exact() {
        let root = scratch("ds");
        let store = Store::open(&root).unwrap();
        let key = DatasetKey::standard(EnvConfig::default_for(EnvKind::PinPad), 2);
        let first = store.ensure_dataset(&key).unwrap();
        assert!(first.fresh);
        let second = store.ensure_dataset(&key).unwrap();
        assert!(!second.fresh);
        assert_eq!(first.id, second.id);
        assert_eq!(first.value, second.value);
        assert_eq!(store.load_dataset(&first.id).unwrap(), first.value);
        assert!(store.load_dataset("000000000000").is_err());
        fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn runs_cache_on_their_full_input_identity() {
        let root = scratch("run");
        let store = Store::open(&root).unwrap();
        let key = DatasetKey::standard(EnvConfig::default_for(EnvKind::PinPad), 2);
        let ds = store.ensure_dataset(&key).unwrap();
        let dataset = make_split(ds.value, 1.0, 0, false).unwrap();

        let mut cfg = TrainConfig::desk(EnvKind::PinPad);
        cfg.iterations = 2;
        cfg.batch_size = 2;
        cfg.contrastive_tasks = 2;
        cfg.timesteps_per_pair = 1;
        cfg.checkpoint_every = 0;

        let first = store.ensure_run(&cfg, &ds.id, &dataset, None).unwrap();
        assert!(first.fresh);
        let second = store.ensure_run(&cfg, &ds.id, &dataset, None).unwrap();
        assert!(!second.fresh);
        assert_eq!(first.id, second.id);
        assert_eq!(first.value.params.entries().len(), second.value.params.entries().len());

        let record = store.run_record(&first.id).unwrap();
        assert_eq!(record.cfg, cfg);
        assert_eq!(record.dataset, ds.id);
        assert!(record.pairs.is_none());

        // A different seed is a different run.
        cfg.seed = 7;
        let third = store.ensure_run(&cfg, &ds.id, &dataset, None).unwrap();
        assert!(third.fresh);
        assert_ne!(third.id, first.id);
        fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn embeddings_and_pairs_chain_their_provenance() {
        let root = scratch("emb");
        let store = Store::open(&root).unwrap();
        let key = DatasetKey::standard(EnvConfig::default_for(EnvKind::PinPad), 2);
        let ds = store.ensure_dataset(&key).unwrap();
        let dataset = make_split(ds.value, 1.0, 0, false).unwrap();

        let mut cfg = TrainConfig::desk(EnvKind::PinPad);
        cfg.iterations = 1;
        cfg.batch_size = 2;
        cfg.contrastive_tasks = 2;
        cfg.timesteps_per_pair = 1;
        cfg.checkpoint_every = 0;
        let run = store.ensure_run(&cfg, &ds.id, &dataset, None).unwrap();

        let emb = store
            .ensure_embeddings(&run.id, &run.value, &ds.id, &dataset, cfg.token_stride)
            .unwrap();
        assert!(emb.fresh);
        assert_eq!(emb.value.provenance.checkpoint, run.id);
        assert_eq!(emb.value.n, dataset.unlabeled.len());
        let again = store
            .ensure_embeddings(&run.id, &run.value, &ds.id, &dataset, cfg.token_stride)
            .unwrap();
        assert!(!again.fresh);
        assert_eq!(again.value.rows, emb.value.rows);

        let pairs = store.ensure_pairs(&emb.id, &emb.value, 3).unwrap();
        assert_eq!(pairs.value.k, 3);
        assert_eq!(pairs.value.provenance.checkpoint, run.id);
        assert_eq!(store.load_pairs(&pairs.id).unwrap().neighbors, pairs.value.neighbors);
        fs::remove_dir_all(&root).unwrap();
    }
}
