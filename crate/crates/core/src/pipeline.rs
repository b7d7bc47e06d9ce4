//! Stage orchestration for the command-line tool.
//!
//! Each stage reports failures as a [`StageError`] naming the stage. A run
//! writes `RUN.partial` into the output directory when it starts and removes
//! it only after the manifest is written, so an interrupted or failed run
//! leaves its completed artifacts next to a visible marker.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anomaly::{score_corpus, select_minority, AnomalyReport, ReportEntry};
use crate::checkpoint::{self, load_checkpoint, save_checkpoint};
use crate::cluster::{auto_eps, cluster_top_terms, dbscan, ClusterLabels, ClusterTerms, NOISE};
use crate::config::{EpsSetting, PipelineConfig};
use crate::corpus::{
    build_vocabulary_filtered, load_jsonl, load_stop_words, vectorize_all, CountVector, Document,
    Vocabulary,
};
use crate::dbm::{encode_all, fine_tune, pretrain, DbmModel};
use crate::embed2d::{tsne_keyed, Embedding2D, TsneConfig};
use crate::error::{Error, Result};
use crate::output::{embeddings_csv, scatter_svg, tsne_csv, write_artifact, ScatterPoint};

pub const MANIFEST_VERSION: u32 = 1;
pub const RUN_MARKER: &str = "RUN.partial";

pub const VOCAB_FILE: &str = "vocab.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const CLUSTER_TERMS_FILE: &str = "cluster_terms.json";
pub const TSNE_FILE: &str = "tsne.csv";
pub const SCATTER_FILE: &str = "scatter.svg";
pub const REPORT_CSV_FILE: &str = "anomaly_report.csv";
pub const REPORT_JSON_FILE: &str = "anomaly_report.json";
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Every artifact of a full run, in emission order.
pub const ARTIFACTS: [&str; 10] = [
    VOCAB_FILE,
    CHECKPOINT_FILE,
    EMBEDDINGS_FILE,
    CLUSTERS_FILE,
    CLUSTER_TERMS_FILE,
    TSNE_FILE,
    SCATTER_FILE,
    REPORT_CSV_FILE,
    REPORT_JSON_FILE,
    MANIFEST_FILE,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Ingest,
    Vectorize,
    Pretrain,
    FineTune,
    Checkpoint,
    Encode,
    Cluster,
    Embed,
    Score,
    Select,
    Emit,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Setup => "setup",
            Stage::Ingest => "ingest",
            Stage::Vectorize => "vectorize",
            Stage::Pretrain => "pretrain",
            Stage::FineTune => "fine-tune",
            Stage::Checkpoint => "checkpoint",
            Stage::Encode => "encode",
            Stage::Cluster => "cluster",
            Stage::Embed => "embed",
            Stage::Score => "score",
            Stage::Select => "select",
            Stage::Emit => "emit",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Default)]
struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>) -> StageResult<T> {
        self.time_staged(stage, || f().at(stage))
    }

    fn time_staged<T>(
        &mut self,
        stage: Stage,
        f: impl FnOnce() -> StageResult<T>,
    ) -> StageResult<T> {
        log::info!("stage {stage}");
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Everything needed to reproduce a run, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub checkpoint_format_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config: PipelineConfig,
    pub seed: u64,
    pub threads: usize,
    pub n_documents: usize,
    pub vocab_size: usize,
    pub holdout_ids: Vec<String>,
    pub fine_tuned: bool,
    pub effective_eps: f64,
    pub n_clusters: usize,
    pub n_noise: usize,
    pub effective_perplexity: Option<f64>,
    pub tsne_kl: Option<f64>,
    pub threshold: f64,
    pub n_flagged: usize,
    pub artifacts: Vec<String>,
    pub stage_timings: Vec<StageTiming>,
    pub wall_time_seconds: f64,
}

/// Loaded and vectorized corpus.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub docs: Vec<Document>,
    pub vocab: Vocabulary,
    pub vectors: Vec<CountVector>,
}

fn load_documents(cfg: &PipelineConfig) -> Result<Vec<Document>> {
    let docs = load_jsonl(&cfg.corpus)?;
    if docs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "corpus {} contains no documents",
            cfg.corpus.display()
        )));
    }
    Ok(docs)
}

/// Loads the corpus and builds its vocabulary and count vectors.
pub fn ingest(cfg: &PipelineConfig) -> StageResult<Ingested> {
    let docs = load_documents(cfg).at(Stage::Ingest)?;
    let stop = match &cfg.stop_words {
        Some(p) => load_stop_words(p).at(Stage::Ingest)?,
        None => Default::default(),
    };
    let vocab = build_vocabulary_filtered(&docs, cfg.max_k, &stop).at(Stage::Vectorize)?;
    if vocab.is_empty() {
        return Err(Error::InvalidInput(
            "the corpus yields an empty vocabulary".into(),
        ))
        .at(Stage::Vectorize);
    }
    let vectors = vectorize_all(&docs, &vocab);
    log::info!("{} documents, {} terms", docs.len(), vocab.len());
    Ok(Ingested {
        docs,
        vocab,
        vectors,
    })
}

/// Loads the corpus and vectorizes it against an existing vocabulary.
pub fn ingest_with_vocab(
    cfg: &PipelineConfig,
    vocab: &Vocabulary,
) -> StageResult<(Vec<Document>, Vec<CountVector>)> {
    let docs = load_documents(cfg).at(Stage::Ingest)?;
    let vectors = vectorize_all(&docs, vocab);
    Ok((docs, vectors))
}

/// Seeded shuffle of `0..n`; the last `⌈fraction·n⌉` indices (at most `n-1`)
/// form the holdout. Both parts are returned in ascending order.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
    let mut holdout = idx.split_off(n - n_hold);
    idx.sort_unstable();
    holdout.sort_unstable();
    (idx, holdout)
}

/// Trained model with the documents held out for early stopping.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: DbmModel,
    pub holdout_ids: Vec<String>,
    pub fine_tuned: bool,
}

fn train_model(cfg: &PipelineConfig, data: &Ingested, timer: &mut Timer) -> StageResult<Trained> {
    let ft = &cfg.fine_tune;
    let (train_idx, hold_idx) = if ft.enabled {
        holdout_split(data.vectors.len(), ft.holdout_fraction, cfg.split_seed())
    } else {
        ((0..data.vectors.len()).collect(), Vec::new())
    };
    let pick = |idx: &[usize]| -> Vec<CountVector> {
        idx.iter().map(|&i| data.vectors[i].clone()).collect()
    };
    let train = pick(&train_idx);
    let holdout = pick(&hold_idx);
    let model = timer.time(Stage::Pretrain, || {
        pretrain(
            &train,
            data.vocab.clone(),
            &cfg.layer1,
            &cfg.layer2,
            cfg.h1,
            cfg.h2,
        )
    })?;
    let (model, fine_tuned) = if ft.enabled && !holdout.is_empty() {
        (
            timer.time(Stage::FineTune, || {
                fine_tune(&model, &train, &holdout, &ft.params)
            })?,
            true,
        )
    } else {
        log::warn!("fine-tuning skipped");
        (model, false)
    };
    Ok(Trained {
        model,
        holdout_ids: hold_idx.iter().map(|&i| data.docs[i].id.clone()).collect(),
        fine_tuned,
    })
}

/// Configuration stored inside checkpoints. The output directory and thread
/// count are left out since neither changes the trained model.
pub fn config_snapshot(cfg: &PipelineConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(m) = v.as_object_mut() {
        m.remove("output");
        m.remove("threads");
    }
    v
}

/// Perplexity actually used for `n` points: the configured value, capped at
/// `(n-1)/3` when that still exceeds 1.
pub fn effective_perplexity(requested: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    let cap = (n - 1) as f64 / 3.0;
    Some(if requested <= cap {
        requested
    } else if cap > 1.0 {
        cap
    } else {
        requested.min(1.0 + 0.5 * (n - 2) as f64)
    })
}

/// Clustering result with the radius actually used.
#[derive(Debug, Clone)]
pub struct Clustered {
    pub labels: ClusterLabels,
    pub terms: ClusterTerms,
}

pub fn cluster_latent(
    cfg: &PipelineConfig,
    latent: ArrayView2<f64>,
    vectors: &[CountVector],
    vocab: &Vocabulary,
) -> Result<Clustered> {
    let eps = match cfg.dbscan.eps {
        EpsSetting::Auto => auto_eps(latent, cfg.dbscan.min_pts)?,
        EpsSetting::Value(e) => e,
    };
    let labels = dbscan(latent, eps, cfg.dbscan.min_pts)?;
    let terms = cluster_top_terms(&labels, vectors, vocab, cfg.dbscan.top_terms)?;
    log::info!(
        "dbscan eps {eps:.6}: {} clusters, {} noise",
        labels.n_clusters,
        labels.noise_count()
    );
    Ok(Clustered { labels, terms })
}

/// 2-D embedding keyed by corpus position. `None` when there are fewer than
/// three documents.
pub fn embed_latent(cfg: &PipelineConfig, latent: ArrayView2<f64>) -> Result<Option<Embedding2D>> {
    let n = latent.nrows();
    let Some(perplexity) = effective_perplexity(cfg.tsne.perplexity, n) else {
        log::warn!("t-SNE skipped: {n} documents");
        return Ok(None);
    };
    if perplexity != cfg.tsne.perplexity {
        log::warn!(
            "perplexity {} capped at {perplexity} for {n} documents",
            cfg.tsne.perplexity
        );
    }
    let keys: Vec<u64> = (0..n as u64).collect();
    let tcfg = TsneConfig {
        perplexity,
        ..cfg.tsne.clone()
    };
    tsne_keyed(latent, &keys, &tcfg).map(Some)
}

pub fn score_and_select(
    cfg: &PipelineConfig,
    model: &DbmModel,
    vectors: &[CountVector],
) -> StageResult<AnomalyReport> {
    let scores = score_corpus(model, vectors, cfg.anomaly.norm).at(Stage::Score)?;
    select_minority(&scores, cfg.anomaly.policy)
        .and_then(|r| r.with_reference(cfg.anomaly.reference))
        .at(Stage::Select)
}

fn report_json(report: &AnomalyReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn scatter_points(
    doc_ids: &[&str],
    coords: ArrayView2<f64>,
    labels: &[i64],
    flagged: &dyn Fn(&str) -> bool,
) -> Vec<ScatterPoint> {
    doc_ids
        .iter()
        .zip(coords.rows())
        .zip(labels)
        .map(|((id, row), &cluster)| ScatterPoint {
            doc_id: id.to_string(),
            x: row[0],
            y: row[1],
            cluster,
            flagged: flagged(id),
        })
        .collect()
}

fn scatter_title(n: usize, flagged: usize) -> String {
    format!("t-SNE of {n} documents, {flagged} minority reports")
}

/// Marks the output directory as incomplete until [`RunGuard::finish`].
struct RunGuard {
    marker: PathBuf,
}

impl RunGuard {
    fn start(dir: &Path, command: &str) -> StageResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(dir, e))
            .at(Stage::Setup)?;
        let marker = dir.join(RUN_MARKER);
        std::fs::write(&marker, format!("{command}: running\n"))
            .map_err(|e| Error::io(&marker, e))
            .at(Stage::Setup)?;
        Ok(RunGuard { marker })
    }

    fn fail(&self, err: &StageError) {
        let _ = std::fs::write(&self.marker, format!("failed at {err}\n"));
    }

    fn finish(self) -> StageResult<()> {
        std::fs::remove_file(&self.marker)
            .map_err(|e| Error::io(&self.marker, e))
            .at(Stage::Emit)
    }
}

fn guarded<T>(dir: &Path, command: &str, f: impl FnOnce() -> StageResult<T>) -> StageResult<T> {
    let guard = RunGuard::start(dir, command)?;
    match f() {
        Ok(v) => {
            guard.finish()?;
            Ok(v)
        }
        Err(e) => {
            guard.fail(&e);
            Err(e)
        }
    }
}

fn emit(
    dir: &Path,
    name: &str,
    contents: impl AsRef<[u8]>,
    written: &mut Vec<String>,
) -> StageResult<()> {
    write_artifact(dir, name, contents.as_ref()).at(Stage::Emit)?;
    written.push(name.to_string());
    Ok(())
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> StageResult<T> + Send) -> StageResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
        .at(Stage::Setup)?;
    pool.install(f)
}

fn prepare(cfg: &PipelineConfig) -> StageResult<PipelineConfig> {
    cfg.validate().at(Stage::Setup)?;
    let mut cfg = cfg.clone();
    cfg.apply_seed();
    Ok(cfg)
}

/// Runs every stage and writes all artifacts. Returns the manifest.
pub fn run_pipeline(config: &PipelineConfig) -> StageResult<RunManifest> {
    let cfg = prepare(config)?;
    let start = Instant::now();
    let out = cfg.output.clone();
    with_pool(cfg.threads, || {
        guarded(&out, "pipeline", || {
            let mut timer = Timer::default();
            let mut written = Vec::new();
            let data = timer.time_staged(Stage::Ingest, || ingest(&cfg))?;
            emit(&out, VOCAB_FILE, data.vocab.to_json(), &mut written)?;

            let trained = train_model(&cfg, &data, &mut timer)?;
            let model = &trained.model;
            let ckpt = timer.time(Stage::Checkpoint, || {
                checkpoint::checkpoint_json(model, Some(&config_snapshot(&cfg)))
            })?;
            emit(&out, CHECKPOINT_FILE, ckpt, &mut written)?;

            let latent = timer.time(Stage::Encode, || encode_all(&data.vectors, model))?;
            let ids: Vec<&str> = data.docs.iter().map(|d| d.id.as_str()).collect();
            emit(
                &out,
                EMBEDDINGS_FILE,
                embeddings_csv(&ids, latent.view()).at(Stage::Emit)?,
                &mut written,
            )?;

            let clustered = timer.time(Stage::Cluster, || {
                cluster_latent(&cfg, latent.view(), &data.vectors, &data.vocab)
            })?;
            emit(
                &out,
                CLUSTERS_FILE,
                clustered.labels.to_csv(&ids).at(Stage::Emit)?,
                &mut written,
            )?;
            emit(
                &out,
                CLUSTER_TERMS_FILE,
                clustered.terms.to_json(),
                &mut written,
            )?;

            let embedding = timer.time(Stage::Embed, || embed_latent(&cfg, latent.view()))?;

            let report = timer.time_staged(Stage::Score, || {
                score_and_select(&cfg, model, &data.vectors)
            })?;

            let coords = embedding
                .as_ref()
                .map_or_else(|| Array2::zeros((ids.len(), 2)), |e| e.coords.clone());
            let flagged = |id: &str| report.is_flagged(id);
            let points = scatter_points(&ids, coords.view(), &clustered.labels.labels, &flagged);
            emit(
                &out,
                TSNE_FILE,
                tsne_csv(&points).at(Stage::Emit)?,
                &mut written,
            )?;
            emit(
                &out,
                SCATTER_FILE,
                scatter_svg(&points, &scatter_title(ids.len(), report.n_flagged)),
                &mut written,
            )?;
            emit(
                &out,
                REPORT_CSV_FILE,
                report.to_csv().at(Stage::Emit)?,
                &mut written,
            )?;
            emit(&out, REPORT_JSON_FILE, report_json(&report), &mut written)?;

            written.push(MANIFEST_FILE.to_string());
            let manifest = RunManifest {
                manifest_version: MANIFEST_VERSION,
                checkpoint_format_version: checkpoint::FORMAT_VERSION,
                tool: env!("CARGO_PKG_NAME").to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: "pipeline".into(),
                config: config.clone(),
                seed: cfg.seed,
                threads: cfg.threads,
                n_documents: data.docs.len(),
                vocab_size: data.vocab.len(),
                holdout_ids: trained.holdout_ids.clone(),
                fine_tuned: trained.fine_tuned,
                effective_eps: clustered.labels.eps,
                n_clusters: clustered.labels.n_clusters,
                n_noise: clustered.labels.noise_count(),
                effective_perplexity: embedding.as_ref().map(|e| e.perplexity),
                tsne_kl: embedding.as_ref().map(|e| e.kl),
                threshold: report.threshold,
                n_flagged: report.n_flagged,
                artifacts: written,
                stage_timings: timer.timings,
                wall_time_seconds: start.elapsed().as_secs_f64(),
            };
            let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
            write_artifact(&out, MANIFEST_FILE, text.as_bytes()).at(Stage::Emit)?;
            Ok(manifest)
        })
    })
}

/// `ingest`: writes `vocab.json`.
pub fn run_ingest(config: &PipelineConfig) -> StageResult<Ingested> {
    let cfg = prepare(config)?;
    with_pool(cfg.threads, || {
        guarded(&cfg.output, "ingest", || {
            let data = ingest(&cfg)?;
            write_artifact(&cfg.output, VOCAB_FILE, data.vocab.to_json().as_bytes())
                .at(Stage::Emit)?;
            Ok(data)
        })
    })
}

/// `train`: ingest, pretrain, fine-tune; writes `vocab.json` and the
/// checkpoint.
pub fn run_train(config: &PipelineConfig) -> StageResult<Trained> {
    let cfg = prepare(config)?;
    with_pool(cfg.threads, || {
        guarded(&cfg.output, "train", || {
            let data = ingest(&cfg)?;
            write_artifact(&cfg.output, VOCAB_FILE, data.vocab.to_json().as_bytes())
                .at(Stage::Emit)?;
            let trained = train_model(&cfg, &data, &mut Timer::default())?;
            save_checkpoint(
                &trained.model,
                Some(&config_snapshot(&cfg)),
                &cfg.output.join(CHECKPOINT_FILE),
            )
            .at(Stage::Checkpoint)?;
            Ok(trained)
        })
    })
}

/// Checkpoint path used by the stage subcommands.
pub fn default_checkpoint(cfg: &PipelineConfig) -> PathBuf {
    cfg.output.join(CHECKPOINT_FILE)
}

fn load_model(path: &Path) -> StageResult<DbmModel> {
    load_checkpoint(path).map(|c| c.model).at(Stage::Checkpoint)
}

/// `score`: re-scores the corpus with a saved model; writes both anomaly
/// reports.
pub fn run_score(config: &PipelineConfig, checkpoint: &Path) -> StageResult<AnomalyReport> {
    let cfg = prepare(config)?;
    with_pool(cfg.threads, || {
        guarded(&cfg.output, "score", || {
            let model = load_model(checkpoint)?;
            let (_, vectors) = ingest_with_vocab(&cfg, &model.vocab)?;
            let report = score_and_select(&cfg, &model, &vectors)?;
            write_artifact(
                &cfg.output,
                REPORT_CSV_FILE,
                report.to_csv().at(Stage::Emit)?.as_bytes(),
            )
            .at(Stage::Emit)?;
            write_artifact(
                &cfg.output,
                REPORT_JSON_FILE,
                report_json(&report).as_bytes(),
            )
            .at(Stage::Emit)?;
            Ok(report)
        })
    })
}

/// `cluster`: encodes with a saved model and runs DBSCAN; writes the latent
/// embeddings, labels and top terms.
pub fn run_cluster(config: &PipelineConfig, checkpoint: &Path) -> StageResult<Clustered> {
    let cfg = prepare(config)?;
    with_pool(cfg.threads, || {
        guarded(&cfg.output, "cluster", || {
            let model = load_model(checkpoint)?;
            let (docs, vectors) = ingest_with_vocab(&cfg, &model.vocab)?;
            let latent = encode_all(&vectors, &model).at(Stage::Encode)?;
            let ids: Vec<&str> = docs.iter().map(|d| d.id.as_str()).collect();
            let clustered =
                cluster_latent(&cfg, latent.view(), &vectors, &model.vocab).at(Stage::Cluster)?;
            let dir = &cfg.output;
            write_artifact(
                dir,
                EMBEDDINGS_FILE,
                embeddings_csv(&ids, latent.view())
                    .at(Stage::Emit)?
                    .as_bytes(),
            )
            .at(Stage::Emit)?;
            write_artifact(
                dir,
                CLUSTERS_FILE,
                clustered.labels.to_csv(&ids).at(Stage::Emit)?.as_bytes(),
            )
            .at(Stage::Emit)?;
            write_artifact(
                dir,
                CLUSTER_TERMS_FILE,
                clustered.terms.to_json().as_bytes(),
            )
            .at(Stage::Emit)?;
            Ok(clustered)
        })
    })
}

fn read_optional(path: &Path) -> StageResult<Option<String>> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)).at(Stage::Emit),
    }
}

fn read_cluster_labels(text: &str) -> Result<HashMap<String, i64>> {
    #[derive(Deserialize)]
    struct Row {
        doc_id: String,
        cluster: i64,
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<Row>()
        .map(|row| {
            row.map(|r| (r.doc_id, r.cluster))
                .map_err(|e| Error::InvalidInput(format!("{CLUSTERS_FILE}: {e}")))
        })
        .collect()
}

/// Cluster labels and flags for `ids` from earlier `cluster` and `score`
/// outputs in `dir`; missing files give noise / unflagged.
fn annotations(dir: &Path, ids: &[&str]) -> StageResult<(Vec<i64>, Vec<bool>)> {
    let clusters = match read_optional(&dir.join(CLUSTERS_FILE))? {
        Some(t) => read_cluster_labels(&t).at(Stage::Emit)?,
        None => HashMap::new(),
    };
    let flagged: HashMap<String, bool> = match read_optional(&dir.join(REPORT_CSV_FILE))? {
        Some(t) => AnomalyReport::entries_from_csv(&t)
            .at(Stage::Emit)?
            .into_iter()
            .map(|e: ReportEntry| (e.doc_id, e.flagged))
            .collect(),
        None => HashMap::new(),
    };
    Ok((
        ids.iter()
            .map(|id| clusters.get(*id).copied().unwrap_or(NOISE))
            .collect(),
        ids.iter()
            .map(|id| flagged.get(*id).copied().unwrap_or(false))
            .collect(),
    ))
}

/// `embed`: encodes with a saved model and runs t-SNE; writes `tsne.csv`,
/// annotated from any `clusters.csv` and `anomaly_report.csv` already present.
pub fn run_embed(config: &PipelineConfig, checkpoint: &Path) -> StageResult<Option<Embedding2D>> {
    let cfg = prepare(config)?;
    with_pool(cfg.threads, || {
        guarded(&cfg.output, "embed", || {
            let model = load_model(checkpoint)?;
            let (docs, vectors) = ingest_with_vocab(&cfg, &model.vocab)?;
            let latent = encode_all(&vectors, &model).at(Stage::Encode)?;
            let embedding = embed_latent(&cfg, latent.view()).at(Stage::Embed)?;
            let ids: Vec<&str> = docs.iter().map(|d| d.id.as_str()).collect();
            let (labels, flags) = annotations(&cfg.output, &ids)?;
            let coords = embedding
                .as_ref()
                .map_or_else(|| Array2::zeros((ids.len(), 2)), |e| e.coords.clone());
            let flag_of: HashMap<&str, bool> = ids.iter().copied().zip(flags).collect();
            let points = scatter_points(&ids, coords.view(), &labels, &|id| flag_of[id]);
            write_artifact(
                &cfg.output,
                TSNE_FILE,
                tsne_csv(&points).at(Stage::Emit)?.as_bytes(),
            )
            .at(Stage::Emit)?;
            Ok(embedding)
        })
    })
}

/// `report`: renders `scatter.svg` from `tsne.csv` in the output directory.
pub fn run_report(config: &PipelineConfig) -> StageResult<usize> {
    let cfg = prepare(config)?;
    guarded(&cfg.output, "report", || {
        let path = cfg.output.join(TSNE_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(&path, e))
            .at(Stage::Emit)?;
        let points: Vec<ScatterPoint> = csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("{TSNE_FILE}: {e}")))
            .at(Stage::Emit)?;
        let n_flagged = points.iter().filter(|p| p.flagged).count();
        let svg = scatter_svg(&points, &scatter_title(points.len(), n_flagged));
        write_artifact(&cfg.output, SCATTER_FILE, svg.as_bytes()).at(Stage::Emit)?;
        Ok(points.len())
    })
}
