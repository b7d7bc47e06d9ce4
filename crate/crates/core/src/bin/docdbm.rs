use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use docdbm::config::{EpsSetting, PipelineConfig};
use docdbm::pipeline::{self, StageError};
use docdbm::SelectionPolicy;

/// Minority-report detection for document corpora with a two-layer
/// Replicated Softmax model.
#[derive(Parser, Debug)]
#[command(name = "docdbm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every stage and write all artifacts.
    Pipeline(Opts),
    /// Build the vocabulary.
    Ingest(Opts),
    /// Pretrain and fine-tune; write the checkpoint.
    Train(Opts),
    /// Score documents with a checkpoint and select minority reports.
    Score(Opts),
    /// Encode with a checkpoint and cluster the latent vectors.
    Cluster(Opts),
    /// Encode with a checkpoint and compute the 2-D embedding.
    Embed(Opts),
    /// Render the scatter plot from an existing tsne.csv.
    Report(Opts),
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL corpus, one {"id", "text"} object per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Checkpoint for score/cluster/embed [default: OUTPUT/model.ckpt.json].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    stop_words: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    max_k: Option<usize>,
    #[arg(long)]
    h1: Option<usize>,
    #[arg(long)]
    h2: Option<usize>,
    /// Epochs for both pretraining layers.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    fine_tune_epochs: Option<usize>,
    #[arg(long)]
    no_fine_tune: bool,
    #[arg(long)]
    holdout_fraction: Option<f64>,
    /// Flag documents above this percentile of ε.
    #[arg(long, conflicts_with = "k_sigma")]
    percentile: Option<f64>,
    /// Flag documents above mean + K·sd of ε.
    #[arg(long)]
    k_sigma: Option<f64>,
    /// DBSCAN radius, or "auto".
    #[arg(long)]
    eps: Option<EpsSetting>,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long)]
    perplexity: Option<f64>,
    /// t-SNE iterations.
    #[arg(long)]
    iters: Option<usize>,
}

impl Opts {
    fn config(&self) -> Result<PipelineConfig, StageError> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p).map_err(|source| StageError {
                stage: pipeline::Stage::Setup,
                source,
            })?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $opt:expr) => {
                if let Some(v) = $opt.clone() {
                    $field = v;
                }
            };
        }
        set!(c.corpus, self.corpus);
        set!(c.output, self.output);
        if self.stop_words.is_some() {
            c.stop_words = self.stop_words.clone();
        }
        set!(c.seed, self.seed);
        set!(c.threads, self.threads);
        set!(c.max_k, self.max_k);
        set!(c.h1, self.h1);
        set!(c.h2, self.h2);
        set!(c.layer1.epochs, self.epochs);
        set!(c.layer2.epochs, self.epochs);
        set!(c.fine_tune.params.train.epochs, self.fine_tune_epochs);
        set!(c.fine_tune.holdout_fraction, self.holdout_fraction);
        if self.no_fine_tune {
            c.fine_tune.enabled = false;
        }
        if let Some(p) = self.percentile {
            c.anomaly.policy = SelectionPolicy::Percentile(p);
        }
        if let Some(k) = self.k_sigma {
            c.anomaly.policy = SelectionPolicy::MeanPlusKSigma(k);
        }
        set!(c.dbscan.eps, self.eps);
        set!(c.dbscan.min_pts, self.min_pts);
        set!(c.tsne.perplexity, self.perplexity);
        set!(c.tsne.iters, self.iters);
        Ok(c)
    }

    fn checkpoint(&self, cfg: &PipelineConfig) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| pipeline::default_checkpoint(cfg))
    }
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Pipeline(o) => {
            let m = pipeline::run_pipeline(&o.config()?)?;
            println!(
                "{} documents, {} clusters, {} minority reports (threshold {:.6}) in {:.1}s",
                m.n_documents, m.n_clusters, m.n_flagged, m.threshold, m.wall_time_seconds
            );
        }
        Command::Ingest(o) => {
            let d = pipeline::run_ingest(&o.config()?)?;
            println!("{} documents, {} terms", d.docs.len(), d.vocab.len());
        }
        Command::Train(o) => {
            let t = pipeline::run_train(&o.config()?)?;
            println!(
                "trained {}x{}x{} model, {} holdout documents",
                t.model.n_visible(),
                t.model.n_hidden1(),
                t.model.n_hidden2(),
                t.holdout_ids.len()
            );
        }
        Command::Score(o) => {
            let c = o.config()?;
            let r = pipeline::run_score(&c, &o.checkpoint(&c))?;
            println!(
                "{} minority reports (threshold {:.6})",
                r.n_flagged, r.threshold
            );
        }
        Command::Cluster(o) => {
            let c = o.config()?;
            let r = pipeline::run_cluster(&c, &o.checkpoint(&c))?;
            println!(
                "{} clusters, {} noise (eps {:.6})",
                r.labels.n_clusters,
                r.labels.noise_count(),
                r.labels.eps
            );
        }
        Command::Embed(o) => {
            let c = o.config()?;
            match pipeline::run_embed(&c, &o.checkpoint(&c))? {
                Some(e) => println!("KL {:.6} at perplexity {}", e.kl, e.perplexity),
                None => println!("too few documents to embed"),
            }
        }
        Command::Report(o) => {
            let n = pipeline::run_report(&o.config()?)?;
            println!("plotted {n} documents");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
