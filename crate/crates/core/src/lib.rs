//! Document topic modelling with a two-layer Replicated Softmax Deep Boltzmann
//! Machine, and reconstruction-error scoring of every document to surface
//! "minority reports": documents the model reconstructs poorly because their
//! content is rare in the corpus.
//!
//! Modules, in pipeline order:
//!
//! - [`corpus`]: tokenization, frequency-ranked vocabulary, count vectors
//! - [`rsm`]: Replicated Softmax RBM, CD-k training and an exact-likelihood oracle
//! - [`dbm`]: the stacked model, deterministic encode/decode and fine-tuning
//! - [`anomaly`]: per-document scores and minority-report selection
//! - [`cluster`]: DBSCAN over latent embeddings and per-cluster top terms
//! - [`embed2d`]: exact t-SNE for 2-D scatter plots
//! - [`pipeline`]: configuration, checkpoints, artifact emission

pub mod anomaly;
pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod dbm;
pub mod embed2d;
mod error;
pub mod numeric;
pub mod output;
pub mod pipeline;
pub mod rsm;
pub mod synth;

pub use anomaly::{AnomalyReport, ReportEntry, ScoreEntry, SelectionPolicy};
pub use cluster::{ClusterLabels, ClusterTerms};
pub use corpus::{CountVector, Document, Vocabulary};
pub use dbm::{DbmModel, RbmParams};
pub use embed2d::Embedding2D;
pub use error::{Error, Result};
pub use numeric::sigma;
pub use rsm::{RsmParams, TrainConfig};
