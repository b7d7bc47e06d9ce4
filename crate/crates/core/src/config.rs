//! Pipeline configuration, loaded from JSON with every field optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anomaly::SelectionPolicy;
use crate::dbm::{ErrorNorm, FineTuneConfig};
use crate::embed2d::TsneConfig;
use crate::error::{Error, Result};
use crate::rsm::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub output: PathBuf,
    pub stop_words: Option<PathBuf>,
    /// Vocabulary size cap.
    pub max_k: usize,
    pub h1: usize,
    pub h2: usize,
    pub layer1: TrainConfig,
    pub layer2: TrainConfig,
    pub fine_tune: FineTuneSettings,
    pub anomaly: AnomalyConfig,
    pub dbscan: DbscanConfig,
    pub tsne: TsneConfig,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            output: PathBuf::from("out"),
            stop_words: None,
            max_k: 1000,
            h1: 128,
            h2: 64,
            layer1: TrainConfig {
                learning_rate: 0.001,
                batch_size: 10,
                epochs: 50,
                momentum: 0.5,
                ..TrainConfig::default()
            },
            layer2: TrainConfig {
                learning_rate: 0.05,
                batch_size: 10,
                epochs: 50,
                momentum: 0.5,
                ..TrainConfig::default()
            },
            fine_tune: FineTuneSettings::default(),
            anomaly: AnomalyConfig::default(),
            dbscan: DbscanConfig::default(),
            tsne: TsneConfig::default(),
            seed: 42,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneSettings {
    pub enabled: bool,
    /// Fraction of documents held out for early stopping, in (0, 0.5].
    pub holdout_fraction: f64,
    #[serde(flatten)]
    pub params: FineTuneConfig,
}

impl Default for FineTuneSettings {
    fn default() -> Self {
        FineTuneSettings {
            enabled: true,
            holdout_fraction: 0.1,
            params: FineTuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    /// Policy that decides the flags.
    pub policy: SelectionPolicy,
    /// Second policy whose threshold is reported alongside.
    pub reference: SelectionPolicy,
    pub norm: ErrorNorm,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            policy: SelectionPolicy::Percentile(99.0),
            reference: SelectionPolicy::MeanPlusKSigma(3.0),
            norm: ErrorNorm::L1,
        }
    }
}

/// `"auto"` or a positive radius.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EpsSetting {
    #[default]
    Auto,
    Value(f64),
}

impl Serialize for EpsSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EpsSetting::Auto => s.serialize_str("auto"),
            EpsSetting::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for EpsSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "auto" => Ok(EpsSetting::Auto),
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(EpsSetting::Value)
                .ok_or_else(|| serde::de::Error::custom("eps out of range")),
            other => Err(serde::de::Error::custom(format!(
                "eps must be \"auto\" or a number, got {other}"
            ))),
        }
    }
}

impl std::str::FromStr for EpsSetting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(EpsSetting::Auto);
        }
        s.parse::<f64>()
            .map(EpsSetting::Value)
            .map_err(|_| format!("expected \"auto\" or a number, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbscanConfig {
    pub eps: EpsSetting,
    pub min_pts: usize,
    /// Terms listed per cluster.
    pub top_terms: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        DbscanConfig {
            eps: EpsSetting::Auto,
            min_pts: 4,
            top_terms: 10,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))
    }

    /// Copies the master seed into each stage: layer 1 gets `seed`, layer 2
    /// `seed + 1`, fine-tuning `seed + 2`, t-SNE `seed + 3`. The holdout split
    /// uses [`split_seed`](Self::split_seed).
    pub fn apply_seed(&mut self) {
        let s = self.seed;
        self.layer1.seed = s;
        self.layer2.seed = s.wrapping_add(1);
        self.fine_tune.params.train.seed = s.wrapping_add(2);
        self.tsne.seed = s.wrapping_add(3);
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.max_k < 1 {
            return bad("max_k must be at least 1".into());
        }
        if self.h1 < 1 || self.h2 < 1 {
            return bad("h1 and h2 must be at least 1".into());
        }
        self.layer1.validate()?;
        self.layer2.validate()?;
        self.fine_tune.params.train.validate()?;
        let f = self.fine_tune.holdout_fraction;
        if !(f > 0.0 && f <= 0.5) {
            return bad(format!("holdout_fraction must lie in (0, 0.5], got {f}"));
        }
        self.anomaly.policy.validate()?;
        self.anomaly.reference.validate()?;
        if let EpsSetting::Value(e) = self.dbscan.eps {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("dbscan eps must be positive, got {e}"));
            }
        }
        if self.dbscan.min_pts < 1 {
            return bad("dbscan min_pts must be at least 1".into());
        }
        if !(self.tsne.perplexity > 1.0) {
            return bad(format!(
                "perplexity must exceed 1, got {}",
                self.tsne.perplexity
            ));
        }
        if self.tsne.iters < 1 {
            return bad("tsne iters must be at least 1".into());
        }
        if self.threads < 1 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }
}
