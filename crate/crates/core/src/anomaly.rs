//! Per-document reconstruction scores and minority-report selection.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CountVector;
use crate::dbm::{self, DbmModel, ErrorNorm};
use crate::error::{Error, Result};
use crate::numeric::nearest_rank;

/// Reconstruction error of one document, raw and divided by its length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub doc_id: String,
    pub epsilon: f64,
    pub epsilon_normalized: f64,
}

/// Scores every document by encode→decode→distance. Empty documents are
/// normalized by 1.
pub fn score_corpus(
    model: &DbmModel,
    vectors: &[CountVector],
    norm: ErrorNorm,
) -> Result<Vec<ScoreEntry>> {
    model.validate()?;
    vectors
        .par_iter()
        .map(|v| {
            let pass = dbm::reconstruct(v, model)?;
            let epsilon =
                dbm::reconstruction_distance(v, pass.v_hat.as_slice().expect("contiguous"), norm)?;
            Ok(ScoreEntry {
                doc_id: v.doc_id().to_string(),
                epsilon,
                epsilon_normalized: epsilon / v.length_d().max(1) as f64,
            })
        })
        .collect()
}

/// Cutoff rule for flagging documents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Nearest-rank `p`-th percentile of ε, `p ∈ (0, 100)`.
    Percentile(f64),
    /// Mean plus `k` population standard deviations, `k ≥ 0`.
    MeanPlusKSigma(f64),
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::Percentile(99.0)
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionPolicy::Percentile(p) if !(p > 0.0 && p < 100.0) => Err(
                Error::InvalidArgument(format!("percentile must lie in (0, 100), got {p}")),
            ),
            SelectionPolicy::MeanPlusKSigma(k) if !(k >= 0.0 && k.is_finite()) => Err(
                Error::InvalidArgument(format!("k must be a non-negative number, got {k}")),
            ),
            _ => Ok(()),
        }
    }

    /// Threshold of this policy over the given ε values.
    pub fn threshold(&self, epsilons: &[f64]) -> Result<f64> {
        self.validate()?;
        if epsilons.is_empty() {
            return Err(Error::InvalidInput(
                "cannot select from an empty score list".into(),
            ));
        }
        Ok(match *self {
            SelectionPolicy::Percentile(p) => {
                let mut sorted = epsilons.to_vec();
                sorted.sort_by(f64::total_cmp);
                nearest_rank(&sorted, p)
            }
            SelectionPolicy::MeanPlusKSigma(k) => {
                let n = epsilons.len() as f64;
                let mean = epsilons.iter().sum::<f64>() / n;
                let var = epsilons.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
                mean + k * var.sqrt()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub doc_id: String,
    pub epsilon: f64,
    pub epsilon_normalized: f64,
    /// 1 = largest ε.
    pub rank: usize,
    pub flagged: bool,
}

/// A threshold computed under another policy, for comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceThreshold {
    pub policy: SelectionPolicy,
    pub threshold: f64,
    pub n_flagged: usize,
}

/// Ranked scores with the selected minority reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub policy: SelectionPolicy,
    pub threshold: f64,
    pub n_flagged: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceThreshold>,
    /// Entries in rank order.
    pub entries: Vec<ReportEntry>,
}

fn rank_order(a: &ScoreEntry, b: &ScoreEntry) -> Ordering {
    b.epsilon
        .total_cmp(&a.epsilon)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Ranks documents by descending ε (ties by ascending id) and flags those
/// strictly above the policy threshold.
pub fn select_minority(scores: &[ScoreEntry], policy: SelectionPolicy) -> Result<AnomalyReport> {
    let eps: Vec<f64> = scores.iter().map(|s| s.epsilon).collect();
    let threshold = policy.threshold(&eps)?;
    let mut sorted: Vec<&ScoreEntry> = scores.iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    let entries: Vec<ReportEntry> = sorted
        .into_iter()
        .enumerate()
        .map(|(i, s)| ReportEntry {
            doc_id: s.doc_id.clone(),
            epsilon: s.epsilon,
            epsilon_normalized: s.epsilon_normalized,
            rank: i + 1,
            flagged: s.epsilon > threshold,
        })
        .collect();
    Ok(AnomalyReport {
        policy,
        threshold,
        n_flagged: entries.iter().filter(|e| e.flagged).count(),
        reference: None,
        entries,
    })
}

impl AnomalyReport {
    /// Records the threshold `policy` would have produced, without changing
    /// the flags.
    pub fn with_reference(mut self, policy: SelectionPolicy) -> Result<Self> {
        let eps: Vec<f64> = self.entries.iter().map(|e| e.epsilon).collect();
        let threshold = policy.threshold(&eps)?;
        self.reference = Some(ReferenceThreshold {
            policy,
            threshold,
            n_flagged: eps.iter().filter(|&&e| e > threshold).count(),
        });
        Ok(self)
    }

    pub fn flagged_ids(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|e| e.flagged)
            .map(|e| e.doc_id.as_str())
    }

    pub fn is_flagged(&self, doc_id: &str) -> bool {
        self.entries.iter().any(|e| e.flagged && e.doc_id == doc_id)
    }

    /// `doc_id,epsilon,epsilon_normalized,rank,flagged` rows in rank order.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Reads entries back from [`to_csv`](Self::to_csv) output.
    pub fn entries_from_csv(text: &str) -> Result<Vec<ReportEntry>> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .map(|r| r.map_err(|e| Error::InvalidInput(format!("anomaly report csv: {e}"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(eps: &[f64]) -> Vec<ScoreEntry> {
        eps.iter()
            .enumerate()
            .map(|(i, &e)| ScoreEntry {
                doc_id: format!("d{i:03}"),
                epsilon: e,
                epsilon_normalized: e,
            })
            .collect()
    }

    #[test]
    fn equal_scores_flag_nothing() {
        let r = select_minority(&scores(&[2.5; 40]), SelectionPolicy::Percentile(99.0)).unwrap();
        assert_eq!(r.threshold, 2.5);
        assert_eq!(r.n_flagged, 0);
    }

    #[test]
    fn percentile_95_of_one_to_hundred() {
        let eps: Vec<f64> = (1..=100).map(f64::from).collect();
        let r = select_minority(&scores(&eps), SelectionPolicy::Percentile(95.0)).unwrap();
        assert_eq!(r.threshold, 95.0);
        let mut flagged: Vec<f64> = r
            .entries
            .iter()
            .filter(|e| e.flagged)
            .map(|e| e.epsilon)
            .collect();
        flagged.sort_by(f64::total_cmp);
        assert_eq!(flagged, vec![96.0, 97.0, 98.0, 99.0, 100.0]);
    }

    #[test]
    fn mean_plus_k_sigma() {
        let r = select_minority(
            &scores(&[1.0, 2.0, 3.0, 4.0, 10.0]),
            SelectionPolicy::MeanPlusKSigma(1.0),
        )
        .unwrap();
        // mean 4, population variance (9+4+1+0+36)/5 = 10
        assert!((r.threshold - (4.0 + 10f64.sqrt())).abs() < 1e-12);
        assert_eq!(r.flagged_ids().collect::<Vec<_>>(), vec!["d004"]);
    }

    #[test]
    fn ranks_break_ties_by_id() {
        let mut s = scores(&[1.0, 3.0, 3.0, 2.0]);
        s.swap(1, 2);
        let r = select_minority(&s, SelectionPolicy::Percentile(50.0)).unwrap();
        let ids: Vec<&str> = r.entries.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, ["d001", "d002", "d003", "d000"]);
        assert_eq!(
            r.entries.iter().map(|e| e.rank).collect::<Vec<_>>(),
            [1, 2, 3, 4]
        );
    }

    #[test]
    fn errors() {
        assert!(select_minority(&[], SelectionPolicy::Percentile(99.0)).is_err());
        for bad in [
            SelectionPolicy::Percentile(0.0),
            SelectionPolicy::Percentile(100.0),
            SelectionPolicy::MeanPlusKSigma(-1.0),
        ] {
            assert!(select_minority(&scores(&[1.0]), bad).is_err());
        }
    }

    #[test]
    fn csv_round_trip_and_policy_json() {
        let r = select_minority(
            &scores(&[0.1, 0.30000000000000004, 7.0]),
            SelectionPolicy::Percentile(50.0),
        )
        .unwrap()
        .with_reference(SelectionPolicy::MeanPlusKSigma(3.0))
        .unwrap();
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("doc_id,epsilon,epsilon_normalized,rank,flagged\n"));
        assert_eq!(AnomalyReport::entries_from_csv(&csv).unwrap(), r.entries);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["policy"]["kind"], "percentile");
        assert_eq!(json["reference"]["policy"]["kind"], "mean_plus_k_sigma");
    }

    proptest! {
        #[test]
        fn selection_invariants(eps in prop::collection::vec(0.0f64..50.0, 1..120), p in 1.0f64..99.0, dp in 0.0f64..30.0) {
            let s = scores(&eps);
            let lo = select_minority(&s, SelectionPolicy::Percentile(p)).unwrap();
            let hi_p = (p + dp).min(99.9);
            let hi = select_minority(&s, SelectionPolicy::Percentile(hi_p)).unwrap();
            for id in hi.flagged_ids() {
                prop_assert!(lo.is_flagged(id));
            }
            let n = eps.len() as f64;
            prop_assert!(lo.n_flagged as f64 <= n * (100.0 - p) / 100.0 + 1.0);
            let mut ranks: Vec<usize> = lo.entries.iter().map(|e| e.rank).collect();
            ranks.sort();
            prop_assert_eq!(ranks, (1..=eps.len()).collect::<Vec<_>>());
            for w in lo.entries.windows(2) {
                prop_assert!(w[0].epsilon >= w[1].epsilon);
            }
            for e in &lo.entries {
                prop_assert_eq!(e.flagged, e.epsilon > lo.threshold);
            }
        }
    }
}
