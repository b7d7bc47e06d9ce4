//! DBSCAN over latent embeddings, and the most frequent terms per cluster.

use std::collections::{BTreeMap, HashMap, VecDeque};

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CountVector, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::nearest_rank;

pub const NOISE: i64 = -1;

/// DBSCAN assignment: `labels[i]` is the cluster of point `i`, or
/// [`NOISE`]. Clusters are numbered in order of their first core point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub labels: Vec<i64>,
    pub eps: f64,
    pub min_pts: usize,
    pub n_clusters: usize,
}

impl ClusterLabels {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn to_csv(&self, doc_ids: &[&str]) -> Result<String> {
        if doc_ids.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                what: "document ids vs cluster labels",
                expected: self.labels.len(),
                got: doc_ids.len(),
            });
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["doc_id", "cluster"])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        for (id, l) in doc_ids.iter().zip(&self.labels) {
            w.write_record([id.to_string(), l.to_string()])
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Indices of all points within the closed `eps`-ball of each point,
/// including the point itself.
fn neighborhoods(points: ArrayView2<f64>, eps: f64) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| euclidean(points.row(i), points.row(j)) <= eps)
                .collect()
        })
        .collect()
}

/// DBSCAN with the Euclidean metric over the rows of `points`.
///
/// A point is core when its closed `eps`-ball holds at least `min_pts` points,
/// itself included. Points are scanned in index order; a border point joins the
/// first cluster whose expansion reaches it.
pub fn dbscan(points: ArrayView2<f64>, eps: f64, min_pts: usize) -> Result<ClusterLabels> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if min_pts < 1 {
        return Err(Error::InvalidArgument("min_pts must be at least 1".into()));
    }
    let n = points.nrows();
    let hoods = neighborhoods(points, eps);
    let core: Vec<bool> = hoods.iter().map(|h| h.len() >= min_pts).collect();
    let mut labels = vec![NOISE; n];
    let mut n_clusters = 0usize;
    let mut queue: VecDeque<usize> = VecDeque::new();
    for i in 0..n {
        if labels[i] != NOISE || !core[i] {
            continue;
        }
        let c = n_clusters as i64;
        n_clusters += 1;
        labels[i] = c;
        queue.extend(&hoods[i]);
        while let Some(j) = queue.pop_front() {
            if labels[j] != NOISE {
                continue;
            }
            labels[j] = c;
            if core[j] {
                queue.extend(&hoods[j]);
            }
        }
    }
    Ok(ClusterLabels {
        labels,
        eps,
        min_pts,
        n_clusters,
    })
}

/// Default `eps`: the 95th nearest-rank percentile, over all points, of the
/// distance to the `min_pts`-th nearest point counting the point itself. At
/// that radius 95% of the points are core.
pub fn auto_eps(points: ArrayView2<f64>, min_pts: usize) -> Result<f64> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::InvalidInput(
            "cannot choose eps for an empty point set".into(),
        ));
    }
    let kth = min_pts.clamp(1, n) - 1;
    let mut kdist: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .map(|j| euclidean(points.row(i), points.row(j)))
                .collect();
            d.sort_by(f64::total_cmp);
            d[kth]
        })
        .collect();
    kdist.sort_by(f64::total_cmp);
    let eps = nearest_rank(&kdist, 95.0);
    Ok(if eps > 0.0 { eps } else { f64::EPSILON })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCount {
    pub term: String,
    pub count: u64,
}

/// Most frequent terms of every cluster, and of the noise points separately.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterTerms {
    pub clusters: Vec<Vec<TermCount>>,
    pub noise: Vec<TermCount>,
}

impl ClusterTerms {
    /// JSON object keyed by cluster number, plus `"noise"`.
    pub fn to_json(&self) -> String {
        let mut map: BTreeMap<String, &Vec<TermCount>> = self
            .clusters
            .iter()
            .enumerate()
            .map(|(i, t)| (i.to_string(), t))
            .collect();
        map.insert("noise".into(), &self.noise);
        serde_json::to_string_pretty(&map).expect("term lists serialize")
    }
}

fn top_terms(totals: HashMap<usize, u64>, vocab: &Vocabulary, top_n: usize) -> Vec<TermCount> {
    let mut ranked: Vec<(&str, u64)> = totals
        .into_iter()
        .filter_map(|(k, c)| vocab.term(k).map(|t| (t, c)))
        .collect();
    ranked.sort_unstable_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    ranked
        .into_iter()
        .take(top_n)
        .map(|(t, c)| TermCount {
            term: t.to_string(),
            count: c,
        })
        .collect()
}

/// Top `top_n` terms by summed count within each cluster; ties lexicographic.
pub fn cluster_top_terms(
    labels: &ClusterLabels,
    vectors: &[CountVector],
    vocab: &Vocabulary,
    top_n: usize,
) -> Result<ClusterTerms> {
    if labels.labels.len() != vectors.len() {
        return Err(Error::DimensionMismatch {
            what: "cluster labels vs count vectors",
            expected: vectors.len(),
            got: labels.labels.len(),
        });
    }
    let mut per_cluster = vec![HashMap::new(); labels.n_clusters];
    let mut noise = HashMap::new();
    for (&l, v) in labels.labels.iter().zip(vectors) {
        let bucket = if l == NOISE {
            &mut noise
        } else {
            per_cluster.get_mut(l as usize).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "label {l} exceeds cluster count {}",
                    labels.n_clusters
                ))
            })?
        };
        for (k, c) in v.iter() {
            *bucket.entry(k).or_insert(0u64) += u64::from(c);
        }
    }
    Ok(ClusterTerms {
        clusters: per_cluster
            .into_iter()
            .map(|m| top_terms(m, vocab, top_n))
            .collect(),
        noise: top_terms(noise, vocab, top_n),
    })
}
