mod common;

use std::collections::HashMap;

use docdbm::cluster::{auto_eps, cluster_top_terms, dbscan, NOISE};
use docdbm::dbm::{encode_all, pretrain};
use docdbm::synth::{topic_corpus, TopicCorpus, TopicCorpusConfig};
use docdbm::TrainConfig;
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn core_flags(points: &Array2<f64>, eps: f64, min_pts: usize) -> Vec<bool> {
    common::dbscan_reference(points, eps, min_pts).core
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_reference_on_random_inputs(
        seed in 0u64..10_000,
        n in 1usize..80,
        eps in 0.02f64..0.4,
        min_pts in 1usize..7,
    ) {
        let pts = common::uniform_points(n, 2, seed);
        let labels = dbscan(pts.view(), eps, min_pts).unwrap();
        let r = common::dbscan_reference(&pts, eps, min_pts);
        prop_assert_eq!(labels.n_clusters, r.n_components);
        prop_assert_eq!(common::partition_matches(&labels.labels, &r), Ok(()));
    }

    #[test]
    fn core_partition_is_permutation_invariant(seed in 0u64..10_000, shift in 1usize..60) {
        let pts = common::uniform_points(60, 2, seed);
        let order: Vec<usize> = (0..60).map(|i| (i * 7 + shift) % 60).collect();
        let permuted = pts.select(Axis(0), &order);
        let a = dbscan(pts.view(), 0.12, 4).unwrap();
        let b = dbscan(permuted.view(), 0.12, 4).unwrap();
        prop_assert_eq!(a.n_clusters, b.n_clusters);
        let core = core_flags(&pts, 0.12, 4);
        let mut rename = HashMap::new();
        for (new, &old) in order.iter().enumerate() {
            prop_assert_eq!(a.labels[old] == NOISE, b.labels[new] == NOISE);
            if core[old] {
                let l = *rename.entry(a.labels[old]).or_insert(b.labels[new]);
                prop_assert_eq!(l, b.labels[new]);
            }
        }
    }

    #[test]
    fn growing_eps_keeps_core_points_core(seed in 0u64..10_000, eps in 0.02f64..0.3, grow in 0.0f64..0.3) {
        let pts = common::uniform_points(50, 3, seed);
        let small = core_flags(&pts, eps, 4);
        let large = core_flags(&pts, eps + grow, 4);
        let labels = dbscan(pts.view(), eps + grow, 4).unwrap();
        for i in 0..50 {
            prop_assert!(!small[i] || large[i]);
            prop_assert!(!small[i] || labels.labels[i] != NOISE);
        }
    }
}

fn clustered_topics(seed: u64) -> (TopicCorpus, TopicCorpusConfig, Vec<i64>, usize) {
    let cfg = TopicCorpusConfig {
        n_inliers: 300,
        n_outliers: 0,
        ..TopicCorpusConfig::default()
    };
    let c = topic_corpus(&cfg, 200 + seed);
    let t = |lr, s| TrainConfig {
        learning_rate: lr,
        epochs: 30,
        seed: s,
        ..TrainConfig::default()
    };
    let m = pretrain(
        &c.vectors,
        c.vocab.clone(),
        &t(0.005, seed * 3),
        &t(0.05, seed * 3 + 1),
        32,
        8,
    )
    .unwrap();
    let latent = encode_all(&c.vectors, &m).unwrap();
    let eps = auto_eps(latent.view(), 4).unwrap();
    let labels = dbscan(latent.view(), eps, 4).unwrap();
    let n = labels.n_clusters;
    (c, cfg, labels.labels, n)
}

#[test]
fn top_terms_follow_generating_topics() {
    let mut good = 0;
    for seed in 0..10 {
        let (c, cfg, labels, n_clusters) = clustered_topics(seed);
        let cl = docdbm::ClusterLabels {
            labels: labels.clone(),
            eps: 1.0,
            min_pts: 4,
            n_clusters,
        };
        let terms = cluster_top_terms(&cl, &c.vectors, &c.vocab, 5).unwrap();
        let mut ok = n_clusters >= 2;
        let mut covered = [false; 2];
        for (cluster, top) in terms.clusters.iter().enumerate() {
            let mut votes = [0usize; 2];
            for (i, &l) in labels.iter().enumerate() {
                if l == cluster as i64 {
                    votes[c.topic[i].unwrap()] += 1;
                }
            }
            let topic = if votes[0] >= votes[1] { 0 } else { 1 };
            covered[topic] = true;
            let word = c.vocab.position(&top[0].term).unwrap();
            ok &= TopicCorpus::topic_block(&cfg, topic).contains(&word);
        }
        ok &= covered.iter().all(|&x| x);
        good += usize::from(ok);
    }
    assert!(
        good >= 9,
        "top terms matched their topic in {good}/10 seeds"
    );
}
