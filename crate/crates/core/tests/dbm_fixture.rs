mod common;

use docdbm::anomaly::score_corpus;
use docdbm::checkpoint::checkpoint_json;
use docdbm::corpus::{build_vocabulary, load_jsonl, vectorize_all, CountVector};
use docdbm::dbm::{decode, encode, pretrain, reconstruct, reconstruction_error, ErrorNorm};
use docdbm::rsm::mean_reconstruction_ce;
use docdbm::synth::{topic_corpus, TopicCorpusConfig};
use docdbm::{DbmModel, TrainConfig};

fn pinned_model() -> (DbmModel, Vec<CountVector>) {
    let docs = load_jsonl(&common::fixture("corpus200.jsonl")).unwrap();
    let vocab = build_vocabulary(&docs, 1000).unwrap();
    let vectors = vectorize_all(&docs, &vocab);
    let cfg = |seed| TrainConfig {
        weight_init_sigma: 0.1,
        seed,
        ..TrainConfig::default()
    };
    let mut m = DbmModel::initial(vocab, 16, 4, &cfg(42), &cfg(43));
    // Non-zero biases so every term of the maps is exercised.
    for (i, x) in m.layer1.a.iter_mut().enumerate() {
        *x = ((i % 7) as f64 - 3.0) * 0.1;
    }
    for (j, x) in m.layer1.b.iter_mut().enumerate() {
        *x = ((j % 5) as f64 - 2.0) * 0.01;
    }
    for (j, x) in m.layer2.a.iter_mut().enumerate() {
        *x = ((j % 3) as f64 - 1.0) * 0.2;
    }
    for (j, x) in m.layer2.b.iter_mut().enumerate() {
        *x = (j as f64 - 1.5) * 0.3;
    }
    (m, vectors)
}

#[test]
fn encode_decode_match_scalar_loops() {
    let (m, vectors) = pinned_model();
    for v in vectors.iter().step_by(13) {
        let (latent, vhat, _) = common::scalar_pass(v, &m);
        let got = encode(v, &m).unwrap();
        for (a, b) in got.iter().zip(&latent) {
            assert!((a - b).abs() <= 1e-12);
        }
        let back = decode(got.as_slice().unwrap(), &m, v.length_d()).unwrap();
        for (a, b) in back.iter().zip(&vhat) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn fixture_scores_match_scalar_loops() {
    let (m, vectors) = pinned_model();
    let scores = score_corpus(&m, &vectors, ErrorNorm::L1).unwrap();
    assert_eq!(scores.len(), 200);
    for (s, v) in scores.iter().zip(&vectors) {
        let (_, _, eps) = common::scalar_pass(v, &m);
        assert!(
            (s.epsilon - eps).abs() <= 1e-10,
            "{}: {} vs {eps}",
            s.doc_id,
            s.epsilon
        );
        assert_eq!(s.epsilon_normalized, s.epsilon / v.length_d().max(1) as f64);
        // ε ≤ Σ v_k + K.
        assert!(s.epsilon <= v.length_d() as f64 + m.n_visible() as f64);
        let pass = reconstruct(v, &m).unwrap();
        assert_eq!(
            reconstruction_error(v, pass.v_hat.as_slice().unwrap()).unwrap(),
            s.epsilon
        );
    }
}

fn two_topic_k20() -> (docdbm::Vocabulary, Vec<CountVector>) {
    let cfg = TopicCorpusConfig {
        vocab_size: 20,
        topic_words: 10,
        outlier_words: 0,
        n_inliers: 200,
        n_outliers: 0,
        doc_len: (10, 20),
        ..TopicCorpusConfig::default()
    };
    let c = topic_corpus(&cfg, 9);
    (c.vocab, c.vectors)
}

fn k20_configs() -> (TrainConfig, TrainConfig) {
    let c1 = TrainConfig {
        learning_rate: 0.01,
        epochs: 30,
        seed: 1,
        ..TrainConfig::default()
    };
    let c2 = TrainConfig {
        learning_rate: 0.05,
        epochs: 30,
        seed: 2,
        ..TrainConfig::default()
    };
    (c1, c2)
}

#[test]
fn pretraining_lowers_reconstruction_cross_entropy() {
    let (vocab, vectors) = two_topic_k20();
    let (c1, c2) = k20_configs();
    let m = pretrain(&vectors, vocab, &c1, &c2, 8, 4).unwrap();
    for layer in [1, 2] {
        let curve: Vec<f64> = m
            .training_log
            .iter()
            .filter(|r| r.layer == layer)
            .map(|r| r.statistic)
            .collect();
        assert_eq!(curve.len(), 31);
        assert!(
            curve[30] < curve[0],
            "layer {layer}: {} -> {}",
            curve[0],
            curve[30]
        );
    }
    let initial = DbmModel::initial(m.vocab.clone(), 8, 4, &c1, &c2);
    assert!(
        mean_reconstruction_ce(&vectors, &m.layer1).unwrap()
            < mean_reconstruction_ce(&vectors, &initial.layer1).unwrap()
    );
}

#[test]
fn pretraining_is_reproducible_to_the_byte() {
    let (vocab, vectors) = two_topic_k20();
    let (c1, c2) = k20_configs();
    let a = pretrain(&vectors, vocab.clone(), &c1, &c2, 8, 4).unwrap();
    let b = pretrain(&vectors, vocab, &c1, &c2, 8, 4).unwrap();
    assert_eq!(
        checkpoint_json(&a, None).unwrap(),
        checkpoint_json(&b, None).unwrap()
    );
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let (vocab, vectors) = two_topic_k20();
    let (mut c1, mut c2) = k20_configs();
    c1.epochs = 0;
    c2.epochs = 0;
    let m = pretrain(&vectors, vocab.clone(), &c1, &c2, 8, 4).unwrap();
    let init = DbmModel::initial(vocab, 8, 4, &c1, &c2);
    assert_eq!(m.layer1, init.layer1);
    assert_eq!(m.layer2, init.layer2);
}
