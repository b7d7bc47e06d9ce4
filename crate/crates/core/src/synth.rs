//! Synthetic topic corpora with known ground truth, for demos and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CountVector, Document, Vocabulary};

/// Generator settings. Words `0..n_topics*topic_words` are split into one
/// block per topic; the next `outlier_words` words are used only by planted
/// outliers; any remaining words are background noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicCorpusConfig {
    pub vocab_size: usize,
    pub n_topics: usize,
    pub topic_words: usize,
    pub outlier_words: usize,
    pub n_inliers: usize,
    pub n_outliers: usize,
    /// Inclusive range of document lengths.
    pub doc_len: (u64, u64),
    /// Probability that an inlier word comes from its own topic block; the
    /// rest is spread uniformly over the other topics' blocks.
    pub topic_purity: f64,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        TopicCorpusConfig {
            vocab_size: 100,
            n_topics: 2,
            topic_words: 40,
            outlier_words: 20,
            n_inliers: 950,
            n_outliers: 50,
            doc_len: (30, 60),
            topic_purity: 0.9,
        }
    }
}

/// Generated corpus with its labels.
#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub vocab: Vocabulary,
    pub vectors: Vec<CountVector>,
    /// Generating topic of each inlier, `None` for outliers.
    pub topic: Vec<Option<usize>>,
}

impl TopicCorpus {
    pub fn is_outlier(&self, i: usize) -> bool {
        self.topic[i].is_none()
    }

    /// Word range of topic `t`.
    pub fn topic_block(cfg: &TopicCorpusConfig, t: usize) -> std::ops::Range<usize> {
        t * cfg.topic_words..(t + 1) * cfg.topic_words
    }

    /// Renders every vector as whitespace-separated term text.
    pub fn documents(&self) -> Vec<Document> {
        self.vectors
            .iter()
            .map(|v| {
                let words: Vec<&str> = v
                    .iter()
                    .flat_map(|(k, c)| {
                        std::iter::repeat_n(self.vocab.term(k).expect("in range"), c as usize)
                    })
                    .collect();
                Document::new(v.doc_id(), words.join(" "))
            })
            .collect()
    }
}

/// Draws inliers round-robin over topics and appends the outliers, then
/// shuffles document order.
pub fn topic_corpus(cfg: &TopicCorpusConfig, seed: u64) -> TopicCorpus {
    use rand::seq::SliceRandom;
    let topical = cfg.n_topics * cfg.topic_words;
    assert!(
        topical + cfg.outlier_words <= cfg.vocab_size,
        "vocabulary too small"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<Option<usize>> = (0..cfg.n_inliers)
        .map(|i| Some(i % cfg.n_topics.max(1)))
        .chain(std::iter::repeat_n(None, cfg.n_outliers))
        .collect();
    kinds.shuffle(&mut rng);
    let vectors = kinds
        .iter()
        .enumerate()
        .map(|(i, kind)| {
            let d = rng.random_range(cfg.doc_len.0..=cfg.doc_len.1);
            let mut counts = vec![0u32; cfg.vocab_size];
            for _ in 0..d {
                let w = match *kind {
                    Some(t) => {
                        if cfg.n_topics == 1 || rng.random::<f64>() < cfg.topic_purity {
                            t * cfg.topic_words + rng.random_range(0..cfg.topic_words)
                        } else {
                            let other = (t + rng.random_range(1..cfg.n_topics)) % cfg.n_topics;
                            other * cfg.topic_words + rng.random_range(0..cfg.topic_words)
                        }
                    }
                    None => topical + rng.random_range(0..cfg.outlier_words),
                };
                counts[w] += 1;
            }
            CountVector::from_dense(format!("doc{i:05}"), &counts)
        })
        .collect();
    let vocab = Vocabulary::from_terms((0..cfg.vocab_size).map(|k| format!("w{k:03}")).collect())
        .expect("distinct synthetic terms");
    TopicCorpus {
        vocab,
        vectors,
        topic: kinds,
    }
}
