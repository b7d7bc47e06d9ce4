//! Document ingestion: tokenization with a rule-based suffix stripper, the
//! frequency-ranked vocabulary, and sparse count vectors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw document from the input corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            meta: BTreeMap::new(),
        }
    }
}

/// Reads a JSONL corpus: one `{"id", "text", "meta"}` object per line.
/// Blank lines are skipped. Ids must be non-empty and unique.
pub fn load_jsonl(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => {
                Error::InvalidInput(format!("{}:{}: invalid UTF-8", path.display(), lineno + 1))
            }
            _ => Error::io(path, e),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if doc.id.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{}:{}: empty document id",
                path.display(),
                lineno + 1
            )));
        }
        if !seen.insert(doc.id.clone()) {
            return Err(Error::InvalidInput(format!(
                "{}:{}: duplicate document id {:?}",
                path.display(),
                lineno + 1,
                doc.id
            )));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Lowercases `text`, splits it on non-alphanumeric characters and strips
/// common English inflections. Tokens shorter than two characters are
/// dropped.
pub fn tokenize_lemmatize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|raw| !raw.is_empty())
        .map(|raw| lemmatize(&raw.to_lowercase()))
        .filter(|tok| tok.chars().count() >= 2)
        .collect()
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn lemmatize(token: &str) -> String {
    let mut t = token.to_string();

    if let Some(stem) = t.strip_suffix("ies") {
        t = format!("{stem}y");
    } else if let Some(stem) = t.strip_suffix("sses") {
        t = format!("{stem}ss");
    } else if let Some(stem) = t
        .strip_suffix("es")
        .filter(|s| char_len(s) >= 3 && sibilant_ending(s))
    {
        t = stem.to_string();
    } else if let Some(stem) = t
        .strip_suffix('s')
        .filter(|s| char_len(s) >= 3 && !s.ends_with('s'))
    {
        t = stem.to_string();
    }

    if let Some(stem) = t.strip_suffix("ing").filter(|s| char_len(s) >= 3) {
        t = stem.to_string();
    } else if let Some(stem) = t.strip_suffix("ed").filter(|s| char_len(s) >= 3) {
        t = stem.to_string();
    }
    t
}

// "es" is a plural suffix only after s, x, z, ch, sh ("boxes", "churches");
// elsewhere the "e" belongs to the stem ("refugees" -> "refugee").
fn sibilant_ending(stem: &str) -> bool {
    ["s", "x", "z", "ch", "sh"]
        .iter()
        .any(|s| stem.ends_with(s))
}

/// Frequency-ranked term list with its inverse index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from an already-ranked term list. Duplicates are an
    /// error.
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocabulary term {t:?}"
                )));
            }
        }
        Ok(Vocabulary { terms, index })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, position: usize) -> Option<&str> {
        self.terms.get(position).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.terms).expect("string list serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let terms: Vec<String> =
            serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("vocabulary: {e}")))?;
        Self::from_terms(terms)
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.terms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let terms = Vec::<String>::deserialize(d)?;
        Vocabulary::from_terms(terms).map_err(serde::de::Error::custom)
    }
}

/// Top-`max_k` terms by total corpus count, ties broken lexicographically.
pub fn build_vocabulary(docs: &[Document], max_k: usize) -> Result<Vocabulary> {
    build_vocabulary_filtered(docs, max_k, &HashSet::new())
}

/// As [`build_vocabulary`], skipping every token in `stop_words`.
pub fn build_vocabulary_filtered(
    docs: &[Document],
    max_k: usize,
    stop_words: &HashSet<String>,
) -> Result<Vocabulary> {
    if max_k == 0 {
        return Err(Error::InvalidArgument("max_k must be at least 1".into()));
    }
    let per_doc: Vec<HashMap<String, u64>> = docs
        .par_iter()
        .map(|d| {
            let mut m = HashMap::new();
            for tok in tokenize_lemmatize(&d.text) {
                if !stop_words.contains(&tok) {
                    *m.entry(tok).or_insert(0u64) += 1;
                }
            }
            m
        })
        .collect();
    let mut totals: HashMap<String, u64> = HashMap::new();
    for m in per_doc {
        for (t, c) in m {
            *totals.entry(t).or_insert(0) += c;
        }
    }
    let mut ranked: Vec<(String, u64)> = totals.into_iter().collect();
    ranked.sort_unstable_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    ranked.truncate(max_k);
    Vocabulary::from_terms(ranked.into_iter().map(|(t, _)| t).collect())
}

/// Reads a stop-word file: one word per line, `#` starts a comment. Words are
/// passed through the same normalizer as document text.
pub fn load_stop_words(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .flat_map(tokenize_lemmatize)
        .collect())
}

/// Sparse word counts of one document over a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountVector {
    doc_id: String,
    counts: BTreeMap<usize, u32>,
    length_d: u64,
}

impl CountVector {
    /// Builds a count vector from `(position, count)` pairs, summing repeated
    /// positions and dropping zero counts.
    pub fn from_counts(
        doc_id: impl Into<String>,
        pairs: impl IntoIterator<Item = (usize, u32)>,
    ) -> Self {
        let mut counts = BTreeMap::new();
        for (k, c) in pairs {
            if c > 0 {
                *counts.entry(k).or_insert(0) += c;
            }
        }
        let length_d = counts.values().map(|&c| u64::from(c)).sum();
        CountVector {
            doc_id: doc_id.into(),
            counts,
            length_d,
        }
    }

    /// Builds a count vector from a dense slice of counts.
    pub fn from_dense(doc_id: impl Into<String>, dense: &[u32]) -> Self {
        Self::from_counts(doc_id, dense.iter().copied().enumerate())
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn counts(&self) -> &BTreeMap<usize, u32> {
        &self.counts
    }

    /// Document length `D`, the sum of all counts.
    pub fn length_d(&self) -> u64 {
        self.length_d
    }

    pub fn get(&self, position: usize) -> u32 {
        self.counts.get(&position).copied().unwrap_or(0)
    }

    /// Iterates `(position, count)` pairs in ascending position order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts.iter().map(|(&k, &c)| (k, c))
    }

    /// Largest stored position plus one, or 0 for the empty vector.
    pub fn min_dimension(&self) -> usize {
        self.counts.keys().next_back().map_or(0, |&k| k + 1)
    }

    pub fn to_dense(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        for (&i, &c) in &self.counts {
            v[i] = f64::from(c);
        }
        v
    }

    /// Errors unless every position is `< k`.
    pub fn check_dimension(&self, k: usize) -> Result<()> {
        let need = self.min_dimension();
        if need > k {
            return Err(Error::DimensionMismatch {
                what: "count vector position vs vocabulary size",
                expected: k,
                got: need,
            });
        }
        Ok(())
    }
}

/// Counts the in-vocabulary tokens of `doc`; out-of-vocabulary tokens are
/// dropped.
pub fn vectorize(doc: &Document, vocab: &Vocabulary) -> CountVector {
    CountVector::from_counts(
        doc.id.clone(),
        tokenize_lemmatize(&doc.text)
            .iter()
            .filter_map(|t| vocab.position(t))
            .map(|k| (k, 1)),
    )
}

/// Vectorizes every document, preserving input order.
pub fn vectorize_all(docs: &[Document], vocab: &Vocabulary) -> Vec<CountVector> {
    docs.par_iter().map(|d| vectorize(d, vocab)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t))
            .collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize_lemmatize("Refugees crossed borders."),
            vec!["refugee", "cross", "border"]
        );
        assert!(tokenize_lemmatize("").is_empty());
        assert_eq!(
            tokenize_lemmatize("Policies, policies!"),
            vec!["policy", "policy"]
        );
    }

    #[test]
    fn suffix_rules() {
        let cases = [
            ("classes", "class"),
            ("boxes", "box"),
            ("churches", "church"),
            ("camps", "camp"),
            ("class", "class"),
            ("meetings", "meet"),
            ("needed", "need"),
            ("feed", "feed"),
            ("is", "is"),
            ("bus", "bus"),
            ("Crossing", "cross"),
        ];
        for (input, want) in cases {
            assert_eq!(lemmatize(&input.to_lowercase()), want, "{input}");
        }
    }

    #[test]
    fn short_tokens_dropped() {
        assert_eq!(
            tokenize_lemmatize("a I x-ray 42 b2"),
            vec!["ray", "42", "b2"]
        );
    }

    #[test]
    fn vocabulary_ranking_and_ties() {
        let v = build_vocabulary(&docs(&["aa bb bb", "bb cc"]), 2).unwrap();
        assert_eq!(v.terms(), ["bb", "aa"]);
        let v = build_vocabulary(&docs(&["aa"]), 5).unwrap();
        assert_eq!(v.terms(), ["aa"]);
        assert!(build_vocabulary(&[], 10).unwrap().is_empty());
        assert!(build_vocabulary(&docs(&["aa"]), 0).is_err());
    }

    #[test]
    fn vocabulary_index_is_inverse() {
        let v = build_vocabulary(&docs(&["xx yy zz yy", "zz zz"]), 10).unwrap();
        for (i, t) in v.terms().iter().enumerate() {
            assert_eq!(v.position(t), Some(i));
            assert_eq!(v.term(i), Some(t.as_str()));
        }
        assert_eq!(v.position("nope"), None);
        assert!(Vocabulary::from_terms(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn stop_words_are_excluded() {
        let stop: HashSet<String> = ["the".to_string()].into();
        let v = build_vocabulary_filtered(&docs(&["the the the camp"]), 5, &stop).unwrap();
        assert_eq!(v.terms(), ["camp"]);
    }

    #[test]
    fn vectorize_examples() {
        let vocab = Vocabulary::from_terms(vec!["bb".into(), "aa".into()]).unwrap();
        let cv = vectorize(&Document::new("x", "bb bb aa zz"), &vocab);
        assert_eq!(cv.counts(), &BTreeMap::from([(0, 2), (1, 1)]));
        assert_eq!(cv.length_d(), 3);
        let empty = vectorize(&Document::new("e", ""), &vocab);
        assert!(empty.counts().is_empty());
        assert_eq!(empty.length_d(), 0);
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = Vocabulary::from_terms(vec!["bb".into(), "aa".into()]).unwrap();
        assert_eq!(v.to_json().replace([' ', '\n'], ""), r#"["bb","aa"]"#);
        assert_eq!(Vocabulary::from_json(&v.to_json()).unwrap(), v);
    }

    #[test]
    fn dimension_check() {
        let cv = CountVector::from_counts("d", [(4, 1)]);
        assert!(cv.check_dimension(5).is_ok());
        assert!(cv.check_dimension(4).is_err());
    }

    proptest! {
        #[test]
        fn vectorize_is_order_insensitive(words in prop::collection::vec("[a-d]{2,4}", 0..30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let text = words.join(" ");
            let mut shuffled = words.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let corpus = vec![Document::new("a", text.clone())];
            let vocab = build_vocabulary(&corpus, 5).unwrap();
            let a = vectorize(&Document::new("x", text), &vocab);
            let b = vectorize(&Document::new("x", shuffled.join(" ")), &vocab);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.length_d(), a.counts().values().map(|&c| c as u64).sum::<u64>());
            prop_assert!(a.check_dimension(vocab.len()).is_ok());
            prop_assert!(a.counts().values().all(|&c| c > 0));
        }

        #[test]
        fn vocabulary_is_deterministic(texts in prop::collection::vec("[a-e ]{0,20}", 1..8), k in 1usize..6) {
            let corpus: Vec<Document> = texts.iter().enumerate().map(|(i, t)| Document::new(i.to_string(), t.clone())).collect();
            let a = build_vocabulary(&corpus, k).unwrap();
            let b = build_vocabulary(&corpus, k).unwrap();
            prop_assert_eq!(a.terms(), b.terms());
            prop_assert!(a.len() <= k);
        }
    }
}
