use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::annotate::{AnnotatedToken, CoarsePos, EntityTag};
use super::FeatureError;
use crate::par::Execution;

/// Lemma counts of one document.
pub type Bag = BTreeMap<String, u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CorpusTag {
    Entity,
    Conflict,
}

/// Keeps noun and adjective lemmas, dropping named entities other than
/// religions. Lemmas are lowercased.
pub fn preprocess(tokens: &[AnnotatedToken]) -> Bag {
    let mut bag = Bag::new();
    for t in tokens {
        if t.pos == CoarsePos::Other {
            continue;
        }
        if matches!(t.ne_tag, Some(tag) if tag != EntityTag::Religion) {
            continue;
        }
        let lemma = t.lemma.trim().to_lowercase();
        if !lemma.is_empty() {
            *bag.entry(lemma).or_insert(0) += 1;
        }
    }
    bag
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    /// Inclusive lower bound on document frequency as a fraction of documents.
    pub min_df: f64,
    /// Inclusive upper bound.
    pub max_df: f64,
    pub max_terms: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_df: 0.01,
            max_df: 0.40,
            max_terms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub corpus_tag: CorpusTag,
    pub terms: Vec<String>,
    pub document_frequency: Vec<u64>,
    pub total_documents: u64,
}

/// Document frequency band, then the `max_terms` most frequent terms by
/// total count (ties lexicographic).
pub fn build_vocabulary(
    docs: &[Bag],
    corpus_tag: CorpusTag,
    config: &VocabConfig,
    exec: Execution,
) -> Result<Vocabulary, FeatureError> {
    if docs.is_empty() {
        return Err(FeatureError::EmptyCorpus(corpus_tag));
    }
    let chunk = docs.len().div_ceil(64).max(1);
    let chunks: Vec<&[Bag]> = docs.chunks(chunk).collect();
    let partials = exec.map(&chunks, |part| {
        let mut stats: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        for doc in part.iter() {
            for (term, &count) in doc {
                let s = stats.entry(term.as_str()).or_default();
                s.0 += 1;
                s.1 += count;
            }
        }
        stats
    });
    let mut stats: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for part in partials {
        for (term, (df, tf)) in part {
            let s = stats.entry(term).or_default();
            s.0 += df;
            s.1 += tf;
        }
    }
    let n = docs.len() as f64;
    let mut kept: Vec<(&str, u64, u64)> = stats
        .into_iter()
        .filter(|&(_, (df, _))| {
            let ratio = df as f64 / n;
            ratio >= config.min_df && ratio <= config.max_df
        })
        .map(|(t, (df, tf))| (t, df, tf))
        .collect();
    kept.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));
    kept.truncate(config.max_terms);
    Ok(Vocabulary {
        corpus_tag,
        terms: kept.iter().map(|k| k.0.to_string()).collect(),
        document_frequency: kept.iter().map(|k| k.1).collect(),
        total_documents: docs.len() as u64,
    })
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Smoothed `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, term_index: usize) -> f64 {
        let n = self.total_documents as f64;
        let df = self.document_frequency[term_index] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    fn weights(&self, doc: &Bag) -> Vec<f64> {
        self.terms
            .iter()
            .enumerate()
            .map(|(i, t)| doc.get(t).map_or(0.0, |&c| c as f64 * self.idf(i)))
            .collect()
    }
}

/// L2-normalized tf·idf vector aligned to the vocabulary order.
pub fn tfidf_vector(doc: &Bag, vocab: &Vocabulary) -> Vec<f64> {
    let mut v = vocab.weights(doc);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Mean of the conflict-article vectors attached to an edge.
pub fn edge_embedding(
    conflict_ids: &[String],
    conflict_vectors: &BTreeMap<String, Vec<f64>>,
    dims: usize,
) -> Result<Vec<f64>, FeatureError> {
    if conflict_ids.is_empty() {
        return Err(FeatureError::NoConflicts);
    }
    let mut sum = vec![0.0; dims];
    for id in conflict_ids {
        let v = conflict_vectors
            .get(id)
            .ok_or_else(|| FeatureError::MissingConflictVector(id.clone()))?;
        if v.len() != dims {
            return Err(FeatureError::Dimension {
                doc: id.clone(),
                expected: dims,
                found: v.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let k = conflict_ids.len() as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}

/// The `k` highest-weighted in-vocabulary terms of `doc`, descending, ties
/// lexicographic.
pub fn top_unigrams(doc: &Bag, vocab: &Vocabulary, k: usize) -> Vec<(String, f64)> {
    let weights = tfidf_vector(doc, vocab);
    let mut ranked: Vec<(String, f64)> = vocab
        .terms
        .iter()
        .zip(weights)
        .filter(|(_, w)| *w > 0.0)
        .map(|(t, w)| (t.clone(), w))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Terms seen in a bag that are also in the vocabulary.
pub fn in_vocabulary<'a>(doc: &'a Bag, vocab: &Vocabulary) -> BTreeSet<&'a str> {
    let terms: BTreeSet<&str> = vocab.terms.iter().map(String::as_str).collect();
    doc.keys().map(String::as_str).filter(|t| terms.contains(t)).collect()
}
