//! tf-idf featurization of entity and conflict articles and their sections.

mod annotate;
mod tfidf;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotate::{annotate_text, lemmatize_noun, AnnotatedToken, AnnotationRecord, CoarsePos, EntityTag};
pub use tfidf::{
    build_vocabulary, edge_embedding, in_vocabulary, preprocess, tfidf_vector, top_unigrams, Bag, CorpusTag,
    VocabConfig, Vocabulary,
};

use crate::graph::DyadGraph;
use crate::ingest::markup::plain_text;
use crate::ingest::{InfoboxMilitaryConflict, SectionedArticle};
use crate::par::Execution;
use crate::tensor::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("{0:?} corpus has no documents")]
    EmptyCorpus(CorpusTag),
    #[error("no vector for conflict {0}")]
    MissingConflictVector(String),
    #[error("edge has no conflicts")]
    NoConflicts,
    #[error("{doc}: expected {expected} dims, found {found}")]
    Dimension { doc: String, expected: usize, found: usize },
    #[error("malformed feature record: {0}")]
    Parse(String),
}

/// Annotated token streams keyed by `(doc_id, section_title)`.
pub type Annotations = BTreeMap<(String, String), Vec<AnnotatedToken>>;

pub fn annotations_from_records(records: impl IntoIterator<Item = AnnotationRecord>) -> Annotations {
    records
        .into_iter()
        .map(|r| ((r.doc_id, r.section_title), r.tokens))
        .collect()
}

/// One row of `features.jsonl`. `section_title` is `None` for the whole
/// article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub doc_id: String,
    pub corpus: CorpusTag,
    pub section_title: Option<String>,
    pub values: Vec<f64>,
}

impl FeatureRecord {
    /// JSON line with every float written to 17 significant digits.
    pub fn to_json_line(&self) -> String {
        let mut s = String::with_capacity(32 + self.values.len() * 24);
        s.push_str("{\"doc_id\":");
        s.push_str(&serde_json::to_string(&self.doc_id).expect("string"));
        s.push_str(",\"corpus\":");
        s.push_str(&serde_json::to_string(&self.corpus).expect("tag"));
        s.push_str(",\"section_title\":");
        s.push_str(&serde_json::to_string(&self.section_title).expect("title"));
        s.push_str(",\"values\":[");
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v:.16e}").expect("write to string");
        }
        s.push_str("]}");
        s
    }

    pub fn from_json_line(line: &str) -> Result<Self, FeatureError> {
        serde_json::from_str(line).map_err(|e| FeatureError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub entity_vocab: Vocabulary,
    pub conflict_vocab: Vocabulary,
    pub records: Vec<FeatureRecord>,
}

fn section_bag(doc: &str, title: &str, body: &str, annotations: &Annotations) -> Bag {
    match annotations.get(&(doc.to_string(), title.to_string())) {
        Some(tokens) => preprocess(tokens),
        None => preprocess(&annotate_text(&plain_text(body))),
    }
}

struct CorpusDocs<'a> {
    titles: Vec<&'a str>,
    article_bags: Vec<Bag>,
    section_bags: Vec<Vec<(String, Bag)>>,
}

fn corpus_docs<'a>(articles: &'a [SectionedArticle], bags: &[Vec<Bag>], include: &BTreeSet<String>) -> CorpusDocs<'a> {
    let mut docs = CorpusDocs {
        titles: Vec::new(),
        article_bags: Vec::new(),
        section_bags: Vec::new(),
    };
    for (a, sb) in articles.iter().zip(bags) {
        if !include.contains(&a.article_title) {
            continue;
        }
        let mut whole = Bag::new();
        for b in sb {
            for (t, c) in b {
                *whole.entry(t.clone()).or_insert(0) += c;
            }
        }
        docs.titles.push(&a.article_title);
        docs.article_bags.push(whole);
        docs.section_bags.push(
            a.sections
                .iter()
                .map(|s| s.section_title.clone())
                .zip(sb.iter().cloned())
                .collect(),
        );
    }
    docs
}

/// Builds both vocabularies from article-level documents and vectorizes
/// every article and section. An article listed in both title sets is a
/// document of both corpora.
pub fn featurize(
    articles: &[SectionedArticle],
    entity_titles: &BTreeSet<String>,
    conflict_titles: &BTreeSet<String>,
    annotations: &Annotations,
    config: &VocabConfig,
    exec: Execution,
) -> Result<FeatureSet, FeatureError> {
    let bags: Vec<Vec<Bag>> = exec.map(articles, |a| {
        a.sections
            .iter()
            .map(|s| section_bag(&a.article_title, &s.section_title, &s.body_text, annotations))
            .collect()
    });
    let mut records = Vec::new();
    let mut vocabs = Vec::new();
    for (tag, include) in [
        (CorpusTag::Entity, entity_titles),
        (CorpusTag::Conflict, conflict_titles),
    ] {
        let docs = corpus_docs(articles, &bags, include);
        let vocab = build_vocabulary(&docs.article_bags, tag, config, exec)?;
        let idx: Vec<usize> = (0..docs.titles.len()).collect();
        let per_doc = exec.map(&idx, |&i| {
            let mut out = vec![FeatureRecord {
                doc_id: docs.titles[i].to_string(),
                corpus: tag,
                section_title: None,
                values: tfidf_vector(&docs.article_bags[i], &vocab),
            }];
            for (title, bag) in &docs.section_bags[i] {
                out.push(FeatureRecord {
                    doc_id: docs.titles[i].to_string(),
                    corpus: tag,
                    section_title: Some(title.clone()),
                    values: tfidf_vector(bag, &vocab),
                });
            }
            out
        });
        records.extend(per_doc.into_iter().flatten());
        vocabs.push(vocab);
    }
    let conflict_vocab = vocabs.pop().expect("two corpora");
    let entity_vocab = vocabs.pop().expect("two corpora");
    Ok(FeatureSet {
        entity_vocab,
        conflict_vocab,
        records,
    })
}

impl FeatureSet {
    pub fn article_vectors(&self, corpus: CorpusTag) -> BTreeMap<&str, &[f64]> {
        self.records
            .iter()
            .filter(|r| r.corpus == corpus && r.section_title.is_none())
            .map(|r| (r.doc_id.as_str(), r.values.as_slice()))
            .collect()
    }

    /// Conflict-article vectors keyed by conflict id.
    pub fn conflict_vectors(&self, conflicts: &[InfoboxMilitaryConflict]) -> BTreeMap<String, Vec<f64>> {
        let by_title = self.article_vectors(CorpusTag::Conflict);
        conflicts
            .iter()
            .filter_map(|c| {
                by_title
                    .get(c.conflict_title.as_str())
                    .map(|v| (c.conflict_id.to_string(), v.to_vec()))
            })
            .collect()
    }

    /// Entity-article vector per graph node; nodes without an article get
    /// the zero vector.
    pub fn node_matrix(&self, graph: &DyadGraph) -> Matrix {
        let by_title = self.article_vectors(CorpusTag::Entity);
        let dims = self.entity_vocab.len();
        let mut m = Matrix::zeros(graph.node_count(), dims);
        for (i, node) in graph.nodes().iter().enumerate() {
            if let Some(v) = by_title.get(node.0.as_str()) {
                m.row_mut(i).copy_from_slice(v);
            }
        }
        m
    }
}

/// Edge feature rows: the mean conflict-article vector of each edge.
pub fn edge_matrix(
    graph: &DyadGraph,
    conflict_vectors: &BTreeMap<String, Vec<f64>>,
    dims: usize,
) -> Result<Matrix, FeatureError> {
    let mut m = Matrix::zeros(graph.edge_count(), dims);
    for (i, e) in graph.edges().iter().enumerate() {
        let v = edge_embedding(&e.conflict_ids, conflict_vectors, dims)?;
        m.row_mut(i).copy_from_slice(&v);
    }
    Ok(m)
}
