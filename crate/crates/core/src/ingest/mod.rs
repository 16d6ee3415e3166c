//! Wikitext ingestion: conflict infoboxes, belligerent entity references,
//! redirects, article sections and category harvesting.

mod category;
mod corpus;
mod entity;
mod infobox;
pub mod markup;
mod sections;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use category::{harvest_category_tree, CategoryEntry, CategoryIndex};
pub use corpus::{
    entity_id_for, ingest, load_corpus_dir, read_xml_export, slug_for_title, Corpus, EntityRecord, IndexEntry,
    IngestIssue, IngestOutput,
};
pub use entity::{extract_entity_refs, resolve_redirect, RedirectTable, DEFAULT_MAX_REDIRECT_HOPS};
pub use infobox::{parse_infobox, parse_infobox_with, InfoboxRules, COMBATANT_RULES_VERSION};
pub use sections::{default_blacklist, section_split, SUMMARY_TITLE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("article {article:?}: {reason}")]
    Parse { article: String, reason: String },
    #[error("unresolved redirect chain {chain:?}")]
    UnresolvedRedirect { chain: Vec<String> },
    #[error("category {0:?} not found")]
    CategoryNotFound(String),
    #[error("invalid article {title:?}: {reason}")]
    InvalidArticle { title: String, reason: String },
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed index: {0}")]
    Index(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawArticle {
    pub title: String,
    pub page_id: u64,
    pub wikitext: String,
    pub is_redirect: bool,
    pub redirect_target: Option<String>,
}

impl RawArticle {
    pub fn new(title: impl Into<String>, page_id: u64, wikitext: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            page_id,
            wikitext: wikitext.into(),
            is_redirect: false,
            redirect_target: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let invalid = |reason: &str| IngestError::InvalidArticle {
            title: self.title.clone(),
            reason: reason.to_string(),
        };
        if self.title.trim().is_empty() {
            return Err(invalid("empty title"));
        }
        if self.is_redirect != self.redirect_target.is_some() {
            return Err(invalid("is_redirect disagrees with redirect_target"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityRef {
    pub raw_text: String,
    pub link_target: Option<String>,
    pub resolved_title: Option<String>,
}

impl EntityRef {
    pub fn link(target: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            link_target: Some(target.into()),
            resolved_title: None,
        }
    }

    pub fn plain(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            link_target: None,
            resolved_title: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoboxMilitaryConflict {
    pub conflict_title: String,
    pub conflict_id: u64,
    pub combatant_groups: Vec<Vec<EntityRef>>,
    pub place: Option<String>,
    pub date: Option<String>,
    pub strength: Option<String>,
    pub casualties: Option<String>,
    pub commanders: Option<String>,
    pub result: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub section_title: String,
    pub body_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionedArticle {
    pub article_title: String,
    pub sections: Vec<Section>,
}
