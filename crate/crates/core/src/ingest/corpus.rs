//! Local corpora: a directory of `.wiki` files plus `index.json`, or a
//! MediaWiki XML export stream.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use quick_xml::events::Event;
use serde::{Deserialize, Serialize};

use super::entity::{normalize_plain, resolve_redirect, RedirectTable, DEFAULT_MAX_REDIRECT_HOPS};
use super::infobox::parse_infobox;
use super::sections::{default_blacklist, section_split};
use super::{EntityRef, InfoboxMilitaryConflict, IngestError, RawArticle, SectionedArticle};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub title: String,
    pub page_id: u64,
    #[serde(default)]
    pub is_redirect: bool,
    #[serde(default)]
    pub redirect_target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestIssue {
    pub article: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub articles: Vec<RawArticle>,
    pub redirects: RedirectTable,
    pub issues: Vec<IngestIssue>,
}

/// One row of `entities.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub title: Option<String>,
    pub page_id: Option<u64>,
    pub raw_text: String,
    pub conflict_ids: Vec<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutput {
    pub conflicts: Vec<InfoboxMilitaryConflict>,
    pub entities: Vec<EntityRecord>,
    pub sections: Vec<SectionedArticle>,
    pub issues: Vec<IngestIssue>,
}

/// File name stem for an article title: spaces become `_`, bytes outside
/// `[A-Za-z0-9_.,()-]` are percent-encoded.
pub fn slug_for_title(title: &str) -> String {
    let mut out = String::with_capacity(title.len());
    for b in title.replace(' ', "_").bytes() {
        if b.is_ascii_alphanumeric() || b"_.,()-".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub fn load_corpus_dir(dir: &Path) -> Result<Corpus, IngestError> {
    let index_path = dir.join("index.json");
    let raw = std::fs::read_to_string(&index_path).map_err(|e| IngestError::Io {
        path: index_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let entries: Vec<IndexEntry> = serde_json::from_str(&raw).map_err(|e| IngestError::Index(e.to_string()))?;
    let mut corpus = Corpus::default();
    let mut ids = BTreeSet::new();
    for entry in entries {
        if !ids.insert(entry.page_id) {
            return Err(IngestError::Index(format!("duplicate page_id {}", entry.page_id)));
        }
        if entry.is_redirect {
            match &entry.redirect_target {
                Some(t) => {
                    corpus.redirects.insert(entry.title.clone(), t.clone());
                }
                None => corpus.issues.push(IngestIssue {
                    article: entry.title.clone(),
                    error: "redirect entry without redirect_target".into(),
                }),
            }
            continue;
        }
        let path = dir.join(format!("{}.wiki", slug_for_title(&entry.title)));
        let text = std::fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| String::from_utf8(bytes).map_err(|e| format!("invalid UTF-8: {e}")));
        match text {
            Ok(wikitext) => {
                let article = RawArticle::new(entry.title, entry.page_id, wikitext);
                match article.validate() {
                    Ok(()) => corpus.articles.push(article),
                    Err(e) => corpus.issues.push(IngestIssue {
                        article: article.title,
                        error: e.to_string(),
                    }),
                }
            }
            Err(error) => corpus.issues.push(IngestIssue {
                article: entry.title,
                error: format!("{}: {error}", path.display()),
            }),
        }
    }
    Ok(corpus)
}

/// Streams `<page>` elements out of a MediaWiki XML export.
pub fn read_xml_export<R: BufRead>(input: R) -> Result<Corpus, IngestError> {
    let mut reader = quick_xml::Reader::from_reader(input);
    let mut buf = Vec::new();
    let mut path: Vec<Vec<u8>> = Vec::new();
    let mut corpus = Corpus::default();

    let mut title = String::new();
    let mut page_id: Option<u64> = None;
    let mut redirect: Option<String> = None;
    let mut text = String::new();
    let xml_err = |e: quick_xml::Error| IngestError::Io {
        path: "<xml stream>".into(),
        reason: e.to_string(),
    };

    loop {
        match reader.read_event_into(&mut buf).map_err(xml_err)? {
            Event::Start(e) => {
                let name = e.name().as_ref().to_vec();
                if name == b"page" {
                    title.clear();
                    page_id = None;
                    redirect = None;
                    text.clear();
                }
                path.push(name);
            }
            Event::Empty(e) => {
                if e.name().as_ref() == b"redirect" {
                    if let Ok(Some(attr)) = e.try_get_attribute("title") {
                        redirect = Some(attr.unescape_value().map_err(xml_err)?.into_owned());
                    }
                }
            }
            Event::Text(t) => {
                let value = t.unescape().map_err(xml_err)?;
                let tail: Vec<&[u8]> = path.iter().rev().take(2).map(|p| p.as_slice()).collect();
                match tail.as_slice() {
                    [b"title", b"page"] => title.push_str(&value),
                    [b"id", b"page"] => page_id = value.trim().parse().ok(),
                    [b"text", b"revision"] => text.push_str(&value),
                    _ => {}
                }
            }
            Event::CData(c) => {
                if path.last().map(|p| p.as_slice()) == Some(b"text") {
                    text.push_str(&String::from_utf8_lossy(&c.into_inner()));
                }
            }
            Event::End(e) => {
                path.pop();
                if e.name().as_ref() == b"page" {
                    let Some(id) = page_id else {
                        corpus.issues.push(IngestIssue {
                            article: title.clone(),
                            error: "page without id".into(),
                        });
                        continue;
                    };
                    match redirect.take() {
                        Some(target) => {
                            corpus.redirects.insert(title.clone(), target);
                        }
                        None => corpus.articles.push(RawArticle::new(title.clone(), id, text.clone())),
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    Ok(corpus)
}

/// Graph identity of a reference: resolved title, else link target, else a
/// `text:`-prefixed normalized raw string.
pub fn entity_id_for(r: &EntityRef) -> String {
    r.resolved_title
        .clone()
        .or_else(|| r.link_target.clone())
        .unwrap_or_else(|| format!("text:{}", normalize_plain(&r.raw_text)))
}

/// Extracts conflicts, their entities and the sections of every conflict
/// and entity article present in the corpus. `restrict_to` limits conflict
/// candidates (e.g. to a harvested category tree).
pub fn ingest(corpus: &Corpus, restrict_to: Option<&BTreeSet<String>>, exec: Execution) -> IngestOutput {
    let candidates: Vec<&RawArticle> = corpus
        .articles
        .iter()
        .filter(|a| restrict_to.is_none_or(|set| set.contains(&a.title)))
        .collect();

    let parsed = exec.map(&candidates, |article| {
        let mut issues = Vec::new();
        let record = match parse_infobox(article) {
            Ok(Some(mut rec)) => {
                for group in &mut rec.combatant_groups {
                    for r in group.iter_mut() {
                        match resolve_redirect(r, &corpus.redirects, DEFAULT_MAX_REDIRECT_HOPS) {
                            Ok(resolved) => *r = resolved,
                            Err(e) => issues.push(IngestIssue {
                                article: article.title.clone(),
                                error: e.to_string(),
                            }),
                        }
                    }
                }
                Some(rec)
            }
            Ok(None) => None,
            Err(e) => {
                issues.push(IngestIssue {
                    article: article.title.clone(),
                    error: e.to_string(),
                });
                None
            }
        };
        (record, issues)
    });

    let mut out = IngestOutput {
        issues: corpus.issues.clone(),
        ..Default::default()
    };
    for (record, issues) in parsed {
        out.issues.extend(issues);
        out.conflicts.extend(record);
    }

    let by_title: BTreeMap<&str, &RawArticle> = corpus.articles.iter().map(|a| (a.title.as_str(), a)).collect();
    let mut entities: BTreeMap<String, EntityRecord> = BTreeMap::new();
    for conflict in &out.conflicts {
        for r in conflict.combatant_groups.iter().flatten() {
            let id = entity_id_for(r);
            let title = r.resolved_title.clone().or_else(|| r.link_target.clone());
            let rec = entities.entry(id.clone()).or_insert_with(|| EntityRecord {
                entity_id: id,
                page_id: title.as_deref().and_then(|t| by_title.get(t)).map(|a| a.page_id),
                title,
                raw_text: r.raw_text.clone(),
                conflict_ids: Vec::new(),
            });
            if !rec.conflict_ids.contains(&conflict.conflict_id) {
                rec.conflict_ids.push(conflict.conflict_id);
            }
        }
    }
    for rec in entities.values_mut() {
        rec.conflict_ids.sort_unstable();
    }

    let blacklist = default_blacklist();
    let mut seen = BTreeSet::new();
    let mut to_split: Vec<&RawArticle> = Vec::new();
    let conflict_titles = out.conflicts.iter().map(|c| c.conflict_title.as_str());
    let entity_titles = entities.values().filter_map(|e| e.title.as_deref());
    for title in conflict_titles.chain(entity_titles) {
        if let Some(article) = by_title.get(title) {
            if seen.insert(title) {
                to_split.push(article);
            }
        }
    }
    out.sections = exec.map(&to_split, |a| section_split(a, &blacklist));
    out.entities = entities.into_values().collect();
    out
}
