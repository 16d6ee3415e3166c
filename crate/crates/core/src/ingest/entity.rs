use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::infobox::dedup_refs;
use super::markup;
use super::{EntityRef, IngestError};

pub const DEFAULT_MAX_REDIRECT_HOPS: usize = 5;

/// Redirect page title → destination title.
pub type RedirectTable = BTreeMap<String, String>;

const ICON_TEMPLATES: &[&str] = &["flagicon", "flagdeco", "flagicon image", "flag icon", "flagicon2"];
const LINKING_FLAG_TEMPLATES: &[&str] = &["flag", "flagcountry", "flagu", "flag country", "flagg"];
/// Plain-text lines that are labels, not belligerents.
const LABEL_LINES: &[&str] = &[
    "supported by",
    "support",
    "allies",
    "and",
    "in support",
    "logistical support",
];

fn wikilink() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\[([^\[\]|]*)(?:\|([^\[\]]*))?\]\]").unwrap())
}

fn parenthetical() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\([^()]*\)").unwrap())
}

pub(super) fn dedup_key(r: &EntityRef) -> String {
    match &r.link_target {
        Some(t) => t.clone(),
        None => format!("text:{}", normalize_plain(&r.raw_text)),
    }
}

pub(crate) fn normalize_plain(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Expands flag templates and unwraps layout templates (`plainlist`, `ubl`,
/// `nowrap`, …) to their positional arguments so links inside survive.
fn expand_templates(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let mut copy_from = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'{' && bytes[i + 1] == b'{' {
            let Ok(end) = markup::template_end(text, i, markup::DEFAULT_MAX_NESTING) else {
                // Unbalanced leftovers are dropped.
                out.push_str(&text[copy_from..i]);
                copy_from = text.len();
                break;
            };
            out.push_str(&text[copy_from..i]);
            out.push_str(&expand_one(&text[i + 2..end - 2]));
            i = end;
            copy_from = end;
        } else {
            i += 1;
        }
    }
    if copy_from < text.len() {
        out.push_str(&text[copy_from..]);
    }
    out
}

fn expand_one(inner: &str) -> String {
    let parts = markup::split_top_level(inner, b'|');
    let name = parts[0].trim().to_ascii_lowercase().replace('_', " ");
    let positional: Vec<&str> = parts[1..]
        .iter()
        .copied()
        .filter(|p| markup::split_param(p).is_none())
        .collect();
    if ICON_TEMPLATES.contains(&name.as_str()) {
        return String::new();
    }
    if LINKING_FLAG_TEMPLATES.contains(&name.as_str()) {
        return match positional.first() {
            Some(country) if !country.trim().is_empty() => format!("[[{}]]", country.trim()),
            _ => String::new(),
        };
    }
    positional
        .iter()
        .map(|p| expand_templates(p))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One [`EntityRef`] per wikilink in order; lines without any link yield a
/// plain-text reference. Duplicates are removed keeping first occurrence.
pub fn extract_entity_refs(cell_wikitext: &str) -> Vec<EntityRef> {
    let text = markup::strip_refs_and_comments(cell_wikitext);
    let text = markup::normalize_breaks(&expand_templates(&text));
    let mut refs = Vec::new();
    for line in text.lines() {
        let mut linked = false;
        for cap in wikilink().captures_iter(line) {
            let target = cap.get(1).map_or("", |m| m.as_str());
            if markup::is_namespaced(target) || target.trim().is_empty() {
                continue;
            }
            linked = true;
            let target = markup::normalize_title(target);
            let label = cap
                .get(2)
                .map(|m| markup::strip_formatting(m.as_str()).trim().to_string())
                .filter(|l| !l.is_empty())
                .unwrap_or_else(|| target.clone());
            refs.push(EntityRef::link(target, label));
        }
        if !linked && wikilink().find(line).is_none() {
            if let Some(plain) = plain_entity(line) {
                refs.push(EntityRef::plain(plain));
            }
        }
    }
    dedup_refs(refs)
}

fn plain_entity(line: &str) -> Option<String> {
    let cleaned = markup::strip_formatting(line);
    let cleaned = cleaned.trim();
    if cleaned.ends_with(':') {
        return None;
    }
    let cleaned = parenthetical().replace_all(cleaned, "");
    let cleaned = cleaned
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_string();
    let lower = cleaned.to_lowercase();
    if cleaned.is_empty() || !cleaned.chars().any(char::is_alphabetic) || LABEL_LINES.contains(&lower.as_str()) {
        return None;
    }
    Some(cleaned)
}

/// Follows `redirect_table` from the reference's link target until a
/// non-redirect title is reached. Plain-text references are returned as-is.
pub fn resolve_redirect(
    entity: &EntityRef,
    redirect_table: &RedirectTable,
    max_hops: usize,
) -> Result<EntityRef, IngestError> {
    let Some(start) = &entity.link_target else {
        return Ok(entity.clone());
    };
    let mut chain = vec![start.clone()];
    let mut current = start;
    while let Some(next) = redirect_table.get(current) {
        let cycle = chain.contains(next);
        chain.push(next.clone());
        if cycle || chain.len() > max_hops + 1 {
            return Err(IngestError::UnresolvedRedirect { chain });
        }
        current = next;
    }
    Ok(EntityRef {
        resolved_title: Some(current.clone()),
        ..entity.clone()
    })
}
