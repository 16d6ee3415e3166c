use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::entity::extract_entity_refs;
use super::markup::{self, ScanError};
use super::{EntityRef, InfoboxMilitaryConflict, IngestError, RawArticle};

/// Bumped whenever the tag-recognition rules below change.
pub const COMBATANT_RULES_VERSION: u32 = 1;

/// Scanner limits for infobox parsing.
#[derive(Debug, Clone, Copy)]
pub struct InfoboxRules {
    pub max_nesting: usize,
}

impl Default for InfoboxRules {
    fn default() -> Self {
        Self {
            max_nesting: markup::DEFAULT_MAX_NESTING,
        }
    }
}

fn infobox_start() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\{\{\s*infobox[\s_]+military[\s_]+conflict\s*(\||\}\}|\n)").unwrap())
}

/// `combatant<digits>` with an optional one-letter sub-cell suffix
/// (`combatant1a`), which is merged into the numbered group.
fn combatant_key() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^combatant\s*(\d+)\s*([a-z])?$").unwrap())
}

fn numbered_key(prefixes: &[&str], key: &str) -> bool {
    prefixes.iter().any(|p| {
        key.strip_prefix(p)
            .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_alphanumeric()))
    })
}

pub fn parse_infobox(article: &RawArticle) -> Result<Option<InfoboxMilitaryConflict>, IngestError> {
    parse_infobox_with(article, InfoboxRules::default())
}

/// Returns the parsed record iff the article carries a military-conflict
/// infobox with at least two non-empty combatant groups.
pub fn parse_infobox_with(
    article: &RawArticle,
    rules: InfoboxRules,
) -> Result<Option<InfoboxMilitaryConflict>, IngestError> {
    let text = &article.wikitext;
    let Some(m) = infobox_start().find(text) else {
        return Ok(None);
    };
    let start = m.start();
    let end = markup::template_end(text, start, rules.max_nesting).map_err(|e| IngestError::Parse {
        article: article.title.clone(),
        reason: match e {
            ScanError::Unbalanced { opened_at } => {
                format!("unbalanced braces in infobox opened at byte {opened_at}")
            }
            ScanError::TooDeep { limit } => format!("infobox nesting exceeds {limit}"),
        },
    })?;
    let inner = &text[start + 2..end - 2];

    let mut groups: BTreeMap<u64, Vec<(String, EntityRef)>> = BTreeMap::new();
    let mut strength = Vec::new();
    let mut casualties = Vec::new();
    let mut commanders = Vec::new();
    let mut place = None;
    let mut date = None;
    let mut result = None;

    // First segment is the template name.
    for segment in markup::split_top_level(inner, b'|').into_iter().skip(1) {
        let Some((key, value)) = markup::split_param(segment) else {
            continue;
        };
        let key = key.to_ascii_lowercase();
        let value = value.trim();
        if let Some(c) = combatant_key().captures(&key) {
            let number: u64 = c[1].parse().unwrap_or(u64::MAX);
            let suffix = c.get(2).map_or(String::new(), |s| s.as_str().to_string());
            let refs = extract_entity_refs(value);
            let group = groups.entry(number).or_default();
            group.extend(refs.into_iter().map(|r| (suffix.clone(), r)));
            continue;
        }
        let cleaned = || non_empty(value);
        match key.as_str() {
            "place" => place = cleaned(),
            "date" => date = cleaned(),
            "result" => result = cleaned(),
            k if numbered_key(&["strength"], k) => strength.extend(cleaned().map(|v| (k.to_string(), v))),
            k if numbered_key(&["casualties", "casualty"], k) => {
                casualties.extend(cleaned().map(|v| (k.to_string(), v)))
            }
            k if numbered_key(&["commander"], k) => commanders.extend(cleaned().map(|v| (k.to_string(), v))),
            _ => {}
        }
    }

    let combatant_groups: Vec<Vec<EntityRef>> = groups
        .into_values()
        .map(|mut cells| {
            // Unsuffixed cell first, then `a`, `b`, … in order.
            cells.sort_by(|a, b| a.0.cmp(&b.0));
            dedup_refs(cells.into_iter().map(|(_, r)| r))
        })
        .filter(|g| !g.is_empty())
        .collect();
    if combatant_groups.len() < 2 {
        return Ok(None);
    }

    Ok(Some(InfoboxMilitaryConflict {
        conflict_title: article.title.clone(),
        conflict_id: article.page_id,
        combatant_groups,
        place,
        date,
        strength: join_numbered(strength),
        casualties: join_numbered(casualties),
        commanders: join_numbered(commanders),
        result,
    }))
}

fn non_empty(value: &str) -> Option<String> {
    let v = value.trim();
    (!v.is_empty()).then(|| v.to_string())
}

fn join_numbered(mut fields: Vec<(String, String)>) -> Option<String> {
    if fields.is_empty() {
        return None;
    }
    fields.sort();
    Some(fields.into_iter().map(|(_, v)| v).collect::<Vec<_>>().join("\n"))
}

pub(super) fn dedup_refs(refs: impl IntoIterator<Item = EntityRef>) -> Vec<EntityRef> {
    let mut seen = std::collections::HashSet::new();
    refs.into_iter()
        .filter(|r| seen.insert(super::entity::dedup_key(r)))
        .collect()
}
