use std::collections::BTreeSet;

use super::{RawArticle, Section, SectionedArticle};

pub const SUMMARY_TITLE: &str = "Summary";

/// Reference-style sections that carry no article content.
pub fn default_blacklist() -> BTreeSet<String> {
    [
        "See also",
        "Bibliography",
        "References",
        "Further reading",
        "Sources",
        "Literature",
        "External links",
        "Citations",
        "Footnotes",
        "Notes",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// Title of a level-2 heading line (`== Title ==`), if it is one.
fn level2_heading(line: &str) -> Option<&str> {
    let t = line.trim_end();
    if t.len() >= 5 && t.starts_with("==") && !t.starts_with("===") && t.ends_with("==") && !t.ends_with("===") {
        Some(t[2..t.len() - 2].trim())
    } else {
        None
    }
}

/// Splits on level-2 headings. Text before the first heading becomes
/// [`SUMMARY_TITLE`]; blacklisted sections (case-insensitive) are dropped.
/// Bodies are exact slices of the source between heading lines.
pub fn section_split(article: &RawArticle, blacklist: &BTreeSet<String>) -> SectionedArticle {
    let banned: BTreeSet<String> = blacklist.iter().map(|t| t.trim().to_lowercase()).collect();
    let mut sections = vec![Section {
        section_title: SUMMARY_TITLE.to_string(),
        body_text: String::new(),
    }];
    for line in article.wikitext.split_inclusive('\n') {
        match level2_heading(line) {
            Some(title) => sections.push(Section {
                section_title: title.to_string(),
                body_text: String::new(),
            }),
            None => sections.last_mut().unwrap().body_text.push_str(line),
        }
    }
    let mut kept: Vec<Section> = Vec::with_capacity(sections.len());
    for (i, s) in sections.into_iter().enumerate() {
        // The lead section is always kept so that every article starts with it.
        if i == 0 || !banned.contains(&s.section_title.to_lowercase()) {
            kept.push(s);
        }
    }
    SectionedArticle {
        article_title: article.title.clone(),
        sections: kept,
    }
}
