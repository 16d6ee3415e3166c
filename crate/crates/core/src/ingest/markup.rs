//! Low-level wikitext scanning: balanced `{{…}}`/`[[…]]` matching,
//! top-level splitting and markup stripping.

use std::sync::OnceLock;

use regex::Regex;

/// Maximum `{{`/`[[` nesting accepted by the scanner.
pub const DEFAULT_MAX_NESTING: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanError {
    Unbalanced { opened_at: usize },
    TooDeep { limit: usize },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Open {
    Template,
    Link,
}

/// Given `text[start..]` beginning with `{{`, returns the byte offset one past
/// the matching `}}`.
pub fn template_end(text: &str, start: usize, max_nesting: usize) -> Result<usize, ScanError> {
    let bytes = text.as_bytes();
    debug_assert!(bytes[start..].starts_with(b"{{"));
    let mut stack: Vec<Open> = Vec::new();
    let mut i = start;
    while i + 1 < bytes.len() {
        match (bytes[i], bytes[i + 1]) {
            (b'{', b'{') => {
                if stack.len() >= max_nesting {
                    return Err(ScanError::TooDeep { limit: max_nesting });
                }
                stack.push(Open::Template);
                i += 2;
            }
            (b'[', b'[') => {
                if stack.len() >= max_nesting {
                    return Err(ScanError::TooDeep { limit: max_nesting });
                }
                stack.push(Open::Link);
                i += 2;
            }
            (b']', b']') => {
                if stack.last() == Some(&Open::Link) {
                    stack.pop();
                }
                i += 2;
            }
            (b'}', b'}') => {
                // Unclosed links inside a template are dropped.
                while stack.last() == Some(&Open::Link) {
                    stack.pop();
                }
                stack.pop();
                i += 2;
                if stack.is_empty() {
                    return Ok(i);
                }
            }
            _ => i += 1,
        }
    }
    Err(ScanError::Unbalanced { opened_at: start })
}

/// Splits on `sep` occurring outside any `{{…}}` or `[[…]]`.
pub fn split_top_level(text: &str, sep: u8) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut parts = Vec::new();
    let mut last = 0;
    let mut i = 0;
    while i < bytes.len() {
        if i + 1 < bytes.len() {
            match (bytes[i], bytes[i + 1]) {
                (b'{', b'{') | (b'[', b'[') => {
                    depth += 1;
                    i += 2;
                    continue;
                }
                (b'}', b'}') | (b']', b']') => {
                    depth = depth.saturating_sub(1);
                    i += 2;
                    continue;
                }
                _ => {}
            }
        }
        if depth == 0 && bytes[i] == sep {
            parts.push(&text[last..i]);
            last = i + 1;
        }
        i += 1;
    }
    parts.push(&text[last..]);
    parts
}

/// Splits `key = value` at the first top-level `=`.
pub fn split_param(segment: &str) -> Option<(&str, &str)> {
    let mut parts = split_top_level(segment, b'=');
    if parts.len() < 2 {
        return None;
    }
    let key = parts.remove(0);
    let value_start = key.len() + 1;
    Some((key.trim(), &segment[value_start..]))
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

/// Removes HTML comments and `<ref>` tags with their content.
pub fn strip_refs_and_comments(text: &str) -> String {
    static COMMENT: OnceLock<Regex> = OnceLock::new();
    static REF_SELF: OnceLock<Regex> = OnceLock::new();
    static REF_PAIR: OnceLock<Regex> = OnceLock::new();
    let text = re(&COMMENT, r"(?s)<!--.*?-->").replace_all(text, "");
    let text = re(&REF_SELF, r"(?is)<ref\b[^>]*/>").replace_all(&text, "");
    re(&REF_PAIR, r"(?is)<ref\b[^>]*>.*?</ref\s*>")
        .replace_all(&text, "")
        .into_owned()
}

/// Replaces `<br>` variants with newlines.
pub fn normalize_breaks(text: &str) -> String {
    static BR: OnceLock<Regex> = OnceLock::new();
    re(&BR, r"(?i)<br\s*/?\s*>").replace_all(text, "\n").into_owned()
}

/// Drops remaining HTML tags, bold/italic quotes and bullet prefixes.
pub fn strip_formatting(text: &str) -> String {
    static TAG: OnceLock<Regex> = OnceLock::new();
    static QUOTES: OnceLock<Regex> = OnceLock::new();
    let text = re(&TAG, r"</?[A-Za-z][^>]*>").replace_all(text, "");
    let text = re(&QUOTES, r"'{2,}").replace_all(&text, "");
    text.lines()
        .map(|l| l.trim_start_matches(['*', '#', ':', ';', ' ', '\t']))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Approximate rendered text of a wikitext fragment, for tokenization.
/// Templates and tables are dropped, links collapse to their label.
pub fn plain_text(wikitext: &str) -> String {
    static LINK: OnceLock<Regex> = OnceLock::new();
    static EXT: OnceLock<Regex> = OnceLock::new();
    let text = strip_refs_and_comments(wikitext);
    let text = drop_templates_and_tables(&text);
    let link = re(&LINK, r"\[\[([^\[\]|]*)(?:\|([^\[\]]*))?\]\]");
    let text = link.replace_all(&text, |c: &regex::Captures<'_>| {
        let target = c.get(1).map_or("", |m| m.as_str());
        if is_namespaced(target) {
            String::new()
        } else {
            c.get(2).unwrap_or_else(|| c.get(1).unwrap()).as_str().to_string()
        }
    });
    let text = re(&EXT, r"\[https?://[^\s\]]*\s*([^\]]*)\]").replace_all(&text, "$1");
    strip_formatting(&normalize_breaks(&text))
}

fn drop_templates_and_tables(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let mut copy_from = 0;
    while i + 1 < bytes.len() {
        let pair = (bytes[i], bytes[i + 1]);
        if pair == (b'{', b'{') || pair == (b'{', b'|') {
            out.push_str(&text[copy_from..i]);
            let end = if pair.1 == b'|' {
                text[i..].find("\n|}").map(|p| i + p + 3).unwrap_or(text.len())
            } else {
                template_end(text, i, DEFAULT_MAX_NESTING).unwrap_or(text.len())
            };
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

/// Links into File:, Image:, Category: and similar namespaces.
pub fn is_namespaced(target: &str) -> bool {
    let lower = target.trim().to_ascii_lowercase();
    [
        "file:",
        "image:",
        "category:",
        "wikt:",
        "wiktionary:",
        ":category:",
        "help:",
    ]
    .iter()
    .any(|p| lower.starts_with(p))
}

/// Canonical article title: underscores to spaces, fragment removed,
/// whitespace collapsed, first letter upper-cased.
pub fn normalize_title(raw: &str) -> String {
    let no_fragment = raw.split('#').next().unwrap_or("");
    let collapsed = no_fragment
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let mut chars = collapsed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
