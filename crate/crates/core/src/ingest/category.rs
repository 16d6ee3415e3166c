use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    #[serde(default)]
    pub subcategories: Vec<String>,
    #[serde(default)]
    pub articles: Vec<String>,
}

pub type CategoryIndex = BTreeMap<String, CategoryEntry>;

/// Breadth-first walk collecting article members of `root` and of every
/// subcategory reachable within `max_depth` steps. Each category is
/// expanded at most once, so cycles in the index are harmless.
pub fn harvest_category_tree(
    index: &CategoryIndex,
    root: &str,
    max_depth: usize,
) -> Result<BTreeSet<String>, IngestError> {
    if !index.contains_key(root) {
        return Err(IngestError::CategoryNotFound(root.to_string()));
    }
    let mut articles = BTreeSet::new();
    let mut visited = BTreeSet::from([root.to_string()]);
    let mut queue = VecDeque::from([(root.to_string(), 0usize)]);
    while let Some((category, depth)) = queue.pop_front() {
        let Some(entry) = index.get(&category) else {
            continue;
        };
        articles.extend(entry.articles.iter().cloned());
        if depth == max_depth {
            continue;
        }
        for sub in &entry.subcategories {
            if visited.insert(sub.clone()) {
                queue.push_back((sub.clone(), depth + 1));
            }
        }
    }
    Ok(articles)
}
