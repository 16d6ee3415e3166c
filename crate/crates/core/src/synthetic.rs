//! Seeded synthetic data: random small instances, the planted
//! structural-balance and content benchmarks, and a miniature wikitext
//! corpus.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{DyadGraph, EntityId, Label};
use crate::ingest::{slug_for_title, IndexEntry};
use crate::tensor::Matrix;

/// A graph with node and edge feature rows aligned to its index order.
#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub graph: DyadGraph,
    pub node_x: Matrix,
    pub edge_x: Matrix,
    /// Planted faction per node (empty for unstructured instances).
    pub factions: Vec<usize>,
}

fn node_names(n: usize) -> Vec<EntityId> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| EntityId(format!("n{i:0width$}"))).collect()
}

/// `edges` distinct random pairs with random labels and uniform(-1, 1)
/// features.
pub fn random_instance(seed: u64, nodes: usize, edges: usize, node_dim: usize, edge_dim: usize) -> SyntheticGraph {
    assert!(edges <= nodes * (nodes - 1) / 2, "too many edges");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = BTreeSet::new();
    while pairs.len() < edges {
        let a = rng.gen_range(0..nodes);
        let b = rng.gen_range(0..nodes);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let labeled: Vec<(usize, usize, Label)> = pairs
        .into_iter()
        .map(|(a, b)| {
            (
                a,
                b,
                if rng.gen_bool(0.5) {
                    Label::Allies
                } else {
                    Label::Enemies
                },
            )
        })
        .collect();
    let graph = DyadGraph::from_labeled_edges(node_names(nodes), &labeled).expect("valid random graph");
    let node_x = Matrix::from_fn(nodes, node_dim, |_, _| rng.gen_range(-1.0..1.0));
    let edge_x = Matrix::from_fn(edges, edge_dim, |_, _| rng.gen_range(-1.0..1.0));
    SyntheticGraph {
        graph,
        node_x,
        edge_x,
        factions: Vec::new(),
    }
}

/// Two factions, allies within and enemies across, with label noise.
/// Node and edge features are drawn from a small pool of prototypes
/// independently of faction and label, so they carry no signal and cannot
/// identify individual nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructuralConfig {
    pub nodes: usize,
    pub majority_faction: usize,
    pub edge_prob: f64,
    pub label_noise: f64,
    pub feature_dim: usize,
    pub prototypes: usize,
    pub seed: u64,
}

impl Default for StructuralConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            majority_faction: 160,
            edge_prob: 0.15,
            label_noise: 0.05,
            feature_dim: 8,
            prototypes: 3,
            seed: 0,
        }
    }
}

fn prototype_pool(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect()
}

fn rows_from_pool(rng: &mut ChaCha8Rng, pool: &[Vec<f64>], n: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(n, dim);
    for i in 0..n {
        m.row_mut(i).copy_from_slice(&pool[rng.gen_range(0..pool.len())]);
    }
    m
}

pub fn structural_benchmark(cfg: &StructuralConfig) -> SyntheticGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let factions: Vec<usize> = (0..cfg.nodes).map(|i| usize::from(i >= cfg.majority_faction)).collect();
    let mut labeled = Vec::new();
    for a in 0..cfg.nodes {
        for b in a + 1..cfg.nodes {
            if !rng.gen_bool(cfg.edge_prob) {
                continue;
            }
            let mut label = if factions[a] == factions[b] {
                Label::Allies
            } else {
                Label::Enemies
            };
            if rng.gen_bool(cfg.label_noise) {
                label = label.flipped();
            }
            labeled.push((a, b, label));
        }
    }
    let graph = DyadGraph::from_labeled_edges(node_names(cfg.nodes), &labeled).expect("valid planted graph");
    let pool = prototype_pool(&mut rng, cfg.prototypes, cfg.feature_dim);
    let node_x = rows_from_pool(&mut rng, &pool, cfg.nodes, cfg.feature_dim);
    let edge_x = rows_from_pool(&mut rng, &pool, graph.edge_count(), cfg.feature_dim);
    SyntheticGraph {
        graph,
        node_x,
        edge_x,
        factions,
    }
}

/// Two equal factions whose node features are a faction prototype plus
/// Gaussian noise. Edge densities are set so both factions have the same
/// expected ally and enemy degree, and the graph is sparse, so signed
/// neighborhoods say nothing about a hidden label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContentConfig {
    pub nodes: usize,
    pub mean_degree: f64,
    pub ally_fraction: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub prototypes: usize,
    pub seed: u64,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            nodes: 600,
            mean_degree: 6.0,
            ally_fraction: 0.6,
            feature_dim: 8,
            feature_noise: 0.15,
            prototypes: 3,
            seed: 0,
        }
    }
}

pub fn content_benchmark(cfg: &ContentConfig) -> SyntheticGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.nodes / 2;
    let factions: Vec<usize> = (0..cfg.nodes).map(|i| usize::from(i >= half)).collect();
    let p_in = cfg.ally_fraction * cfg.mean_degree / (half - 1) as f64;
    let p_out = (1.0 - cfg.ally_fraction) * cfg.mean_degree / (cfg.nodes - half) as f64;
    let mut labeled = Vec::new();
    for a in 0..cfg.nodes {
        for b in a + 1..cfg.nodes {
            let same = factions[a] == factions[b];
            if rng.gen_bool(if same { p_in } else { p_out }) {
                labeled.push((a, b, if same { Label::Allies } else { Label::Enemies }));
            }
        }
    }
    let graph = DyadGraph::from_labeled_edges(node_names(cfg.nodes), &labeled).expect("valid planted graph");
    let direction: Vec<f64> = {
        let raw: Vec<f64> = (0..cfg.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.into_iter().map(|x| x / norm).collect()
    };
    let noise = Normal::new(0.0, cfg.feature_noise).expect("finite sd");
    let mut node_x = Matrix::zeros(cfg.nodes, cfg.feature_dim);
    for (i, &faction) in factions.iter().enumerate() {
        let sign = if faction == 0 { 1.0 } else { -1.0 };
        for (j, x) in node_x.row_mut(i).iter_mut().enumerate() {
            *x = sign * direction[j] + noise.sample(&mut rng);
        }
    }
    let pool = prototype_pool(&mut rng, cfg.prototypes, cfg.feature_dim);
    let edge_x = rows_from_pool(&mut rng, &pool, graph.edge_count(), cfg.feature_dim);
    SyntheticGraph {
        graph,
        node_x,
        edge_x,
        factions,
    }
}

const CONFLICT_WORDS: &[&str] = &[
    "siege",
    "offensive",
    "ceasefire",
    "insurgency",
    "garrison",
    "artillery",
    "ambush",
    "convoy",
    "casualty",
    "refugee",
    "treaty",
    "blockade",
    "uprising",
    "skirmish",
    "fortress",
    "hostage",
    "airstrike",
    "battalion",
    "trench",
    "occupation",
];

const ENTITY_WORDS: &[&str] = &[
    "economy",
    "parliament",
    "constitution",
    "agriculture",
    "literature",
    "currency",
    "railway",
    "monarchy",
    "tourism",
    "cuisine",
    "election",
    "university",
    "census",
    "mineral",
    "harbor",
    "festival",
    "architecture",
    "climate",
    "industry",
    "dialect",
];

fn paragraph(rng: &mut ChaCha8Rng, focus: &[&str], len: usize) -> String {
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let w = focus[rng.gen_range(0..focus.len())];
        out.push(if i % 7 == 6 { format!("{w}.") } else { w.to_string() });
    }
    let mut s = out.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

/// Writes a corpus directory of `conflicts` conflict articles (each with an
/// infobox of two or three belligerents drawn from a pool of entities),
/// the entity articles, a redirect and `index.json`. Returns the index.
pub fn write_fixture_corpus(dir: &Path, conflicts: usize, seed: u64) -> std::io::Result<Vec<IndexEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entity_count = (conflicts * 2).max(6);
    let entities: Vec<String> = (0..entity_count).map(|i| format!("Entity {i}")).collect();
    let mut index = Vec::new();
    let mut page_id = 1000u64;
    let write = |title: &str, text: &str, index: &mut Vec<IndexEntry>, page_id: &mut u64| -> std::io::Result<()> {
        std::fs::write(dir.join(format!("{}.wiki", slug_for_title(title))), text)?;
        index.push(IndexEntry {
            title: title.to_string(),
            page_id: *page_id,
            is_redirect: false,
            redirect_target: None,
        });
        *page_id += 1;
        Ok(())
    };

    for c in 0..conflicts {
        let mut pool = entities.clone();
        pool.shuffle(&mut rng);
        let sides = if c % 3 == 0 { 3 } else { 2 };
        let mut cursor = 0;
        let mut cells = Vec::new();
        for s in 0..sides {
            let take = rng.gen_range(1..=2);
            let members: Vec<String> = pool[cursor..cursor + take]
                .iter()
                .map(|e| {
                    // Refer to the first entity through its redirect.
                    if e == "Entity 0" {
                        "[[Entity Zero]]".to_string()
                    } else {
                        format!("{{{{flagicon|X}}}} [[{e}]]")
                    }
                })
                .collect();
            cursor += take;
            cells.push(format!("| combatant{} = {}", s + 1, members.join("<br />")));
        }
        let focus: Vec<&str> = CONFLICT_WORDS.choose_multiple(&mut rng, 3).copied().collect();
        let text = format!(
            "{{{{Infobox military conflict\n| conflict = Conflict {c}\n| date = {}\n| place = [[Region {c}]]\n{}\n| result = Ceasefire\n}}}}\n{}\n\n== Background ==\n{}\n\n== Course ==\n{}\n\n== References ==\n{{{{reflist}}}}\n",
            1900 + c,
            cells.join("\n"),
            paragraph(&mut rng, &focus, 30),
            paragraph(&mut rng, &focus, 40),
            paragraph(&mut rng, &focus, 40),
        );
        write(&format!("Conflict {c}"), &text, &mut index, &mut page_id)?;
    }
    for e in &entities {
        let focus: Vec<&str> = ENTITY_WORDS.choose_multiple(&mut rng, 3).copied().collect();
        let text = format!(
            "{}\n\n== History ==\n{}\n\n== Economy ==\n{}\n\n== See also ==\n* [[Other]]\n",
            paragraph(&mut rng, &focus, 30),
            paragraph(&mut rng, &focus, 40),
            paragraph(&mut rng, &focus, 30),
        );
        write(e, &text, &mut index, &mut page_id)?;
    }
    index.push(IndexEntry {
        title: "Entity Zero".into(),
        page_id,
        is_redirect: true,
        redirect_target: Some("Entity 0".into()),
    });
    let json = serde_json::to_string_pretty(&index).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("index.json"), json)?;
    Ok(index)
}
