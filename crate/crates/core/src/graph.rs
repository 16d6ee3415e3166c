//! Dyad graph construction: per-conflict dyads, majority-label aggregation
//! and the restricted view used by systemic models.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{entity_id_for, InfoboxMilitaryConflict};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("entity {entity} appears in more than one belligerent of conflict {conflict}")]
    OverlappingBelligerents { entity: EntityId, conflict: String },
    #[error("conflict {conflict}: {reason}")]
    InvalidConflict { conflict: String, reason: String },
    #[error("duplicate conflict id {0}")]
    DuplicateConflict(String),
    #[error("no edge between {0} and {1}")]
    EdgeNotFound(String, String),
    #[error("edge {0} is hidden in this view")]
    HiddenEdge(usize),
    #[error("features of node {0} are masked in this view")]
    MaskedNode(usize),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "ALLIES")]
    Allies,
    #[serde(rename = "ENEMIES")]
    Enemies,
}

impl Label {
    /// +1 for allies, −1 for enemies.
    pub fn sign(self) -> f64 {
        match self {
            Label::Allies => 1.0,
            Label::Enemies => -1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Allies => Label::Enemies,
            Label::Enemies => Label::Allies,
        }
    }

    pub fn is_allies(self) -> bool {
        self == Label::Allies
    }
}

/// Unordered entity pair, stored with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub u: EntityId,
    pub v: EntityId,
}

impl Pair {
    pub fn new(a: EntityId, b: EntityId) -> Option<Pair> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Pair { u: a, v: b }),
            std::cmp::Ordering::Greater => Some(Pair { u: b, v: a }),
            std::cmp::Ordering::Equal => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub conflict_id: String,
    pub belligerents: Vec<BTreeSet<EntityId>>,
}

impl Conflict {
    pub fn from_infobox(record: &InfoboxMilitaryConflict) -> Conflict {
        Conflict {
            conflict_id: record.conflict_id.to_string(),
            belligerents: record
                .combatant_groups
                .iter()
                .map(|g| g.iter().map(|r| EntityId(entity_id_for(r))).collect())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let invalid = |reason: &str| GraphError::InvalidConflict {
            conflict: self.conflict_id.clone(),
            reason: reason.into(),
        };
        if self.belligerents.len() < 2 {
            return Err(invalid("fewer than two belligerents"));
        }
        if self.belligerents.iter().any(BTreeSet::is_empty) {
            return Err(invalid("empty belligerent"));
        }
        let mut seen = BTreeSet::new();
        for entity in self.belligerents.iter().flatten() {
            if !seen.insert(entity) {
                return Err(GraphError::OverlappingBelligerents {
                    entity: entity.clone(),
                    conflict: self.conflict_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Every unordered entity pair of the conflict exactly once; ENEMIES iff the
/// two entities sit in different belligerents.
pub fn dyads_from_conflict(c: &Conflict) -> Result<Vec<(Pair, Label)>, GraphError> {
    c.validate()?;
    let members: Vec<(usize, &EntityId)> = c
        .belligerents
        .iter()
        .enumerate()
        .flat_map(|(side, set)| set.iter().map(move |e| (side, e)))
        .collect();
    let mut out = Vec::with_capacity(members.len() * members.len().saturating_sub(1) / 2);
    for (i, (side_a, a)) in members.iter().enumerate() {
        for (side_b, b) in &members[i + 1..] {
            let label = if side_a == side_b {
                Label::Allies
            } else {
                Label::Enemies
            };
            let pair = Pair::new((*a).clone(), (*b).clone()).expect("disjoint belligerents");
            out.push((pair, label));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub label: Label,
    pub ally_count: u32,
    pub enemy_count: u32,
    pub conflict_ids: Vec<String>,
}

impl Edge {
    pub fn other(&self, node: usize) -> usize {
        if node == self.u {
            self.v
        } else {
            self.u
        }
    }
}

/// Aggregated signed graph. Nodes are indexed in sorted id order and edges
/// sorted by `(u, v)`, so indices are stable across input orderings.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadGraph {
    nodes: Vec<EntityId>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
    index: HashMap<EntityId, usize>,
}

/// Tallies per-conflict labels into one edge per pair. ALLIES requires
/// strictly more ally than enemy conflicts. A (pair, conflict) seen twice
/// counts once; if its labels disagree, ENEMIES wins.
pub fn aggregate(all_pairs: &[(Pair, Label, String)]) -> DyadGraph {
    let mut per_conflict: BTreeMap<(&Pair, &str), Label> = BTreeMap::new();
    for (pair, label, conflict) in all_pairs {
        per_conflict
            .entry((pair, conflict.as_str()))
            .and_modify(|l| *l = (*l).max(*label))
            .or_insert(*label);
    }
    let mut tallies: BTreeMap<&Pair, (u32, u32, Vec<String>)> = BTreeMap::new();
    for ((pair, conflict), label) in per_conflict {
        let t = tallies.entry(pair).or_default();
        match label {
            Label::Allies => t.0 += 1,
            Label::Enemies => t.1 += 1,
        }
        t.2.push(conflict.to_string());
    }
    let node_set: BTreeSet<&EntityId> = tallies.keys().flat_map(|p| [&p.u, &p.v]).collect();
    let nodes: Vec<EntityId> = node_set.into_iter().cloned().collect();
    let index: HashMap<EntityId, usize> = nodes.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
    let edges = tallies
        .into_iter()
        .map(|(pair, (ally_count, enemy_count, conflict_ids))| Edge {
            u: index[&pair.u],
            v: index[&pair.v],
            label: if ally_count > enemy_count {
                Label::Allies
            } else {
                Label::Enemies
            },
            ally_count,
            enemy_count,
            conflict_ids,
        })
        .collect();
    DyadGraph::assemble(nodes, edges)
}

/// Validates and aggregates a set of conflicts.
pub fn build_graph(conflicts: &[Conflict]) -> Result<DyadGraph, GraphError> {
    let mut ids = BTreeSet::new();
    let mut pairs = Vec::new();
    for c in conflicts {
        if !ids.insert(c.conflict_id.as_str()) {
            return Err(GraphError::DuplicateConflict(c.conflict_id.clone()));
        }
        pairs.extend(
            dyads_from_conflict(c)?
                .into_iter()
                .map(|(p, l)| (p, l, c.conflict_id.clone())),
        );
    }
    Ok(aggregate(&pairs))
}

impl DyadGraph {
    fn assemble(nodes: Vec<EntityId>, edges: Vec<Edge>) -> DyadGraph {
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            adjacency[e.u].push((e.v, i));
            adjacency[e.v].push((e.u, i));
        }
        let index = nodes.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        DyadGraph {
            nodes,
            edges,
            adjacency,
            index,
        }
    }

    /// Builds a graph from explicit labeled pairs, each counted as one
    /// conflict (used for synthetic graphs).
    pub fn from_labeled_edges(
        node_names: Vec<EntityId>,
        labeled: &[(usize, usize, Label)],
    ) -> Result<DyadGraph, GraphError> {
        let mut edges = Vec::with_capacity(labeled.len());
        for (k, &(a, b, label)) in labeled.iter().enumerate() {
            if a == b || a >= node_names.len() || b >= node_names.len() {
                return Err(GraphError::Invalid(format!("bad edge ({a}, {b})")));
            }
            let (ally_count, enemy_count) = if label.is_allies() { (1, 0) } else { (0, 1) };
            edges.push(Edge {
                u: a.min(b),
                v: a.max(b),
                label,
                ally_count,
                enemy_count,
                conflict_ids: vec![format!("synthetic-{k}")],
            });
        }
        Self::from_parts(node_names, edges)
    }

    fn from_parts(node_names: Vec<EntityId>, mut edges: Vec<Edge>) -> Result<DyadGraph, GraphError> {
        // Re-index nodes into sorted id order.
        let mut order: Vec<usize> = (0..node_names.len()).collect();
        order.sort_by(|&a, &b| node_names[a].cmp(&node_names[b]));
        let mut remap = vec![0; node_names.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let nodes: Vec<EntityId> = order.iter().map(|&i| node_names[i].clone()).collect();
        if nodes.windows(2).any(|w| w[0] == w[1]) {
            return Err(GraphError::Invalid("duplicate node id".into()));
        }
        for e in &mut edges {
            let (a, b) = (remap[e.u], remap[e.v]);
            e.u = a.min(b);
            e.v = a.max(b);
            if (e.ally_count > e.enemy_count) != e.label.is_allies() {
                return Err(GraphError::Invalid(format!("label of ({a}, {b}) contradicts tallies")));
            }
        }
        edges.sort_by_key(|e| (e.u, e.v));
        if edges.windows(2).any(|w| (w[0].u, w[0].v) == (w[1].u, w[1].v)) {
            return Err(GraphError::Invalid("duplicate edge".into()));
        }
        Ok(Self::assemble(nodes, edges))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[EntityId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &Edge {
        &self.edges[i]
    }

    pub fn node_index(&self, id: &EntityId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// `(neighbor, edge index)` pairs.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        let (u, v) = (a.min(b), a.max(b));
        self.edges.binary_search_by_key(&(u, v), |e| (e.u, e.v)).ok()
    }

    pub fn edge_for_pair(&self, pair: &Pair) -> Result<usize, GraphError> {
        let missing = || GraphError::EdgeNotFound(pair.u.0.clone(), pair.v.0.clone());
        let a = self.node_index(&pair.u).ok_or_else(missing)?;
        let b = self.node_index(&pair.v).ok_or_else(missing)?;
        self.find_edge(a, b).ok_or_else(missing)
    }

    /// Overrides an edge label, rewriting its tallies to stay consistent.
    pub fn set_label(&mut self, edge: usize, label: Label) {
        let e = &mut self.edges[edge];
        if e.label != label {
            let total = e.ally_count + e.enemy_count;
            (e.ally_count, e.enemy_count) = if label.is_allies() {
                (total.max(1), 0)
            } else {
                (0, total)
            };
            e.label = label;
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        self.edges.iter().map(|e| e.label).collect()
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    u: self.nodes[e.u].clone(),
                    v: self.nodes[e.v].clone(),
                    label: e.label,
                    ally_count: e.ally_count,
                    enemy_count: e.enemy_count,
                    conflict_ids: e.conflict_ids.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: GraphFile) -> Result<DyadGraph, GraphError> {
        let index: HashMap<&EntityId, usize> = file.nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
        let mut edges = Vec::with_capacity(file.edges.len());
        for r in &file.edges {
            let (Some(&u), Some(&v)) = (index.get(&r.u), index.get(&r.v)) else {
                return Err(GraphError::Invalid(format!(
                    "edge ({}, {}) references unknown node",
                    r.u, r.v
                )));
            };
            if u == v {
                return Err(GraphError::Invalid(format!("self-loop on {}", r.u)));
            }
            if (r.ally_count + r.enemy_count) as usize != r.conflict_ids.len() {
                return Err(GraphError::Invalid(format!(
                    "tallies of ({}, {}) disagree with provenance",
                    r.u, r.v
                )));
            }
            edges.push(Edge {
                u,
                v,
                label: r.label,
                ally_count: r.ally_count,
                enemy_count: r.enemy_count,
                conflict_ids: r.conflict_ids.clone(),
            });
        }
        Self::from_parts(file.nodes, edges)
    }
}

/// On-disk `graph.json` layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<EntityId>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub u: EntityId,
    pub v: EntityId,
    pub label: Label,
    pub ally_count: u32,
    pub enemy_count: u32,
    pub conflict_ids: Vec<String>,
}

/// The graph minus one dyad: the target edge and both endpoints' own
/// features are unreadable, everything else is exposed. An optional
/// observation mask further hides edges whose labels are unknown (e.g.
/// validation and test edges during transductive training).
#[derive(Debug, Clone, Copy)]
pub struct RestrictedView<'g> {
    base: &'g DyadGraph,
    excluded_edge: usize,
    masked: [usize; 2],
    observed: Option<&'g [bool]>,
}

pub fn restricted_view<'g>(g: &'g DyadGraph, target: &Pair) -> Result<RestrictedView<'g>, GraphError> {
    Ok(RestrictedView::for_edge(g, g.edge_for_pair(target)?))
}

impl<'g> RestrictedView<'g> {
    pub fn for_edge(base: &'g DyadGraph, edge: usize) -> Self {
        let e = &base.edges[edge];
        RestrictedView {
            base,
            excluded_edge: edge,
            masked: [e.u, e.v],
            observed: None,
        }
    }

    /// Restricts visible edges to those with `observed[edge] == true`.
    pub fn with_observed(mut self, observed: &'g [bool]) -> Self {
        self.observed = Some(observed);
        self
    }

    pub fn base(&self) -> &'g DyadGraph {
        self.base
    }

    pub fn excluded_edge(&self) -> usize {
        self.excluded_edge
    }

    pub fn masked_nodes(&self) -> [usize; 2] {
        self.masked
    }

    pub fn is_masked(&self, node: usize) -> bool {
        self.masked.contains(&node)
    }

    pub fn edge_visible(&self, edge: usize) -> bool {
        edge != self.excluded_edge && self.observed.is_none_or(|o| o[edge])
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.base.adjacency[node]
            .iter()
            .copied()
            .filter(move |&(_, e)| self.edge_visible(e))
    }

    pub fn visible_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.base.edges.len()).filter(move |&e| self.edge_visible(e))
    }

    pub fn label(&self, edge: usize) -> Result<Label, GraphError> {
        if self.edge_visible(edge) {
            Ok(self.base.edges[edge].label)
        } else {
            Err(GraphError::HiddenEdge(edge))
        }
    }

    pub fn node_features<'f>(&self, node: usize, features: &'f crate::tensor::Matrix) -> Result<&'f [f64], GraphError> {
        if self.is_masked(node) {
            Err(GraphError::MaskedNode(node))
        } else {
            Ok(features.row(node))
        }
    }

    pub fn edge_features<'f>(&self, edge: usize, features: &'f crate::tensor::Matrix) -> Result<&'f [f64], GraphError> {
        if edge == self.excluded_edge {
            Err(GraphError::HiddenEdge(edge))
        } else {
            Ok(features.row(edge))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub ally_fraction: f64,
    pub degree_histogram: BTreeMap<usize, usize>,
}

pub fn graph_stats(g: &DyadGraph) -> GraphStats {
    let allies = g.edges.iter().filter(|e| e.label.is_allies()).count();
    let mut degree_histogram = BTreeMap::new();
    for adj in &g.adjacency {
        *degree_histogram.entry(adj.len()).or_insert(0) += 1;
    }
    GraphStats {
        node_count: g.node_count(),
        edge_count: g.edge_count(),
        ally_fraction: if g.edges.is_empty() {
            0.0
        } else {
            allies as f64 / g.edges.len() as f64
        },
        degree_histogram,
    }
}
