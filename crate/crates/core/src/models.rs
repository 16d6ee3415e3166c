//! The dyadic, systemic and combined classifiers, their ablations, and the
//! majority baseline.
//!
//! Every variant produces, for a target edge `t = (u, v)`, a representation
//! `r_x` at each endpoint, maps both through the classifier MLP and scores
//! `σ(z_u · z_v)`. Representations are means over a list of components:
//!
//! | variant | components of `r_x` |
//! |---------|---------------------|
//! | D       | `enc_n(x)`, `enc_e(t)` |
//! | D1      | `enc_n(x)` |
//! | S, S2–S4| `h^K_x`, plus `enc_e(e)` for visible edges at `x` when neighbor edges are used |
//! | C       | `enc_n(x)`, `enc_e(t)`, `h^K_x` if `x` has a visible edge, `enc_e(e)` for visible edges at `x` |
//!
//! `h^K` is the output of `K` signed GIN layers over the restricted view:
//! the target edge is removed and only observed (training) edges carry
//! messages. Systemic variants start masked endpoints from zero; other
//! nodes start from `enc_n` or, without neighbor node features, from the
//! unit-norm all-ones vector. Edge weights are the label sign, or +1 when
//! neighbor labels are masked.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DyadGraph, GraphError, Label, RestrictedView};
use crate::par::Execution;
use crate::tensor::{bce_with_logits, dot, sigmoid, Matrix, Mlp, MlpTape, NamedTensor, Parameters, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("missing feature vector for {kind} {name}")]
    MissingFeatures { kind: &'static str, name: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    D,
    S,
    C,
    #[serde(rename = "MAJ")]
    Maj,
    D1,
    S2,
    S3,
    S4,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::D,
        Variant::S,
        Variant::C,
        Variant::Maj,
        Variant::D1,
        Variant::S2,
        Variant::S3,
        Variant::S4,
    ];

    /// Variants with learnable parameters.
    pub const TRAINABLE: [Variant; 7] = [
        Variant::D,
        Variant::S,
        Variant::C,
        Variant::D1,
        Variant::S2,
        Variant::S3,
        Variant::S4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::D => "D",
            Variant::S => "S",
            Variant::C => "C",
            Variant::Maj => "MAJ",
            Variant::D1 => "D1",
            Variant::S2 => "S2",
            Variant::S3 => "S3",
            Variant::S4 => "S4",
        }
    }

    pub fn mask(self) -> FeatureMask {
        let m = |u, v, e, n, ne, l| FeatureMask {
            use_u: u,
            use_v: v,
            use_e: e,
            use_neighbor_nodes: n,
            use_neighbor_edges: ne,
            use_neighbor_labels: l,
        };
        match self {
            Variant::D => m(true, true, true, false, false, false),
            Variant::S => m(false, false, false, true, true, true),
            Variant::C => m(true, true, true, true, true, true),
            Variant::Maj => m(false, false, false, false, false, false),
            Variant::D1 => m(true, true, false, false, false, false),
            Variant::S2 => m(false, false, false, true, false, false),
            Variant::S3 => m(false, false, false, false, true, false),
            Variant::S4 => m(false, false, false, false, false, true),
        }
    }

    pub fn uses_gin(self) -> bool {
        matches!(self, Variant::S | Variant::S2 | Variant::S3 | Variant::S4 | Variant::C)
    }

    fn is_systemic(self) -> bool {
        matches!(self, Variant::S | Variant::S2 | Variant::S3 | Variant::S4)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

/// Which feature groups a variant may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub use_u: bool,
    pub use_v: bool,
    pub use_e: bool,
    pub use_neighbor_nodes: bool,
    pub use_neighbor_edges: bool,
    pub use_neighbor_labels: bool,
}

impl FeatureMask {
    pub fn needs_node_encoder(&self) -> bool {
        self.use_u || self.use_v || self.use_neighbor_nodes
    }

    pub fn needs_edge_encoder(&self) -> bool {
        self.use_e || self.use_neighbor_edges
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Layer sizes after the input; the last is the embedding width `d`.
    pub node_encoder_dims: Vec<usize>,
    pub edge_encoder_dims: Vec<usize>,
    pub classifier_dims: Vec<usize>,
    pub gin_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub learn_eps: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::D,
            node_encoder_dims: vec![64],
            edge_encoder_dims: vec![64],
            classifier_dims: vec![64],
            gin_steps: 2,
            seed: 0,
            learn_eps: false,
        }
    }
}

impl ModelConfig {
    pub fn embedding_dim(&self) -> usize {
        self.node_encoder_dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.variant == Variant::Maj {
            return Ok(());
        }
        for (name, dims) in [
            ("node_encoder_dims", &self.node_encoder_dims),
            ("classifier_dims", &self.classifier_dims),
        ] {
            if dims.is_empty() || dims.contains(&0) {
                return bad(format!("{name} must be non-empty and positive"));
            }
        }
        let mask = self.variant.mask();
        if mask.needs_edge_encoder() {
            if self.edge_encoder_dims.is_empty() || self.edge_encoder_dims.contains(&0) {
                return bad("edge_encoder_dims must be non-empty and positive".into());
            }
            if self.edge_encoder_dims.last() != self.node_encoder_dims.last() {
                return bad(format!(
                    "edge embeddings ({}) are averaged with node embeddings ({}) and need equal width",
                    self.edge_encoder_dims.last().unwrap(),
                    self.embedding_dim()
                ));
            }
        }
        if self.variant.uses_gin() && self.gin_steps == 0 {
            return bad(format!("{} needs gin_steps >= 1", self.variant));
        }
        Ok(())
    }
}

/// Checks a configuration against the available feature rows without
/// training, so a run can fail before any work is done.
pub fn preflight(config: &ModelConfig, inputs: &ModelInputs<'_>) -> Result<(), ModelError> {
    config.validate()?;
    if config.variant == Variant::Maj {
        return Ok(());
    }
    let params = ModelParams::init(config, inputs.node_x.cols(), inputs.edge_x.cols())?;
    inputs.validate(&params)
}

/// Always ALLIES.
pub fn predict_majority(_training: &[Label]) -> Label {
    Label::Allies
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub node_encoder: Option<Mlp>,
    pub edge_encoder: Option<Mlp>,
    pub classifier: Mlp,
    pub gin: Vec<Mlp>,
    pub eps: Vec<f64>,
    pub learn_eps: bool,
    dim: usize,
}

fn chain(input: usize, dims: &[usize]) -> Vec<usize> {
    std::iter::once(input).chain(dims.iter().copied()).collect()
}

impl ModelParams {
    /// Glorot-initialized parameters. Draw order: node encoder, edge
    /// encoder, classifier, GIN layers.
    pub fn init(config: &ModelConfig, node_in: usize, edge_in: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if config.variant == Variant::Maj {
            return Err(ModelError::Config("MAJ has no parameters".into()));
        }
        let mask = config.variant.mask();
        let d = config.embedding_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let node_encoder = mask
            .needs_node_encoder()
            .then(|| Mlp::init(&chain(node_in, &config.node_encoder_dims), &mut rng));
        let edge_encoder = mask
            .needs_edge_encoder()
            .then(|| Mlp::init(&chain(edge_in, &config.edge_encoder_dims), &mut rng));
        let classifier = Mlp::init(&chain(d, &config.classifier_dims), &mut rng);
        let steps = if config.variant.uses_gin() { config.gin_steps } else { 0 };
        let gin = (0..steps).map(|_| Mlp::init(&[d, d, d], &mut rng)).collect();
        Ok(Self {
            variant: config.variant,
            node_encoder,
            edge_encoder,
            classifier,
            gin,
            eps: vec![0.0; steps],
            learn_eps: config.learn_eps,
            dim: d,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn mask(&self) -> FeatureMask {
        self.variant.mask()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            variant: self.variant,
            node_encoder: self.node_encoder.as_ref().map(Mlp::zeros_like),
            edge_encoder: self.edge_encoder.as_ref().map(Mlp::zeros_like),
            classifier: self.classifier.zeros_like(),
            gin: self.gin.iter().map(Mlp::zeros_like).collect(),
            eps: vec![0.0; self.eps.len()],
            learn_eps: self.learn_eps,
            dim: self.dim,
        }
    }

    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        if let (Some(a), Some(b)) = (&mut self.node_encoder, &other.node_encoder) {
            a.add_scaled(b, scale);
        }
        if let (Some(a), Some(b)) = (&mut self.edge_encoder, &other.edge_encoder) {
            a.add_scaled(b, scale);
        }
        self.classifier.add_scaled(&other.classifier, scale);
        for (a, b) in self.gin.iter_mut().zip(&other.gin) {
            a.add_scaled(b, scale);
        }
        for (a, b) in self.eps.iter_mut().zip(&other.eps) {
            *a += scale * b;
        }
    }

    /// Overwrites parameters from checkpoint tensors with matching names
    /// and shapes.
    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<(), ModelError> {
        let by_name: BTreeMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let expected = self.named_tensors();
        if expected.len() != tensors.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                expected.len()
            )));
        }
        let mut sources = Vec::with_capacity(expected.len());
        for e in &expected {
            let t = by_name
                .get(e.name.as_str())
                .ok_or_else(|| ModelError::Config(format!("checkpoint lacks tensor {}", e.name)))?;
            if t.dims != e.dims {
                return Err(ModelError::Config(format!(
                    "tensor {} has dims {:?}, expected {:?}",
                    e.name, t.dims, e.dims
                )));
            }
            sources.push(t.data.clone());
        }
        for (dst, src) in self.tensors_mut().into_iter().zip(sources) {
            dst.copy_from_slice(&src);
        }
        Ok(())
    }
}

impl Parameters for ModelParams {
    fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        if let Some(m) = &self.node_encoder {
            out.extend(m.named_tensors_with_prefix("node_encoder"));
        }
        if let Some(m) = &self.edge_encoder {
            out.extend(m.named_tensors_with_prefix("edge_encoder"));
        }
        out.extend(self.classifier.named_tensors_with_prefix("classifier"));
        for (k, m) in self.gin.iter().enumerate() {
            out.extend(m.named_tensors_with_prefix(&format!("gin{k}")));
        }
        if self.learn_eps && !self.eps.is_empty() {
            out.push(NamedTensor {
                name: "gin_eps".into(),
                dims: vec![self.eps.len()],
                data: self.eps.clone(),
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(m) = &mut self.node_encoder {
            out.extend(m.tensors_mut());
        }
        if let Some(m) = &mut self.edge_encoder {
            out.extend(m.tensors_mut());
        }
        out.extend(self.classifier.tensors_mut());
        for m in &mut self.gin {
            out.extend(m.tensors_mut());
        }
        if self.learn_eps && !self.eps.is_empty() {
            out.push(self.eps.as_mut_slice());
        }
        out
    }
}

/// Sizes and settings recorded next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub variant: Variant,
    pub dims: ManifestDims,
    pub gin_steps: usize,
    pub seed: u64,
    pub checkpoint_path: Option<String>,
    pub feature_mask: FeatureMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestDims {
    pub node_encoder: Vec<usize>,
    pub edge_encoder: Vec<usize>,
    pub classifier: Vec<usize>,
}

impl ModelManifest {
    pub fn new(config: &ModelConfig, checkpoint_path: Option<String>) -> Self {
        Self {
            variant: config.variant,
            dims: ManifestDims {
                node_encoder: config.node_encoder_dims.clone(),
                edge_encoder: config.edge_encoder_dims.clone(),
                classifier: config.classifier_dims.clone(),
            },
            gin_steps: config.gin_steps,
            seed: config.seed,
            checkpoint_path,
            feature_mask: config.variant.mask(),
        }
    }
}

/// Graph, feature rows and the set of edges whose labels may be read.
#[derive(Debug, Clone, Copy)]
pub struct ModelInputs<'a> {
    pub graph: &'a DyadGraph,
    /// One row per node, in graph node order.
    pub node_x: &'a Matrix,
    /// One row per edge, in graph edge order.
    pub edge_x: &'a Matrix,
    /// Edges whose labels and messages are visible; `None` exposes all.
    pub observed: Option<&'a [bool]>,
}

impl ModelInputs<'_> {
    fn validate(&self, params: &ModelParams) -> Result<(), ModelError> {
        let g = self.graph;
        if let Some(enc) = &params.node_encoder {
            if self.node_x.rows() < g.node_count() {
                return Err(ModelError::MissingFeatures {
                    kind: "entity",
                    name: g.nodes()[self.node_x.rows()].to_string(),
                });
            }
            if self.node_x.cols() != enc.in_dim() {
                return Err(ModelError::Config(format!(
                    "node features have {} dims, encoder expects {}",
                    self.node_x.cols(),
                    enc.in_dim()
                )));
            }
        }
        if let Some(enc) = &params.edge_encoder {
            if self.edge_x.rows() < g.edge_count() {
                let e = g.edge(self.edge_x.rows());
                return Err(ModelError::MissingFeatures {
                    kind: "edge",
                    name: format!("{}--{}", g.nodes()[e.u], g.nodes()[e.v]),
                });
            }
            if self.edge_x.cols() != enc.in_dim() {
                return Err(ModelError::Config(format!(
                    "edge features have {} dims, encoder expects {}",
                    self.edge_x.cols(),
                    enc.in_dim()
                )));
            }
        }
        if let Some(obs) = self.observed {
            if obs.len() != g.edge_count() {
                return Err(ModelError::Config(format!(
                    "observation mask has {} entries for {} edges",
                    obs.len(),
                    g.edge_count()
                )));
            }
        }
        Ok(())
    }

    fn view(&self, edge: usize) -> RestrictedView<'_> {
        let view = RestrictedView::for_edge(self.graph, edge);
        match self.observed {
            Some(o) => view.with_observed(o),
            None => view,
        }
    }
}

/// Encoder activations shared by every target of a batch.
struct Encoded {
    node: Option<MlpTape>,
    edge: Option<MlpTape>,
}

impl Encoded {
    fn new(params: &ModelParams, inputs: &ModelInputs<'_>) -> Result<Self, ModelError> {
        Ok(Self {
            node: params
                .node_encoder
                .as_ref()
                .map(|m| m.forward_recorded(inputs.node_x))
                .transpose()?,
            edge: params
                .edge_encoder
                .as_ref()
                .map(|m| m.forward_recorded(inputs.edge_x))
                .transpose()?,
        })
    }

    fn node(&self, i: usize) -> &[f64] {
        self.node.as_ref().expect("node encoder present").output().row(i)
    }

    fn edge(&self, i: usize) -> &[f64] {
        self.edge.as_ref().expect("edge encoder present").output().row(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Component {
    Node(usize),
    Edge(usize),
    Hidden(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zero,
    Constant,
    Encoded(usize),
}

/// A row's own index and its weighted neighbors in the previous level.
type Link = (usize, Vec<(usize, f64)>);

struct GinTrace {
    /// `levels[k]`: sorted nodes whose layer-`k` state is needed.
    levels: Vec<Vec<usize>>,
    init: Vec<Init>,
    h0: Matrix,
    /// Per layer, per row: index of the node itself and of its weighted
    /// neighbors in the previous level.
    links: Vec<Vec<Link>>,
    tapes: Vec<MlpTape>,
}

impl GinTrace {
    fn state(&self, k: usize) -> &Matrix {
        if k == 0 {
            &self.h0
        } else {
            self.tapes[k - 1].output()
        }
    }
}

struct TargetTrace {
    gin: Option<GinTrace>,
    components: [Vec<Component>; 2],
    classifier: MlpTape,
    logit: f64,
}

fn position(level: &[usize], node: usize) -> usize {
    level.binary_search(&node).expect("node present in level")
}

fn run_gin(
    params: &ModelParams,
    view: &RestrictedView<'_>,
    enc: &Encoded,
    endpoints: [usize; 2],
) -> Result<GinTrace, ModelError> {
    let mask = params.mask();
    let k_max = params.gin.len();
    let d = params.dim;
    let mut levels = vec![Vec::new(); k_max + 1];
    let mut top = endpoints.to_vec();
    top.sort_unstable();
    levels[k_max] = top;
    for k in (0..k_max).rev() {
        let mut set: BTreeSet<usize> = levels[k + 1].iter().copied().collect();
        for &x in &levels[k + 1] {
            set.extend(view.neighbors(x).map(|(y, _)| y));
        }
        levels[k] = set.into_iter().collect();
    }

    let constant = 1.0 / (d as f64).sqrt();
    let mut h0 = Matrix::zeros(levels[0].len(), d);
    let mut init = Vec::with_capacity(levels[0].len());
    for (row, &x) in levels[0].iter().enumerate() {
        let source = if view.is_masked(x) {
            if params.variant == Variant::C {
                Init::Encoded(x)
            } else {
                Init::Zero
            }
        } else if mask.use_neighbor_nodes {
            Init::Encoded(x)
        } else {
            Init::Constant
        };
        match source {
            Init::Zero => {}
            Init::Constant => h0.row_mut(row).fill(constant),
            Init::Encoded(x) => h0.row_mut(row).copy_from_slice(enc.node(x)),
        }
        init.push(source);
    }

    let mut trace = GinTrace {
        levels,
        init,
        h0,
        links: Vec::with_capacity(k_max),
        tapes: Vec::with_capacity(k_max),
    };
    for k in 1..=k_max {
        let prev_level = &trace.levels[k - 1];
        let mut links = Vec::with_capacity(trace.levels[k].len());
        for &x in &trace.levels[k] {
            let mut nbrs = Vec::new();
            for (y, e) in view.neighbors(x) {
                let w = if mask.use_neighbor_labels {
                    view.label(e)?.sign()
                } else {
                    1.0
                };
                nbrs.push((position(prev_level, y), w));
            }
            links.push((position(prev_level, x), nbrs));
        }
        let prev = trace.state(k - 1);
        let scale = 1.0 + params.eps[k - 1];
        let mut agg = Matrix::zeros(links.len(), d);
        for (row, (own, nbrs)) in links.iter().enumerate() {
            let out = agg.row_mut(row);
            for (o, h) in out.iter_mut().zip(prev.row(*own)) {
                *o = scale * h;
            }
            for &(j, w) in nbrs {
                for (o, h) in out.iter_mut().zip(prev.row(j)) {
                    *o += w * h;
                }
            }
        }
        let tape = params.gin[k - 1].forward_recorded(&agg)?;
        trace.links.push(links);
        trace.tapes.push(tape);
    }
    Ok(trace)
}

fn components(
    params: &ModelParams,
    view: &RestrictedView<'_>,
    gin: Option<&GinTrace>,
    x: usize,
    target: usize,
) -> Vec<Component> {
    let mask = params.mask();
    let hidden = || {
        let g = gin.expect("gin trace for systemic variants");
        Component::Hidden(position(&g.levels[g.levels.len() - 1], x))
    };
    let mut out = Vec::new();
    match params.variant {
        Variant::D => out.extend([Component::Node(x), Component::Edge(target)]),
        Variant::D1 => out.push(Component::Node(x)),
        Variant::C => {
            out.extend([Component::Node(x), Component::Edge(target)]);
            if view.neighbors(x).next().is_some() {
                out.push(hidden());
            }
            out.extend(view.neighbors(x).map(|(_, e)| Component::Edge(e)));
        }
        v if v.is_systemic() => {
            out.push(hidden());
            if mask.use_neighbor_edges {
                out.extend(view.neighbors(x).map(|(_, e)| Component::Edge(e)));
            }
        }
        _ => unreachable!("majority baseline has no forward pass"),
    }
    out
}

fn mean_of(parts: &[Component], enc: &Encoded, gin: Option<&GinTrace>, d: usize) -> Vec<f64> {
    let mut sum = vec![0.0; d];
    for &c in parts {
        let row = match c {
            Component::Node(i) => enc.node(i),
            Component::Edge(i) => enc.edge(i),
            Component::Hidden(r) => {
                let g = gin.expect("gin trace");
                g.state(g.levels.len() - 1).row(r)
            }
        };
        for (s, x) in sum.iter_mut().zip(row) {
            *s += x;
        }
    }
    let n = parts.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    sum
}

fn forward_target(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    enc: &Encoded,
    endpoints: [usize; 2],
    target: usize,
) -> Result<TargetTrace, ModelError> {
    let edge = inputs.graph.edge(target);
    let [a, b] = endpoints;
    if !((a == edge.u && b == edge.v) || (a == edge.v && b == edge.u)) {
        return Err(ModelError::Contract(format!(
            "nodes ({a}, {b}) are not the ends of edge {target}"
        )));
    }
    let view = inputs.view(target);
    if view.edge_visible(target) {
        return Err(ModelError::Contract("target edge visible through view".into()));
    }
    let gin = if params.variant.uses_gin() {
        Some(run_gin(params, &view, enc, endpoints)?)
    } else {
        None
    };
    let comps = [
        components(params, &view, gin.as_ref(), a, target),
        components(params, &view, gin.as_ref(), b, target),
    ];
    let d = params.dim;
    let mut reps = Matrix::zeros(2, d);
    for (i, c) in comps.iter().enumerate() {
        reps.row_mut(i).copy_from_slice(&mean_of(c, enc, gin.as_ref(), d));
    }
    let classifier = params.classifier.forward_recorded(&reps)?;
    let z = classifier.output();
    let logit = dot(z.row(0), z.row(1))?;
    Ok(TargetTrace {
        gin,
        components: comps,
        classifier,
        logit,
    })
}

/// Gradient buffers of one chunk of targets.
struct Accumulator {
    grads: ModelParams,
    d_node: BTreeMap<usize, Vec<f64>>,
    d_edge: BTreeMap<usize, Vec<f64>>,
    loss: f64,
}

fn add_into(map: &mut BTreeMap<usize, Vec<f64>>, key: usize, values: &[f64], scale: f64) {
    let slot = map.entry(key).or_insert_with(|| vec![0.0; values.len()]);
    for (s, v) in slot.iter_mut().zip(values) {
        *s += scale * v;
    }
}

fn backward_target(params: &ModelParams, trace: &TargetTrace, d_logit: f64, acc: &mut Accumulator) {
    let z = trace.classifier.output();
    let mut dz = Matrix::zeros(2, z.cols());
    for j in 0..z.cols() {
        dz.set(0, j, d_logit * z.get(1, j));
        dz.set(1, j, d_logit * z.get(0, j));
    }
    let d_reps = params
        .classifier
        .backward(&trace.classifier, &dz, &mut acc.grads.classifier);

    let mut d_hidden = trace
        .gin
        .as_ref()
        .map(|g| Matrix::zeros(g.levels[g.levels.len() - 1].len(), params.dim));
    for (i, comps) in trace.components.iter().enumerate() {
        let share = 1.0 / comps.len() as f64;
        let dr = d_reps.row(i);
        for &c in comps {
            match c {
                Component::Node(x) => add_into(&mut acc.d_node, x, dr, share),
                Component::Edge(e) => add_into(&mut acc.d_edge, e, dr, share),
                Component::Hidden(r) => {
                    let row = d_hidden.as_mut().expect("gin trace").row_mut(r);
                    for (o, g) in row.iter_mut().zip(dr) {
                        *o += share * g;
                    }
                }
            }
        }
    }

    let (Some(gin), Some(mut dh)) = (trace.gin.as_ref(), d_hidden) else {
        return;
    };
    for k in (1..=params.gin.len()).rev() {
        let da = params.gin[k - 1].backward(&gin.tapes[k - 1], &dh, &mut acc.grads.gin[k - 1]);
        let prev = gin.state(k - 1);
        let scale = 1.0 + params.eps[k - 1];
        let mut d_prev = Matrix::zeros(prev.rows(), params.dim);
        for (row, (own, nbrs)) in gin.links[k - 1].iter().enumerate() {
            let g = da.row(row);
            if params.learn_eps {
                acc.grads.eps[k - 1] += dot(g, prev.row(*own)).expect("equal widths");
            }
            for (o, x) in d_prev.row_mut(*own).iter_mut().zip(g) {
                *o += scale * x;
            }
            for &(j, w) in nbrs {
                for (o, x) in d_prev.row_mut(j).iter_mut().zip(g) {
                    *o += w * x;
                }
            }
        }
        dh = d_prev;
    }
    for (row, init) in gin.init.iter().enumerate() {
        if let Init::Encoded(x) = *init {
            add_into(&mut acc.d_node, x, dh.row(row), 1.0);
        }
    }
}

/// Targets handled sequentially inside one parallel task. Fixed so that
/// reductions do not depend on the thread count.
const TARGET_CHUNK: usize = 8;

/// Mean cross-entropy over `batch` (edge index, gold label in {0, 1}) and
/// its exact gradient with respect to every parameter.
pub fn batch_gradient(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    batch: &[(usize, f64)],
    exec: Execution,
) -> Result<(f64, ModelParams), ModelError> {
    inputs.validate(params)?;
    let enc = Encoded::new(params, inputs)?;
    let n = batch.len() as f64;
    let chunks: Vec<&[(usize, f64)]> = batch.chunks(TARGET_CHUNK).collect();
    let partials = exec.map(&chunks, |chunk| -> Result<Accumulator, ModelError> {
        let mut acc = Accumulator {
            grads: params.zeros_like(),
            d_node: BTreeMap::new(),
            d_edge: BTreeMap::new(),
            loss: 0.0,
        };
        for &(t, y) in chunk.iter() {
            let e = inputs.graph.edge(t);
            let trace = forward_target(params, inputs, &enc, [e.u, e.v], t)?;
            let (loss, d_logit) = bce_with_logits(trace.logit, y);
            acc.loss += loss;
            backward_target(params, &trace, d_logit / n, &mut acc);
        }
        Ok(acc)
    });

    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let d = params.dim;
    let mut d_node = enc.node.as_ref().map(|t| Matrix::zeros(t.output().rows(), d));
    let mut d_edge = enc.edge.as_ref().map(|t| Matrix::zeros(t.output().rows(), d));
    for part in partials {
        let part = part?;
        loss += part.loss;
        grads.add_scaled(&part.grads, 1.0);
        for (dense, sparse) in [(&mut d_node, &part.d_node), (&mut d_edge, &part.d_edge)] {
            let Some(dense) = dense.as_mut() else { continue };
            for (&i, g) in sparse {
                for (o, x) in dense.row_mut(i).iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
    }
    if let (Some(m), Some(tape), Some(dy)) = (&params.node_encoder, &enc.node, &d_node) {
        m.backward(tape, dy, grads.node_encoder.as_mut().expect("same layout"));
    }
    if let (Some(m), Some(tape), Some(dy)) = (&params.edge_encoder, &enc.edge, &d_edge) {
        m.backward(tape, dy, grads.edge_encoder.as_mut().expect("same layout"));
    }
    Ok((loss / n, grads))
}

/// Mean cross-entropy over `batch` without gradients.
pub fn batch_loss(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    batch: &[(usize, f64)],
    exec: Execution,
) -> Result<f64, ModelError> {
    let targets: Vec<usize> = batch.iter().map(|b| b.0).collect();
    let logits = predict_logits(params, inputs, &targets, exec)?;
    let total: f64 = logits
        .iter()
        .zip(batch)
        .map(|(&l, &(_, y))| bce_with_logits(l, y).0)
        .sum();
    Ok(total / batch.len() as f64)
}

/// Logit of ALLIES for every target edge.
pub fn predict_logits(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    targets: &[usize],
    exec: Execution,
) -> Result<Vec<f64>, ModelError> {
    inputs.validate(params)?;
    let enc = Encoded::new(params, inputs)?;
    exec.map(targets, |&t| {
        let e = inputs.graph.edge(t);
        forward_target(params, inputs, &enc, [e.u, e.v], t).map(|tr| tr.logit)
    })
    .into_iter()
    .collect()
}

/// Probability of ALLIES for every target edge.
pub fn predict(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    targets: &[usize],
    exec: Execution,
) -> Result<Vec<f64>, ModelError> {
    Ok(predict_logits(params, inputs, targets, exec)?
        .into_iter()
        .map(sigmoid)
        .collect())
}

/// Probability for one target with its endpoints given in caller order.
pub fn forward_pair(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    a: usize,
    b: usize,
    target: usize,
) -> Result<f64, ModelError> {
    inputs.validate(params)?;
    let enc = Encoded::new(params, inputs)?;
    Ok(sigmoid(forward_target(params, inputs, &enc, [a, b], target)?.logit))
}

/// Layer-`gin_steps` embeddings of the target's endpoints, in sorted node
/// order.
pub fn endpoint_embeddings(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    target: usize,
) -> Result<Matrix, ModelError> {
    inputs.validate(params)?;
    if !params.variant.uses_gin() {
        return Err(ModelError::Config(format!("{} has no message passing", params.variant)));
    }
    let enc = Encoded::new(params, inputs)?;
    let e = inputs.graph.edge(target);
    let trace = run_gin(params, &inputs.view(target), &enc, [e.u, e.v])?;
    Ok(trace.state(params.gin.len()).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EntityId;
    use crate::tensor::Linear;

    fn names(n: usize) -> Vec<EntityId> {
        (0..n).map(|i| EntityId(format!("n{i}"))).collect()
    }

    fn identity_params(variant: Variant, d: usize) -> ModelParams {
        let mask = variant.mask();
        ModelParams {
            variant,
            node_encoder: mask.needs_node_encoder().then(|| Mlp::identity(d, 1)),
            edge_encoder: mask.needs_edge_encoder().then(|| Mlp::identity(d, 1)),
            classifier: Mlp::identity(d, 1),
            gin: if variant.uses_gin() {
                vec![Mlp::identity(d, 1); 2]
            } else {
                vec![]
            },
            eps: if variant.uses_gin() { vec![0.0; 2] } else { vec![] },
            learn_eps: false,
            dim: d,
        }
    }

    #[test]
    fn masks_follow_the_variant_table() {
        let rows: Vec<[bool; 6]> = Variant::ALL
            .iter()
            .map(|v| {
                let m = v.mask();
                [
                    m.use_u,
                    m.use_v,
                    m.use_e,
                    m.use_neighbor_nodes,
                    m.use_neighbor_edges,
                    m.use_neighbor_labels,
                ]
            })
            .collect();
        assert_eq!(rows[0], [true, true, true, false, false, false]);
        assert_eq!(rows[1], [false, false, false, true, true, true]);
        assert_eq!(rows[2], [true; 6]);
        assert_eq!(rows[3], [false; 6]);
        assert_eq!(rows[4], [true, true, false, false, false, false]);
        assert_eq!(rows[5], [false, false, false, true, false, false]);
        assert_eq!(rows[6], [false, false, false, false, true, false]);
        assert_eq!(rows[7], [false, false, false, false, false, true]);
        assert_eq!("maj".parse::<Variant>().unwrap(), Variant::Maj);
        assert!("X9".parse::<Variant>().is_err());
    }

    #[test]
    fn majority_is_constant() {
        assert_eq!(predict_majority(&[]), Label::Allies);
        assert_eq!(predict_majority(&[Label::Enemies; 5]), Label::Allies);
    }

    #[test]
    fn identical_entities_score_above_half() {
        let g = DyadGraph::from_labeled_edges(names(2), &[(0, 1, Label::Enemies)]).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, 0.4], vec![0.3, 0.4]]).unwrap();
        let e = Matrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let inputs = ModelInputs {
            graph: &g,
            node_x: &x,
            edge_x: &e,
            observed: None,
        };
        let p = predict(&identity_params(Variant::D, 2), &inputs, &[0], Execution::Sequential).unwrap()[0];
        // r = ((0.3+0.1)/2, (0.4+0.2)/2) = (0.2, 0.3); z·z = 0.13
        assert_eq!(p, sigmoid(0.2 * 0.2 + 0.3 * 0.3));
        assert!(p > 0.5);
    }

    #[test]
    fn hand_traced_dyadic_probability() {
        let g = DyadGraph::from_labeled_edges(names(2), &[(0, 1, Label::Allies)]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let e = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let mut params = identity_params(Variant::D, 2);
        // classifier: z = ReLU-free linear map [[1, 0], [1, 1]] + (0, -1)
        params.classifier = Mlp {
            layers: vec![Linear {
                weight: Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap(),
                bias: vec![0.0, -1.0],
            }],
        };
        let inputs = ModelInputs {
            graph: &g,
            node_x: &x,
            edge_x: &e,
            observed: None,
        };
        // r_u = (1, 0.5) -> z_u = (1.5, -0.5); r_v = (0.5, 1.5) -> z_v = (2, 0.5)
        // logit = 3 - 0.25 = 2.75
        let p = predict(&params, &inputs, &[0], Execution::Sequential).unwrap()[0];
        assert!((p - 1.0 / (1.0 + (-2.75f64).exp())).abs() < 1e-15);
        let zero_e = Matrix::zeros(1, 2);
        let d1 = identity_params(Variant::D1, 2);
        let with_e = predict(&d1, &inputs, &[0], Execution::Sequential).unwrap();
        let without = predict(
            &d1,
            &ModelInputs {
                edge_x: &zero_e,
                ..inputs
            },
            &[0],
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(with_e, without);
        let mut d = identity_params(Variant::D, 2);
        d.classifier = params.classifier.clone();
        let mut d1c = d1.clone();
        d1c.classifier = params.classifier.clone();
        // D and D1 differ with a nonzero edge vector, agree with a zero one.
        let pd = predict(&d, &inputs, &[0], Execution::Sequential).unwrap();
        let pd1 = predict(&d1c, &inputs, &[0], Execution::Sequential).unwrap();
        assert_ne!(pd, pd1);
    }

    #[test]
    fn single_edge_zero_classifier_is_half() {
        let g = DyadGraph::from_labeled_edges(names(2), &[(0, 1, Label::Allies)]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let e = Matrix::from_rows(&[vec![1.0]]).unwrap();
        for v in [Variant::S, Variant::S2, Variant::S3, Variant::S4] {
            let cfg = ModelConfig {
                variant: v,
                node_encoder_dims: vec![3],
                edge_encoder_dims: vec![3],
                classifier_dims: vec![4, 3],
                ..Default::default()
            };
            let mut params = ModelParams::init(&cfg, 1, 1).unwrap();
            params.classifier = params.classifier.zeros_like();
            let inputs = ModelInputs {
                graph: &g,
                node_x: &x,
                edge_x: &e,
                observed: None,
            };
            assert_eq!(
                predict(&params, &inputs, &[0], Execution::Sequential).unwrap(),
                vec![0.5]
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig {
            variant: Variant::S3,
            edge_encoder_dims: vec![8],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.variant = Variant::S2;
        assert!(cfg.validate().is_ok());
        cfg.variant = Variant::S;
        cfg.edge_encoder_dims = vec![64];
        cfg.gin_steps = 0;
        assert!(cfg.validate().is_err());
        assert!(ModelParams::init(
            &ModelConfig {
                variant: Variant::Maj,
                ..Default::default()
            },
            3,
            3
        )
        .is_err());
    }

    #[test]
    fn missing_features_name_the_entity() {
        let g = DyadGraph::from_labeled_edges(names(3), &[(0, 1, Label::Allies), (1, 2, Label::Enemies)]).unwrap();
        let x = Matrix::zeros(2, 2);
        let e = Matrix::zeros(2, 2);
        let params = identity_params(Variant::D, 2);
        let inputs = ModelInputs {
            graph: &g,
            node_x: &x,
            edge_x: &e,
            observed: None,
        };
        let err = predict(&params, &inputs, &[0], Execution::Sequential).unwrap_err();
        assert_eq!(
            err,
            ModelError::MissingFeatures {
                kind: "entity",
                name: "n2".into()
            }
        );
    }
}
