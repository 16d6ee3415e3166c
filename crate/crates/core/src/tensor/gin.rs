use super::{Matrix, Mlp, TensorError};

/// Undirected graph whose edges carry weight +1 or -1.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedAdjacency {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl SignedAdjacency {
    /// Builds from `(u, v, w)` triples; each edge is stored in both
    /// directions.
    pub fn new(node_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self, TensorError> {
        let mut neighbors = vec![Vec::new(); node_count];
        for &(u, v, w) in edges {
            if u >= node_count || v >= node_count {
                return Err(TensorError::Adjacency(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(TensorError::Adjacency(format!("self-loop at {u}")));
            }
            if w != 1.0 && w != -1.0 {
                return Err(TensorError::Adjacency(format!("weight {w} is not +1 or -1")));
            }
            if neighbors[u].iter().any(|&(x, _)| x == v) {
                return Err(TensorError::Adjacency(format!("duplicate edge ({u}, {v})")));
            }
            neighbors[u].push((v, w));
            neighbors[v].push((u, w));
        }
        Ok(Self { neighbors })
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.neighbors[v]
    }

    /// Dense `(1 + eps)·I + W`.
    pub fn dense(&self, eps: f64) -> Matrix {
        let n = self.node_count();
        let mut m = Matrix::zeros(n, n);
        for v in 0..n {
            m.set(v, v, 1.0 + eps);
            for &(u, w) in &self.neighbors[v] {
                m.set(v, u, m.get(v, u) + w);
            }
        }
        m
    }
}

/// `(1 + eps)·h_v + Σ_u w_uv·h_u` for every node.
pub fn signed_aggregate(adj: &SignedAdjacency, h: &Matrix, eps: f64) -> Result<Matrix, TensorError> {
    if h.rows() != adj.node_count() {
        return Err(TensorError::Shape(format!(
            "{} embedding rows for {} nodes",
            h.rows(),
            adj.node_count()
        )));
    }
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for v in 0..h.rows() {
        let row = out.row_mut(v);
        for (o, x) in row.iter_mut().zip(h.row(v)) {
            *o = (1.0 + eps) * x;
        }
        for &(u, w) in adj.neighbors(v) {
            for (o, x) in row.iter_mut().zip(h.row(u)) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

pub fn gin_layer(adj: &SignedAdjacency, h: &Matrix, update: &Mlp, eps: f64) -> Result<Matrix, TensorError> {
    update.forward(&signed_aggregate(adj, h, eps)?)
}
