//! Communication graph and the matrices derived from it.
//!
//! Weights follow the in-edge convention: `weight(i, j) = a_ij` is the
//! weight of the edge *from* `j` *to* `i`, i.e. how strongly agent `i`
//! listens to agent `j`. Node indices are zero-based throughout the
//! library; only the config format uses one-based ids.

use std::collections::VecDeque;

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("node index {index} out of range for {n} nodes")]
    OutOfRange { index: usize, n: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("edge weight {weight} from {from} to {to} must be finite and nonnegative")]
    BadWeight { from: usize, to: usize, weight: f64 },
    #[error("duplicate edge from {from} to {to}")]
    DuplicateEdge { from: usize, to: usize },
    #[error("weight matrix has {got} entries, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("root set must be nonempty")]
    EmptyRoots,
    #[error("degree bound {bound} at node {node} is below its in-degree {degree}")]
    BoundTooSmall { node: usize, bound: f64, degree: f64 },
    #[error("expected {expected} degree bounds, got {got}")]
    BoundCount { got: usize, expected: usize },
}

/// Weighted directed graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    weights: Vec<f64>,
}

impl Graph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Ok(Self {
            n,
            weights: vec![0.0; n * n],
        })
    }

    /// Builds a graph from `(from, to, weight)` triples.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut g = Self::empty(n)?;
        for &(from, to, weight) in edges {
            for index in [from, to] {
                if index >= n {
                    return Err(GraphError::OutOfRange { index, n });
                }
            }
            if from == to {
                return Err(GraphError::SelfLoop(from));
            }
            if !weight.is_finite() || weight < 0.0 {
                return Err(GraphError::BadWeight { from, to, weight });
            }
            let slot = &mut g.weights[to * n + from];
            if *slot != 0.0 {
                return Err(GraphError::DuplicateEdge { from, to });
            }
            *slot = weight;
        }
        Ok(g)
    }

    /// Builds a graph from a row-major adjacency matrix `[a_ij]`.
    pub fn from_adjacency(n: usize, weights: Vec<f64>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if weights.len() != n * n {
            return Err(GraphError::Shape {
                got: weights.len(),
                expected: n * n,
            });
        }
        for i in 0..n {
            for j in 0..n {
                let weight = weights[i * n + j];
                if !weight.is_finite() || weight < 0.0 {
                    return Err(GraphError::BadWeight {
                        from: j,
                        to: i,
                        weight,
                    });
                }
                if i == j && weight != 0.0 {
                    return Err(GraphError::SelfLoop(i));
                }
            }
        }
        Ok(Self { n, weights })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// `a_ij`: weight of the edge from `j` to `i`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// In-neighbours of `i` with their weights.
    pub fn in_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights[i * self.n..(i + 1) * self.n]
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(j, w)| (j, *w))
    }

    pub fn adjacency(&self) -> Matrix {
        Matrix::from_row_slice(self.n, self.n, &self.weights)
    }
}

/// Agents that observe their own output relative to the reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootSet {
    n: usize,
    members: Vec<usize>,
}

impl RootSet {
    pub fn new(n: usize, members: impl IntoIterator<Item = usize>) -> Result<Self, GraphError> {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(GraphError::EmptyRoots);
        }
        if let Some(&index) = members.iter().find(|&&m| m >= n) {
            return Err(GraphError::OutOfRange { index, n });
        }
        Ok(Self { n, members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// `ι_i`
    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn indicator(&self, i: usize) -> f64 {
        if self.contains(i) {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-node upper bounds `D̄_in(i) ≥ d_in(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeBounds {
    dbar_in: Vec<f64>,
}

impl DegreeBounds {
    /// Bounds equal to the actual in-degrees.
    pub fn tight(g: &Graph) -> Self {
        Self {
            dbar_in: in_degrees(g),
        }
    }

    pub fn new(g: &Graph, dbar_in: Vec<f64>) -> Result<Self, GraphError> {
        if dbar_in.len() != g.n_nodes() {
            return Err(GraphError::BoundCount {
                got: dbar_in.len(),
                expected: g.n_nodes(),
            });
        }
        for (node, (&bound, degree)) in dbar_in.iter().zip(in_degrees(g)).enumerate() {
            if !bound.is_finite() || bound < degree {
                return Err(GraphError::BoundTooSmall {
                    node,
                    bound,
                    degree,
                });
            }
        }
        Ok(Self { dbar_in })
    }

    pub fn get(&self, i: usize) -> f64 {
        self.dbar_in[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.dbar_in
    }

    /// `1 / (2 + D̄_in(i))`
    pub fn normalizer(&self, i: usize) -> f64 {
        1.0 / (2.0 + self.dbar_in[i])
    }
}

/// `d_in(i) = Σ_j a_ij`
pub fn in_degrees(g: &Graph) -> Vec<f64> {
    (0..g.n_nodes())
        .map(|i| (0..g.n_nodes()).map(|j| g.weight(i, j)).sum())
        .collect()
}

pub fn build_laplacian(g: &Graph) -> Matrix {
    let n = g.n_nodes();
    let degrees = in_degrees(g);
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            degrees[i]
        } else {
            -g.weight(i, j)
        }
    })
}

/// `L̄ = L + diag(ι)`
pub fn expand_laplacian(laplacian: &Matrix, roots: &RootSet) -> Matrix {
    let mut lbar = laplacian.clone();
    for &r in roots.members() {
        lbar[(r, r)] += 1.0;
    }
    lbar
}

/// `D̄ = I − diag(1/(2 + D̄_in(i))) L̄`
pub fn build_dbar(lbar: &Matrix, bounds: &DegreeBounds) -> Matrix {
    let n = lbar.nrows();
    Matrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - bounds.normalizer(i) * lbar[(i, j)]
    })
}

/// Whether every node is reachable along directed edges from some root.
pub fn in_graph_set(g: &Graph, roots: &RootSet) -> bool {
    let n = g.n_nodes();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = roots.members().iter().copied().collect();
    for &r in roots.members() {
        seen[r] = true;
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !seen[i] && g.weight(i, j) > 0.0 {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// `L`, `L̄` and `D̄` for one graph, root set and choice of bounds.
#[derive(Debug, Clone)]
pub struct NetworkMatrices {
    pub laplacian: Matrix,
    pub expanded_laplacian: Matrix,
    pub dbar: Matrix,
}

impl NetworkMatrices {
    pub fn new(g: &Graph, roots: &RootSet, bounds: &DegreeBounds) -> Self {
        let laplacian = build_laplacian(g);
        let expanded_laplacian = expand_laplacian(&laplacian, roots);
        let dbar = build_dbar(&expanded_laplacian, bounds);
        Self {
            laplacian,
            expanded_laplacian,
            dbar,
        }
    }
}

/// The three example networks used throughout the docs and tests.
pub mod cases {
    use super::Graph;

    /// Three agents in a chain `1 → 2 → 3`.
    pub fn case_i() -> Graph {
        Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    /// Six agents: two directed cycles `1→2→3→1` and `3→4→5→6→3` sharing node 3.
    pub fn case_ii() -> Graph {
        let edges = [(1, 2), (2, 3), (3, 1), (3, 4), (6, 3), (4, 5), (5, 6)];
        let edges: Vec<_> = edges
            .iter()
            .map(|&(from, to)| (from - 1, to - 1, 1.0))
            .collect();
        Graph::from_edges(6, &edges).unwrap()
    }

    /// Directed loop over 60 agents, `i → i+1` and `60 → 1`.
    pub fn case_iii() -> Graph {
        let n = 60;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }
}
