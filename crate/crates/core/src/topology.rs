//! Network graphs and the combination matrices agents use to mix with
//! their neighbors.
//!
//! Every matrix built here is symmetric and doubly stochastic with at least
//! one positive self-weight, and carries its mixing rate: the largest
//! eigenvalue magnitude once the averaging direction `1/K · 11ᵀ` is removed.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement redraws allowed before a random geometric graph is declared
/// disconnected.
pub const RGG_MAX_ATTEMPTS: usize = 1000;

/// Row/column sum tolerance for a valid combination matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Above this agent count the mixing rate is found by power iteration.
const DENSE_EIGEN_LIMIT: usize = 512;

/// Undirected graph on agents `0..K`. Edges are stored once as `(l, k)`
/// with `l < k`; self-loops live in the combination matrix, not here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::InvalidInput(format!(
                    "edge ({a},{b}) out of range for {node_count} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Graph {
            node_count,
            edges: set.into_iter().collect(),
        })
    }

    pub fn ring(node_count: usize) -> Result<Self> {
        let edges = (0..node_count)
            .map(|k| (k, (k + 1) % node_count))
            .filter(|(a, b)| a != b);
        Graph::from_edges(node_count, edges)
    }

    pub fn path(node_count: usize) -> Result<Self> {
        Graph::from_edges(node_count, (1..node_count).map(|k| (k - 1, k)))
    }

    pub fn complete(node_count: usize) -> Result<Self> {
        let edges = (0..node_count).flat_map(|a| ((a + 1)..node_count).map(move |b| (a, b)));
        Graph::from_edges(node_count, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    reached += 1;
                    queue.push_back(u);
                }
            }
        }
        reached == self.node_count
    }
}

/// Joins every pair of `points` closer than `radius`. May be disconnected.
pub fn geometric_graph(points: &[(f64, f64)], radius: f64) -> Result<Graph> {
    let mut edges = Vec::new();
    for a in 0..points.len() {
        for b in (a + 1)..points.len() {
            let (dx, dy) = (points[a].0 - points[b].0, points[a].1 - points[b].1);
            if (dx * dx + dy * dy).sqrt() < radius {
                edges.push((a, b));
            }
        }
    }
    Graph::from_edges(points.len(), edges)
}

/// Random geometric graph: `agents` points uniform in the unit square,
/// joined when closer than `radius`. Disconnected draws are redrawn from
/// the same stream, at most [`RGG_MAX_ATTEMPTS`] times.
pub fn build_random_geometric_graph(agents: usize, radius: f64, seed: u64) -> Result<Graph> {
    if agents < 2 {
        return Err(Error::InvalidInput(format!(
            "random geometric graph needs at least 2 agents, got {agents}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RGG_MAX_ATTEMPTS {
        let points: Vec<(f64, f64)> = (0..agents)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let graph = geometric_graph(&points, radius)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(Error::Disconnected {
        agents,
        radius,
        attempts: RGG_MAX_ATTEMPTS,
    })
}

/// Symmetric doubly stochastic combination matrix `A = [a_{lk}]`.
#[derive(Debug, Clone)]
pub struct CombinationMatrix {
    size: usize,
    weights: Vec<f64>,
    // neighbors[k] holds (l, a_{lk}) for every l with a_{lk} > 0, self included.
    neighbors: Vec<Vec<(usize, f64)>>,
    lambda: f64,
}

impl CombinationMatrix {
    /// Metropolis–Hastings weights `a_{lk} = 1 / (1 + max(deg l, deg k))`
    /// on edges, with the remainder on the diagonal.
    pub fn metropolis(graph: &Graph) -> Result<Self> {
        if !graph.is_connected() {
            return Err(Error::InvalidInput("Metropolis weights need a connected graph".into()));
        }
        let size = graph.node_count();
        let deg = graph.degrees();
        let mut weights = vec![0.0; size * size];
        for &(a, b) in graph.edges() {
            let w = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
            weights[a * size + b] = w;
            weights[b * size + a] = w;
        }
        for k in 0..size {
            let off: f64 = (0..size).filter(|&l| l != k).map(|l| weights[l * size + k]).sum();
            weights[k * size + k] = 1.0 - off;
        }
        Self::from_weights(size, weights)
    }

    /// `1/K · 11ᵀ`: one combination step yields the exact network mean.
    pub fn averaging(size: usize) -> Result<Self> {
        Self::from_weights(size, vec![1.0 / size as f64; size * size])
    }

    /// Validates a row-major `size × size` weight matrix and computes its
    /// mixing rate.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || weights.len() != size * size {
            return Err(Error::Dimension(format!(
                "expected {size}x{size} weights, got {} entries",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidInput(format!("weight {w} is negative or not finite")));
        }
        for l in 0..size {
            for k in 0..size {
                if weights[l * size + k] != weights[k * size + l] {
                    return Err(Error::InvalidInput(format!("weights not symmetric at ({l},{k})")));
                }
            }
        }
        for k in 0..size {
            let row: f64 = weights[k * size..(k + 1) * size].iter().sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!("row {k} sums to {row}, expected 1")));
            }
        }
        if !(0..size).any(|k| weights[k * size + k] > 0.0) {
            return Err(Error::InvalidInput("no agent has a positive self-weight".into()));
        }
        let lambda = mixing_rate(size, &weights)?;
        let neighbors = (0..size)
            .map(|k| {
                (0..size)
                    .filter_map(|l| {
                        let a = weights[l * size + k];
                        (a > 0.0).then_some((l, a))
                    })
                    .collect()
            })
            .collect();
        Ok(CombinationMatrix {
            size,
            weights,
            neighbors,
            lambda,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.weights[l * self.size + k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(l, a_{lk})` pairs feeding agent `k`, including `k` itself.
    pub fn neighbors(&self, k: usize) -> &[(usize, f64)] {
        &self.neighbors[k]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Edges implied by the nonzero off-diagonal weights.
    pub fn graph(&self) -> Graph {
        let edges = (0..self.size)
            .flat_map(|a| ((a + 1)..self.size).map(move |b| (a, b)))
            .filter(|&(a, b)| self.weights[a * self.size + b] > 0.0);
        Graph::from_edges(self.size, edges).expect("indices in range")
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            agents: self.size,
            edges: self.graph().edges().iter().map(|&(a, b)| [a, b]).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: TopologyFile = serde_json::from_str(&text)?;
        file.into_matrix()
    }
}

/// JSON form of a topology: `{"K": .., "edges": [[l,k],..], "weights": [..]}`
/// with weights row-major. Floats use shortest round-trip decimal form, so
/// a save/load cycle is bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    #[serde(rename = "K")]
    pub agents: usize,
    pub edges: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
}

impl TopologyFile {
    pub fn into_matrix(self) -> Result<CombinationMatrix> {
        let matrix = CombinationMatrix::from_weights(self.agents, self.weights)?;
        let declared = Graph::from_edges(self.agents, self.edges.iter().map(|e| (e[0], e[1])))?;
        if declared != matrix.graph() {
            return Err(Error::InvalidInput(
                "edge list disagrees with the nonzero pattern of the weights".into(),
            ));
        }
        Ok(matrix)
    }
}

/// Largest eigenvalue magnitude of a symmetric doubly stochastic matrix
/// after removing the Perron eigenvalue 1. Errors when the result is not
/// below one (disconnected or periodic network).
pub fn mixing_rate(size: usize, weights: &[f64]) -> Result<f64> {
    let inv = 1.0 / size as f64;
    let deflated: Vec<f64> = weights.iter().map(|w| w - inv).collect();
    let lambda = if size <= DENSE_EIGEN_LIMIT {
        let m = DMatrix::from_row_slice(size, size, &deflated);
        SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, e| acc.max(e.abs()))
    } else {
        spectral_radius_power(size, &deflated)
    };
    if lambda >= 1.0 - STOCHASTIC_TOL {
        return Err(Error::NotMixing(lambda));
    }
    Ok(lambda)
}

// Power iteration on B² (positive semidefinite, so no sign oscillation);
// the spectral radius of B is the square root of its top eigenvalue.
fn spectral_radius_power(size: usize, b: &[f64]) -> f64 {
    let apply = |x: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = b[i * size..(i + 1) * size].iter().zip(x).map(|(a, v)| a * v).sum();
        }
    };
    let mut x: Vec<f64> = (0..size).map(|i| 1.0 + (i as f64 * 0.618_033_988_75).fract()).collect();
    let mut y = vec![0.0; size];
    let mut z = vec![0.0; size];
    let mut estimate = 0.0;
    for _ in 0..200_000 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        apply(&x, &mut y);
        apply(&y, &mut z);
        let next: f64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
        std::mem::swap(&mut x, &mut z);
        if (next - estimate).abs() <= 1e-14 * next.abs().max(1e-300) {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn two_node_path_is_uniform() {
        let a = CombinationMatrix::metropolis(&Graph::path(2).unwrap()).unwrap();
        assert_eq!(a.weights(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(a.lambda().abs() < 1e-15);
    }

    #[test]
    fn four_ring_weights_and_rate() {
        let a = CombinationMatrix::metropolis(&Graph::ring(4).unwrap()).unwrap();
        for l in 0..4 {
            for k in 0..4 {
                let expected = if (l + 4 - k) % 4 == 2 { 0.0 } else { 1.0 / 3.0 };
                assert!((a.weight(l, k) - expected).abs() < 1e-15);
            }
        }
        // circulant eigenvalues 1/3 + 2/3 cos(2πm/4) = {1, 1/3, -1/3, 1/3}
        assert!((a.lambda() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn complete_three_is_averaging() {
        let a = CombinationMatrix::metropolis(&Graph::complete(3).unwrap()).unwrap();
        assert!(max_abs_diff(a.weights(), &[1.0 / 3.0; 9]) < 1e-15);
        assert!(a.lambda() < 1e-12);
    }

    #[test]
    fn identity_is_rejected() {
        let mut eye = vec![0.0; 16];
        (0..4).for_each(|k| eye[k * 5] = 1.0);
        assert!(matches!(
            CombinationMatrix::from_weights(4, eye),
            Err(Error::NotMixing(_))
        ));
    }

    #[test]
    fn averaging_has_zero_rate() {
        let a = CombinationMatrix::averaging(7).unwrap();
        assert!(a.lambda() < 1e-12);
    }

    #[test]
    fn rgg_full_radius_is_complete() {
        let g = build_random_geometric_graph(2, 2f64.sqrt(), 3).unwrap();
        assert_eq!(g.edge_count(), 1);
        let g = build_random_geometric_graph(6, 2f64.sqrt(), 3).unwrap();
        assert_eq!(g.edge_count(), 15);
    }

    #[test]
    fn rgg_tiny_radius_fails() {
        let err = build_random_geometric_graph(5, 0.01, 1).unwrap_err();
        assert!(matches!(
            err,
            Error::Disconnected {
                attempts: RGG_MAX_ATTEMPTS,
                ..
            }
        ));
    }

    #[test]
    fn rgg_edges_grow_with_radius() {
        for seed in 0..5 {
            let counts: Vec<usize> = [0.3, 0.4, 0.6, 2f64.sqrt()]
                .iter()
                .map(|&r| build_random_geometric_graph(28, r, seed).unwrap().edge_count())
                .collect();
            assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
            assert_eq!(counts[3], 28 * 27 / 2);
        }
    }

    #[test]
    fn power_iteration_agrees_with_dense() {
        let g = build_random_geometric_graph(40, 0.35, 11).unwrap();
        let a = CombinationMatrix::metropolis(&g).unwrap();
        let inv = 1.0 / 40.0;
        let b: Vec<f64> = a.weights().iter().map(|w| w - inv).collect();
        let power = spectral_radius_power(40, &b);
        assert!((power - a.lambda()).abs() < 1e-9, "{power} vs {}", a.lambda());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let g = build_random_geometric_graph(12, 0.5, 5).unwrap();
        let a = CombinationMatrix::metropolis(&g).unwrap();
        let text = serde_json::to_string(&a.to_file()).unwrap();
        let back: TopologyFile = serde_json::from_str(&text).unwrap();
        let b = back.into_matrix().unwrap();
        assert!(a
            .weights()
            .iter()
            .zip(b.weights())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.graph(), b.graph());
    }

    #[test]
    fn mismatched_edge_list_rejected() {
        let a = CombinationMatrix::metropolis(&Graph::ring(4).unwrap()).unwrap();
        let mut file = a.to_file();
        file.edges.pop();
        assert!(file.into_matrix().is_err());
    }
}
