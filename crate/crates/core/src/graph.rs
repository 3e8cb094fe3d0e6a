//! Weighted undirected graphs and the builders used to construct them from
//! vertex coordinates.
//!
//! A [`WeightedGraph`] is validated on construction: no self-loops, at most one
//! edge per unordered pair, strictly positive finite weights, and a single
//! connected component.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of point draws attempted by the geometric builders before giving up.
pub const GEOMETRIC_RETRY_BUDGET: usize = 50;

/// An undirected edge `(i, j, w)` with `i < j`.
pub type Edge = (usize, usize, f64);

/// Undirected weighted graph with an optional planar embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
    coords: Option<Vec<[f64; 2]>>,
}

impl WeightedGraph {
    /// Builds a graph from an edge list, checking every structural invariant.
    ///
    /// Edges may be given in either orientation; they are stored with `i < j`
    /// and sorted lexicographically.
    pub fn new(n: usize, edges: Vec<Edge>, coords: Option<Vec<[f64; 2]>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if let Some(c) = &coords {
            if c.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: c.len() });
            }
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut normalized = Vec::with_capacity(edges.len());
        for (i, j, w) in edges {
            for idx in [i, j] {
                if idx >= n {
                    return Err(Error::VertexOutOfRange { index: idx, n });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidWeight { i, j, w });
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            if !seen.insert((a, b)) {
                return Err(Error::DuplicateEdge(a, b));
            }
            normalized.push((a, b, w));
        }
        normalized.sort_by_key(|e| (e.0, e.1));
        let graph = Self { n, edges: normalized, coords };
        let components = graph.component_count();
        if components != 1 {
            return Err(Error::DisconnectedGraph { components });
        }
        Ok(graph)
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    /// Weighted degree of every vertex.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n];
        for &(i, j, w) in &self.edges {
            deg[i] += w;
            deg[j] += w;
        }
        deg
    }

    /// Unweighted adjacency lists, each sorted ascending.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, _) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Shortest-path hop counts from `source`, ignoring edge weights.
    /// Unreachable vertices get `usize::MAX`.
    pub fn hop_distances(&self, source: usize) -> Vec<usize> {
        bfs(&self.neighbors(), source)
    }

    fn component_count(&self) -> usize {
        let adj = self.neighbors();
        let mut label = vec![false; self.n];
        let mut count = 0;
        for start in 0..self.n {
            if label[start] {
                continue;
            }
            count += 1;
            label[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &u in &adj[v] {
                    if !label[u] {
                        label[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        count
    }

    /// Returns a copy with every edge lighter than `threshold` removed.
    /// Fails if the pruned graph is disconnected.
    pub fn prune_below(&self, threshold: f64) -> Result<Self> {
        let edges = self.edges.iter().copied().filter(|e| e.2 >= threshold).collect();
        Self::new(self.n, edges, self.coords.clone())
    }
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

fn euclidean(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Thresholded Gaussian weight: `exp(-d^2 / (2 theta^2))` when `d <= kappa`.
pub fn gaussian_weight(dist: f64, theta: f64, kappa: f64) -> Option<f64> {
    (dist <= kappa).then(|| (-dist * dist / (2.0 * theta * theta)).exp())
}

/// Edge list of the thresholded Gaussian kernel graph on `points`.
pub fn geometric_edges(points: &[[f64; 2]], theta: f64, kappa: f64) -> Vec<Edge> {
    let mut edges = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if let Some(w) = gaussian_weight(euclidean(&points[i], &points[j]), theta, kappa) {
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
    }
    edges
}

fn check_geometric_params(n: usize, theta: f64, kappa: f64) -> Result<()> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 points, got {n}")));
    }
    Ok(())
}

fn try_geometric(points: Vec<[f64; 2]>, theta: f64, kappa: f64) -> Result<WeightedGraph> {
    let edges = geometric_edges(&points, theta, kappa);
    WeightedGraph::new(points.len(), edges, Some(points))
}

/// Thresholded Gaussian graph on the given points.
///
/// If the first placement is disconnected, fresh points are drawn uniformly in
/// the bounding box of the originals from a generator seeded with `seed`, up to
/// [`GEOMETRIC_RETRY_BUDGET`] placements in total.
pub fn build_geometric_graph(
    points: &[[f64; 2]],
    theta: f64,
    kappa: f64,
    seed: u64,
) -> Result<WeightedGraph> {
    check_geometric_params(points.len(), theta, kappa)?;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidate = points.to_vec();
    for _ in 0..GEOMETRIC_RETRY_BUDGET {
        match try_geometric(candidate, theta, kappa) {
            Ok(g) => return Ok(g),
            Err(Error::DisconnectedGraph { .. }) => {}
            Err(e) => return Err(e),
        }
        candidate = (0..points.len())
            .map(|_| {
                [
                    lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(),
                    lo[1] + (hi[1] - lo[1]) * rng.random::<f64>(),
                ]
            })
            .collect();
    }
    Err(Error::DisconnectedAfterRetries { attempts: GEOMETRIC_RETRY_BUDGET })
}

/// Random geometric graph: `n` vertices uniform in the unit square, thresholded
/// Gaussian weights, redrawn until connected.
pub fn random_geometric_graph(n: usize, theta: f64, kappa: f64, seed: u64) -> Result<WeightedGraph> {
    check_geometric_params(n, theta, kappa)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GEOMETRIC_RETRY_BUDGET {
        let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        match try_geometric(points, theta, kappa) {
            Ok(g) => return Ok(g),
            Err(Error::DisconnectedGraph { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::DisconnectedAfterRetries { attempts: GEOMETRIC_RETRY_BUDGET })
}

/// Inverse-distance edge list: an edge wherever `dist <= max_dist`, weight `1/dist`.
pub fn distance_edges(points: &[[f64; 2]], max_dist: f64) -> Result<Vec<Edge>> {
    let mut edges = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = euclidean(&points[i], &points[j]);
            if d == 0.0 {
                return Err(Error::CoincidentVertices(i, j));
            }
            if d <= max_dist {
                edges.push((i, j, 1.0 / d));
            }
        }
    }
    Ok(edges)
}

/// Inverse-distance graph on coordinates (planar or GPS degrees, both treated
/// as Euclidean tuples). `min_weight`, when given, drops edges lighter than it.
pub fn build_distance_graph(
    points: &[[f64; 2]],
    max_dist: f64,
    min_weight: Option<f64>,
) -> Result<WeightedGraph> {
    if !(max_dist > 0.0) {
        return Err(Error::InvalidParameter(format!("max_dist must be positive, got {max_dist}")));
    }
    let mut edges = distance_edges(points, max_dist)?;
    if let Some(t) = min_weight {
        edges.retain(|e| e.2 >= t);
    }
    WeightedGraph::new(points.len(), edges, Some(points.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_structural_violations() {
        assert!(matches!(
            WeightedGraph::new(2, vec![(0, 0, 1.0)], None),
            Err(Error::SelfLoop(0))
        ));
        assert!(matches!(
            WeightedGraph::new(2, vec![(0, 1, 1.0), (1, 0, 2.0)], None),
            Err(Error::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            WeightedGraph::new(2, vec![(0, 1, 0.0)], None),
            Err(Error::InvalidWeight { .. })
        ));
        assert!(matches!(
            WeightedGraph::new(3, vec![(0, 1, 1.0)], None),
            Err(Error::DisconnectedGraph { components: 2 })
        ));
        assert!(matches!(
            WeightedGraph::new(2, vec![(0, 5, 1.0)], None),
            Err(Error::VertexOutOfRange { index: 5, n: 2 })
        ));
    }

    #[test]
    fn gaussian_threshold_examples() {
        assert_eq!(gaussian_weight(0.6, 0.9, 0.5), None);
        assert_eq!(gaussian_weight(0.0, 0.9, 0.5), Some(1.0));
        let w = gaussian_weight(0.5, 0.9, 0.5).unwrap();
        // 0.25 / (2 * 0.81) = 0.154320987...
        let oracle = (-0.25f64 / 1.62).exp();
        assert!((w - oracle).abs() < 1e-15);
        assert!((w - 0.8571).abs() < 2e-4);
    }

    #[test]
    fn geometric_far_pair_has_no_edge() {
        let edges = geometric_edges(&[[0.0, 0.0], [0.6, 0.0]], 0.9, 0.5);
        assert!(edges.is_empty());
    }

    #[test]
    fn geometric_retry_redraws_disconnected_input() {
        // First placement is disconnected (gaps of 0.5 > kappa); redraws on the
        // same unit segment succeed once both gaps fall below kappa.
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]];
        assert!(geometric_edges(&pts, 0.9, 0.4).is_empty());
        let g = build_geometric_graph(&pts, 0.9, 0.4, 3).unwrap();
        assert!(g.n_edges() >= 2);
        assert_ne!(g.coords().unwrap(), &pts[..]);
        let sparse = [[0.0, 0.0], [1.0, 1.0]];
        assert!(matches!(
            build_geometric_graph(&sparse, 0.9, 0.01, 3),
            Err(Error::DisconnectedAfterRetries { attempts: GEOMETRIC_RETRY_BUDGET })
        ));
    }

    #[test]
    fn random_geometric_too_sparse() {
        assert!(matches!(
            random_geometric_graph(100, 0.9, 0.01, 1),
            Err(Error::DisconnectedAfterRetries { .. })
        ));
    }

    #[test]
    fn distance_graph_examples() {
        let g = build_distance_graph(&[[0.0, 0.0], [2.0, 0.0]], 40.0, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1, 0.5)]);

        assert!(matches!(
            build_distance_graph(&[[0.0, 0.0], [50.0, 0.0]], 40.0, None),
            Err(Error::DisconnectedGraph { .. })
        ));
        assert!(matches!(
            build_distance_graph(&[[1.0, 1.0], [1.0, 1.0]], 40.0, None),
            Err(Error::CoincidentVertices(0, 1))
        ));

        // collinear 0 - 1 - 2, spacing 1, only neighbours within 1.5
        let g = build_distance_graph(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 1.5, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn min_weight_pruning() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let g = build_distance_graph(&pts, 2.5, None).unwrap();
        assert_eq!(g.n_edges(), 3);
        let pruned = build_distance_graph(&pts, 2.5, Some(0.75)).unwrap();
        assert_eq!(pruned.n_edges(), 2);
        assert_eq!(g.prune_below(0.75).unwrap(), pruned);
    }

    #[test]
    fn hop_distance_on_path() {
        let g = WeightedGraph::new(4, vec![(0, 1, 1.0), (1, 2, 5.0), (2, 3, 0.1)], None).unwrap();
        assert_eq!(g.hop_distances(0), vec![0, 1, 2, 3]);
        assert_eq!(g.degrees(), vec![1.0, 6.0, 5.1, 0.1]);
    }

    #[test]
    fn random_geometric_is_seeded() {
        let a = random_geometric_graph(60, 0.9, 0.5, 11).unwrap();
        let b = random_geometric_graph(60, 0.9, 0.5, 11).unwrap();
        assert_eq!(a, b);
        for &(i, j, w) in a.edges() {
            assert!(i < j && w > 0.0 && w <= 1.0);
        }
    }
}
