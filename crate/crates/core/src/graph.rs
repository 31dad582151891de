//! Communication/coupling graphs, graph-shift operators, and consensus
//! weights.
//!
//! Edges are ordered pairs `(j, i)`: node `i` receives from node `j`. The
//! physical coupling graph and the controller's communication graph share
//! this representation; consensus weights additionally require the graph to
//! be undirected (every edge paired with its reverse).

use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use crate::seed::{SeedSplitter, Stream};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// A directed graph on nodes `0..n`, stored as a sorted edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    /// Edges `(sender j, receiver i)`, lexicographically sorted, no self-loops.
    edges: BTreeSet<(usize, usize)>,
    /// `in_neighbors[i]` = sorted senders j with `(j, i)` in `edges`.
    in_neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from directed edges `(j, i)`. Rejects out-of-range
    /// indices and self-loops; duplicate edges collapse.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("topology must have at least one node"));
        }
        let mut set = BTreeSet::new();
        for (j, i) in edges {
            if j >= n || i >= n {
                return Err(Error::invalid(format!(
                    "edge ({j}, {i}) out of range for n = {n}"
                )));
            }
            if j == i {
                return Err(Error::invalid(format!("self-loop at node {i} not allowed")));
            }
            set.insert((j, i));
        }
        let mut in_neighbors = vec![Vec::new(); n];
        for &(j, i) in &set {
            in_neighbors[i].push(j);
        }
        // BTreeSet iteration is (j, i)-sorted, so each list is sorted already;
        // keep the explicit sort as a guard against future representation swaps.
        for l in &mut in_neighbors {
            l.sort_unstable();
        }
        Ok(Topology {
            n,
            edges: set,
            in_neighbors,
        })
    }

    /// Builds an undirected topology: each listed pair is inserted in both
    /// directions.
    pub fn from_undirected_edges(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut both = Vec::new();
        for (a, b) in pairs {
            both.push((a, b));
            both.push((b, a));
        }
        Self::from_edges(n, both)
    }

    /// Path 0 - 1 - ... - (n-1), undirected.
    pub fn path(n: usize) -> Result<Self> {
        Self::from_undirected_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Complete undirected graph.
    pub fn complete(n: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                pairs.push((a, b));
            }
        }
        Self::from_undirected_edges(n, pairs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, sender: usize, receiver: usize) -> bool {
        self.edges.contains(&(sender, receiver))
    }

    /// Sorted in-neighbors of `i` (senders `i` listens to), excluding `i`.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    /// In-degree of `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.in_neighbors[i].len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// True when every edge is paired with its reverse.
    pub fn is_undirected(&self) -> bool {
        self.edges.iter().all(|&(j, i)| self.edges.contains(&(i, j)))
    }

    /// The same node set with every edge made bidirectional.
    pub fn symmetrized(&self) -> Topology {
        let mut pairs = Vec::new();
        for &(j, i) in &self.edges {
            pairs.push((j, i));
            pairs.push((i, j));
        }
        Topology::from_edges(self.n, pairs).expect("symmetrizing valid edges cannot fail")
    }

    /// True when the symmetrized graph is connected (weak connectivity).
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let sym = if self.is_undirected() {
            None
        } else {
            Some(self.symmetrized())
        };
        let g = sym.as_ref().unwrap_or(self);
        let mut seen = vec![false; g.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in g.in_neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn to_json(&self) -> String {
        let doc = TopologyJson {
            n: self.n,
            edges: self.edges.iter().map(|&(j, i)| [j, i]).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("topology serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TopologyJson = serde_json::from_str(text)?;
        Self::from_edges(doc.n, doc.edges.into_iter().map(|[j, i]| (j, i)))
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyJson {
    n: usize,
    edges: Vec<[usize; 2]>,
}

/// Gaussian random partition graph: nodes fall into clusters whose sizes are
/// drawn from a rounded normal around `n / cluster_count`; node pairs connect
/// with probability `p_in` inside a cluster and `p_out` across clusters. The
/// result is symmetrized, and — if the draw came out disconnected — made
/// connected by chaining cluster representatives and attaching any stragglers
/// to their cluster's representative.
pub fn generate_random_partition_graph(
    n: usize,
    cluster_count: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<Topology> {
    if n == 0 {
        return Err(Error::invalid("graph must have at least one node"));
    }
    if cluster_count == 0 || cluster_count > n {
        return Err(Error::invalid(format!(
            "cluster_count must be in 1..={n}, got {cluster_count}"
        )));
    }
    for (label, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{label} must be in [0, 1], got {p}")));
        }
    }
    let mut rng = SeedSplitter::new(seed).rng(Stream::Topology, &[]);

    // Cluster sizes: rounded N(mean, mean) draws, then nudged so they are all
    // >= 1 and sum to n. The nudging keeps the draw deterministic.
    let mean = n as f64 / cluster_count as f64;
    let normal = Normal::new(mean, mean.sqrt()).expect("positive std");
    let mut sizes: Vec<usize> = (0..cluster_count)
        .map(|_| (normal.sample(&mut rng).round().max(1.0)) as usize)
        .collect();
    loop {
        let total: usize = sizes.iter().sum();
        if total == n {
            break;
        }
        if total > n {
            let k = (0..cluster_count)
                .max_by_key(|&k| sizes[k])
                .expect("nonempty");
            if sizes[k] > 1 {
                sizes[k] -= 1;
            } else {
                // All clusters at the floor yet total > n: impossible since
                // cluster_count <= n, but guard the loop anyway.
                break;
            }
        } else {
            let k = (0..cluster_count)
                .min_by_key(|&k| sizes[k])
                .expect("nonempty");
            sizes[k] += 1;
        }
    }

    // Contiguous cluster assignment and representatives (first node of each).
    let mut cluster_of = vec![0usize; n];
    let mut reps = Vec::with_capacity(cluster_count);
    let mut next = 0usize;
    for (k, &sz) in sizes.iter().enumerate() {
        reps.push(next);
        for u in next..next + sz {
            cluster_of[u] = k;
        }
        next += sz;
    }
    debug_assert_eq!(next, n);

    // Sample unordered pairs, then insert both directions.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let p = if cluster_of[a] == cluster_of[b] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                pairs.push((a, b));
            }
        }
    }
    let mut topo = Topology::from_undirected_edges(n, pairs.iter().copied())?;

    if !topo.is_connected() {
        for w in reps.windows(2) {
            pairs.push((w[0], w[1]));
        }
        topo = Topology::from_undirected_edges(n, pairs.iter().copied())?;
        // Chaining representatives joins the clusters; nodes that the edge
        // draw left isolated inside their own cluster still need a link.
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in topo.in_neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        for u in 0..n {
            if !seen[u] {
                pairs.push((u, reps[cluster_of[u]]));
            }
        }
        topo = Topology::from_undirected_edges(n, pairs)?;
    }
    debug_assert!(topo.is_connected());
    Ok(topo)
}

/// The supported graph-shift operator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Adjacency,
    /// Adjacency divided by its largest absolute eigenvalue.
    NormalizedAdjacency,
    /// Degree-minus-adjacency of the symmetrized graph.
    Laplacian,
    /// Laplacian divided by its largest absolute eigenvalue.
    NormalizedLaplacian,
}

impl ShiftKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "adjacency" => Ok(ShiftKind::Adjacency),
            "normalized_adjacency" => Ok(ShiftKind::NormalizedAdjacency),
            "laplacian" => Ok(ShiftKind::Laplacian),
            "normalized_laplacian" => Ok(ShiftKind::NormalizedLaplacian),
            other => Err(Error::invalid(format!(
                "unknown shift kind `{other}` (expected adjacency, normalized_adjacency, laplacian, normalized_laplacian)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShiftKind::Adjacency => "adjacency",
            ShiftKind::NormalizedAdjacency => "normalized_adjacency",
            ShiftKind::Laplacian => "laplacian",
            ShiftKind::NormalizedLaplacian => "normalized_laplacian",
        }
    }
}

/// An `n x n` graph-shift matrix whose sparsity pattern respects the
/// topology: `S[i, j] != 0` only when `i == j` or `j` is an in-neighbor
/// of `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOperator {
    kind: ShiftKind,
    matrix: DMatrix<f64>,
}

impl ShiftOperator {
    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// True when every nonzero entry sits on the diagonal or on an edge.
    pub fn matches_sparsity(&self, topology: &Topology) -> bool {
        let n = topology.n();
        for i in 0..n {
            for j in 0..n {
                if self.matrix[(i, j)] != 0.0 && i != j && !topology.has_edge(j, i) {
                    return false;
                }
            }
        }
        true
    }
}

/// Builds the requested shift operator. Laplacian kinds are defined on the
/// symmetrized graph (their sparsity then matches the symmetrized topology;
/// on an undirected topology that is the topology itself).
pub fn shift_operator(topology: &Topology, kind: ShiftKind) -> ShiftOperator {
    let n = topology.n();
    let mut m = DMatrix::zeros(n, n);
    match kind {
        ShiftKind::Adjacency | ShiftKind::NormalizedAdjacency => {
            for i in 0..n {
                for &j in topology.in_neighbors(i) {
                    m[(i, j)] = 1.0;
                }
            }
            if kind == ShiftKind::NormalizedAdjacency {
                let rho = spectral_radius(&m);
                if rho > 0.0 {
                    m /= rho;
                }
            }
        }
        ShiftKind::Laplacian | ShiftKind::NormalizedLaplacian => {
            let sym = topology.symmetrized();
            for i in 0..n {
                let d = sym.degree(i);
                m[(i, i)] = d as f64;
                for &j in sym.in_neighbors(i) {
                    m[(i, j)] = -1.0;
                }
            }
            if kind == ShiftKind::NormalizedLaplacian {
                let rho = spectral_radius(&m);
                if rho > 0.0 {
                    m /= rho;
                }
            }
        }
    }
    ShiftOperator { kind, matrix: m }
}

/// A row-stochastic nonnegative mixing matrix supported on the graph
/// (plus self-loops); symmetric — hence doubly stochastic — on undirected
/// graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    matrix: DMatrix<f64>,
}

impl ConsensusMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Mixing weight `W[i, j]`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// Row support used for mixing: every `j` with `W[i, j] != 0`, plus `i`
    /// itself (the diagonal may be exactly zero), ascending. Both execution
    /// engines mix over this set in this order so their floating-point
    /// results agree bit for bit.
    pub fn support(&self, i: usize) -> Vec<usize> {
        let n = self.matrix.nrows();
        (0..n)
            .filter(|&j| j == i || self.matrix[(i, j)] != 0.0)
            .collect()
    }
}

/// Metropolis–Hastings weights: `W[i, j] = 1 / max(d_i, d_j)` for neighbors,
/// diagonal filled to make rows sum to one. Requires an undirected topology;
/// the result is symmetric and doubly stochastic.
pub fn metropolis_hastings_weights(topology: &Topology) -> Result<ConsensusMatrix> {
    if !topology.is_undirected() {
        return Err(Error::invalid(
            "metropolis-hastings weights need an undirected topology",
        ));
    }
    let n = topology.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let di = topology.degree(i);
        let mut off = 0.0;
        for &j in topology.in_neighbors(i) {
            let dj = topology.degree(j);
            let wij = 1.0 / di.max(dj) as f64;
            w[(i, j)] = wij;
            off += wij;
        }
        w[(i, i)] = 1.0 - off;
        debug_assert!(w[(i, i)] >= -1e-15, "negative diagonal at {i}");
    }
    Ok(ConsensusMatrix { matrix: w })
}
