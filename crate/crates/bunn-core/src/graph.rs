//! Graph representation, Laplacian operators, synthetic graph generators,
//! and positional encodings.
//!
//! Graphs are undirected, simple (no self-loops, no duplicate edges), and
//! stored in compressed sparse row form. Every generator in this module
//! produces a connected graph.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::sym_eig;

/// Immutable undirected graph with CSR adjacency and degree data.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    degrees: Vec<usize>,
    edge_count: usize,
}

impl Graph {
    /// Builds a graph from an edge list. Duplicate pairs collapse to one
    /// edge; the orientation of each pair is irrelevant.
    pub fn build(n: usize, edge_list: &[(usize, usize)]) -> Result<Graph> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in edge_list {
            if u >= n {
                return Err(Error::NodeOutOfRange(u, n));
            }
            if v >= n {
                return Err(Error::NodeOutOfRange(v, n));
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in adj.iter_mut() {
            list.sort_unstable();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        let degrees: Vec<usize> = (0..n).map(|v| offsets[v + 1] - offsets[v]).collect();
        Ok(Graph {
            n,
            offsets,
            neighbors,
            degrees,
            edge_count: seen.len(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Unordered edges with u < v.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Errors if any node is isolated.
    pub fn check_no_isolated(&self) -> Result<()> {
        if let Some(v) = self.degrees.iter().position(|&d| d == 0) {
            return Err(Error::IsolatedNode(v));
        }
        Ok(())
    }

    pub fn adjacency_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                a[[u, v]] = 1.0;
            }
        }
        a
    }

    /// Dense random-walk normalized Laplacian I − D⁻¹A.
    pub fn rw_laplacian_dense(&self) -> Array2<f64> {
        let mut l = Array2::eye(self.n);
        for u in 0..self.n {
            let inv = 1.0 / self.degrees[u] as f64;
            for &v in self.neighbors(u) {
                l[[u, v]] -= inv;
            }
        }
        l
    }

    /// Dense symmetric normalized Laplacian I − D^{−1/2} A D^{−1/2}.
    /// Eigenvalues lie in [0, 2]; the kernel is spanned by D^{1/2}·1 for a
    /// connected graph.
    pub fn sym_normalized_laplacian(&self) -> Result<Array2<f64>> {
        self.check_no_isolated()?;
        let mut l = Array2::eye(self.n);
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                l[[u, v]] -= 1.0 / ((self.degrees[u] * self.degrees[v]) as f64).sqrt();
            }
        }
        Ok(l)
    }

    /// Edge-list text format: line 1 is "n m", then m lines "u v".
    pub fn to_edge_list_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.edge_count);
        for (u, v) in self.edges() {
            s.push_str(&format!("{} {}\n", u, v));
        }
        s
    }

    pub fn from_edge_list_text(text: &str) -> Result<Graph> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty input".into()))?;
        let mut it = header.split_whitespace();
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("bad header".into()))?;
        let m: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("bad header".into()))?;
        let mut edges = Vec::with_capacity(m);
        for line in lines {
            let mut it = line.split_whitespace();
            let u: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad edge line: {line}")))?;
            let v: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad edge line: {line}")))?;
            edges.push((u, v));
        }
        if edges.len() != m {
            return Err(Error::Parse(format!(
                "header promised {m} edges, found {}",
                edges.len()
            )));
        }
        Graph::build(n, &edges)
    }
}

/// Applies the random-walk Laplacian to an n×c signal in O(|E|·c).
/// Row v of the output is x_v − (1/d_v)·Σ_{u∈N(v)} x_u.
pub fn rw_laplacian_apply(g: &Graph, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != g.n {
        return Err(Error::ShapeMismatch(format!(
            "signal has {} rows, graph has {} nodes",
            x.nrows(),
            g.n
        )));
    }
    g.check_no_isolated()?;
    let c = x.ncols();
    let mut out = x.clone();
    for v in 0..g.n {
        let inv = 1.0 / g.degrees[v] as f64;
        for &u in g.neighbors(v) {
            for j in 0..c {
                out[[v, j]] -= inv * x[[u, j]];
            }
        }
    }
    Ok(out)
}

/// Neighbor sum Σ_{u∈N(v)} x_u per node, O(|E|·c).
pub fn adjacency_sum_apply(g: &Graph, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != g.n {
        return Err(Error::ShapeMismatch(format!(
            "signal has {} rows, graph has {} nodes",
            x.nrows(),
            g.n
        )));
    }
    let c = x.ncols();
    let mut out = Array2::zeros((g.n, c));
    for v in 0..g.n {
        for &u in g.neighbors(v) {
            for j in 0..c {
                out[[v, j]] += x[[u, j]];
            }
        }
    }
    Ok(out)
}

/// Two cliques of N/2 nodes joined by a single bridge edge. Returns the
/// graph and a 0/1 type per node (first clique is type 0).
pub fn barbell_graph(n: usize) -> Result<(Graph, Vec<u8>)> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "barbell needs even N >= 4, got {n}"
        )));
    }
    let half = n / 2;
    let mut edges = Vec::new();
    for side in 0..2 {
        let base = side * half;
        for i in 0..half {
            for j in (i + 1)..half {
                edges.push((base + i, base + j));
            }
        }
    }
    // bridge between the last node of clique A and the first of clique B
    edges.push((half - 1, half));
    let g = Graph::build(n, &edges)?;
    let types = (0..n).map(|v| u8::from(v >= half)).collect();
    Ok((g, types))
}

/// Complete graph K_N with a half/half type split.
pub fn clique_graph(n: usize) -> Result<(Graph, Vec<u8>)> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "clique task needs even N >= 2, got {n}"
        )));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((i, j));
        }
    }
    let g = Graph::build(n, &edges)?;
    let types = (0..n).map(|v| u8::from(v >= n / 2)).collect();
    Ok((g, types))
}

/// Complete binary tree of depth r. Node 0 is the root; node v has children
/// 2v+1 and 2v+2; the last 2^r nodes are the leaves.
pub struct TreeTopology {
    pub graph: Graph,
    pub root: usize,
    pub leaves: Vec<usize>,
    pub depth: usize,
}

pub fn binary_tree(depth: usize) -> Result<TreeTopology> {
    if depth < 2 {
        return Err(Error::InvalidParameter(format!(
            "tree depth must be >= 2, got {depth}"
        )));
    }
    let n = (1usize << (depth + 1)) - 1;
    let mut edges = Vec::with_capacity(n - 1);
    for v in 0..n {
        for child in [2 * v + 1, 2 * v + 2] {
            if child < n {
                edges.push((v, child));
            }
        }
    }
    let graph = Graph::build(n, &edges)?;
    let first_leaf = (1usize << depth) - 1;
    let leaves = (first_leaf..n).collect();
    Ok(TreeTopology {
        graph,
        root: 0,
        leaves,
        depth,
    })
}

/// Positional encoding flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingKind {
    /// Indicator rows shifted by a per-graph offset; injective across a
    /// family when offsets give disjoint ranges.
    OneHot,
    /// First k nontrivial eigenvectors of the symmetric normalized
    /// Laplacian, sign-canonicalized.
    LaplacianEigenvector,
    /// Diagonal return probabilities of (D⁻¹A)^j for j = 1..k.
    RandomWalkStructural,
}

#[derive(Debug, Clone)]
pub struct PositionalEncoding {
    pub kind: EncodingKind,
    pub values: Array2<f64>,
}

impl PositionalEncoding {
    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

pub fn positional_encoding(
    g: &Graph,
    kind: EncodingKind,
    k: usize,
    offset: usize,
) -> Result<PositionalEncoding> {
    let n = g.node_count();
    let values = match kind {
        EncodingKind::OneHot => {
            if k < offset + n {
                return Err(Error::InvalidParameter(format!(
                    "one-hot width {k} too small for offset {offset} + {n} nodes"
                )));
            }
            let mut p = Array2::zeros((n, k));
            for v in 0..n {
                p[[v, offset + v]] = 1.0;
            }
            p
        }
        EncodingKind::LaplacianEigenvector => {
            if k >= n {
                return Err(Error::InvalidParameter(format!(
                    "laplacian encoding width {k} must be < n = {n}"
                )));
            }
            let l = g.sym_normalized_laplacian()?;
            let (vals, vecs) = sym_eig(&l)?;
            // skip the trivial eigenvector; canonicalize signs; break
            // eigenvalue ties by lexicographic eigenvector order
            let mut cols: Vec<(f64, Vec<f64>)> = (1..n)
                .map(|i| {
                    let mut col: Vec<f64> = (0..n).map(|r| vecs[[r, i]]).collect();
                    if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
                        if *first < 0.0 {
                            for v in col.iter_mut() {
                                *v = -*v;
                            }
                        }
                    }
                    (vals[i], col)
                })
                .collect();
            cols.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap()
                    .then_with(|| a.1.partial_cmp(&b.1).unwrap())
            });
            let mut p = Array2::zeros((n, k));
            for (j, (_, col)) in cols.into_iter().take(k).enumerate() {
                for r in 0..n {
                    p[[r, j]] = col[r];
                }
            }
            p
        }
        EncodingKind::RandomWalkStructural => {
            g.check_no_isolated()?;
            let mut walk = Array2::eye(n);
            let mut step = Array2::zeros((n, n));
            for u in 0..n {
                let inv = 1.0 / g.degree(u) as f64;
                for &v in g.neighbors(u) {
                    step[[u, v]] = inv;
                }
            }
            let mut p = Array2::zeros((n, k));
            for j in 0..k {
                walk = walk.dot(&step);
                for v in 0..n {
                    p[[v, j]] = walk[[v, v]];
                }
            }
            p
        }
    };
    Ok(PositionalEncoding { kind, values })
}
