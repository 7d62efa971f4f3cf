//! Conditional independence graphs from precision estimates: edge selection,
//! network comparison, centrality and covariance path decomposition.

mod lfdr;
mod paths;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{spd_check, SymMatrix};

pub use lfdr::{lfdr_fit, null_density, LfdrFit, LfdrOptions};
pub use paths::{covariance_path_decomposition, PathContribution, PathDecomposition, PathLabel, MAX_PATHS};

/// Unit-diagonal matrix of partial correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCorrelationMatrix(SymMatrix);

impl PartialCorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Upper-triangle entries in row-major order, matching [`pairs`].
    pub fn off_diagonal(&self) -> Vec<f64> {
        pairs(self.dim()).map(|(i, j)| self.0[(i, j)]).collect()
    }
}

/// All pairs `(i, j)` with `i < j`, in row-major order.
pub fn pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |i| ((i + 1)..p).map(move |j| (i, j)))
}

/// `P_{jk} = −ω_{jk}/√(ω_{jj}ω_{kk})` with a unit diagonal.
pub fn partial_correlation(omega: &SymMatrix) -> Result<PartialCorrelationMatrix> {
    let d = omega.diagonal();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::domain("precision matrix has a nonpositive diagonal entry"));
    }
    let p = omega.dim();
    let scale = d.map(|v| 1.0 / v.sqrt());
    let m = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { -omega[(i, j)] * scale[i] * scale[j] });
    Ok(PartialCorrelationMatrix(SymMatrix::symmetrize(m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn of(value: f64) -> Sign {
        if value < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Positive => '+',
            Sign::Negative => '-',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub sign: Sign,
    pub weight: f64,
}

/// Undirected signed graph; edges are stored with `i < j`, sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    p: usize,
    edges: Vec<Edge>,
}

impl SparseGraph {
    pub fn new(p: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut normalized = Vec::with_capacity(edges.len());
        for e in edges {
            if e.i == e.j || e.i >= p || e.j >= p {
                return Err(Error::input(format!("invalid edge ({}, {}) for {p} nodes", e.i, e.j)));
            }
            normalized.push(Edge { i: e.i.min(e.j), j: e.i.max(e.j), ..e });
        }
        normalized.sort_by_key(|e| (e.i, e.j));
        if normalized.windows(2).any(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::input("duplicate edge"));
        }
        Ok(SparseGraph { p, edges: normalized })
    }

    /// Graph of the nonzero off-diagonal entries of a matrix.
    pub fn from_support(m: &SymMatrix) -> Self {
        let edges = pairs(m.dim())
            .filter(|&(i, j)| m[(i, j)] != 0.0)
            .map(|(i, j)| Edge { i, j, sign: Sign::of(m[(i, j)]), weight: m[(i, j)] })
            .collect();
        SparseGraph { p: m.dim(), edges }
    }

    pub fn nodes(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search_by_key(&key, |e| (e.i, e.j)).is_ok()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.p];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj
    }

    /// Edge list CSV with columns `node1,node2,sign,weight` (1-based nodes, or names).
    pub fn to_csv(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("node1,node2,sign,weight\n");
        for e in &self.edges {
            let _ = writeln!(out, "{},{},{},{:.16e}", label(names, e.i), label(names, e.j), e.sign.symbol(), e.weight);
        }
        out
    }

    /// Undirected DOT graph; negative edges are dashed.
    pub fn to_dot(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("graph G {\n");
        for v in 0..self.p {
            let _ = writeln!(out, "  \"{}\";", label(names, v));
        }
        for e in &self.edges {
            let style = match e.sign {
                Sign::Positive => "solid",
                Sign::Negative => "dashed",
            };
            let _ = writeln!(out, "  \"{}\" -- \"{}\" [style={style}];", label(names, e.i), label(names, e.j));
        }
        out.push_str("}\n");
        out
    }
}

fn label(names: Option<&[String]>, v: usize) -> String {
    names.and_then(|n| n.get(v).cloned()).unwrap_or_else(|| (v + 1).to_string())
}

/// Keeps the edges with `1 − lfdr ≥ threshold`.
pub fn sparsify(pcor: &PartialCorrelationMatrix, fit: &LfdrFit, threshold: f64) -> Result<SparseGraph> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::input(format!("threshold {threshold} must lie in (0, 1)")));
    }
    let p = pcor.dim();
    if fit.lfdr.len() != p * (p - 1) / 2 {
        return Err(Error::input("lFDR fit does not match the number of node pairs"));
    }
    let edges = pairs(p)
        .zip(&fit.lfdr)
        .filter(|(_, &l)| 1.0 - l >= threshold)
        .map(|((i, j), _)| {
            let w = pcor.get(i, j);
            Edge { i, j, sign: Sign::of(w), weight: w }
        })
        .collect();
    SparseGraph::new(p, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareMode {
    /// Edges of the first graph absent from the second.
    Difference,
    /// Edges present in both graphs.
    Intersection,
}

/// Set operation on the edge sets; edge attributes come from `first`.
pub fn compare(first: &SparseGraph, second: &SparseGraph, mode: CompareMode) -> Result<SparseGraph> {
    if first.p != second.p {
        return Err(Error::input(format!("graphs have {} and {} nodes", first.p, second.p)));
    }
    let keep = |e: &&Edge| second.contains(e.i, e.j) == (mode == CompareMode::Intersection);
    Ok(SparseGraph { p: first.p, edges: first.edges.iter().filter(keep).copied().collect() })
}

/// Integer edge weights summarizing several graphs on the same nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedMetaGraph {
    p: usize,
    graphs: usize,
    signed: bool,
    weights: BTreeMap<(usize, usize), i64>,
}

/// Sums the (signed) adjacency matrices of the graphs.
pub fn total_network(graphs: &[SparseGraph], signed: bool) -> Result<WeightedMetaGraph> {
    let p = graphs.first().map_or(0, |g| g.p);
    if graphs.iter().any(|g| g.p != p) {
        return Err(Error::input("graphs must have the same number of nodes"));
    }
    let mut weights = BTreeMap::new();
    for g in graphs {
        for e in &g.edges {
            *weights.entry((e.i, e.j)).or_insert(0) += if signed { e.sign.as_i64() } else { 1 };
        }
    }
    weights.retain(|_, w| *w != 0);
    Ok(WeightedMetaGraph { p, graphs: graphs.len(), signed, weights })
}

impl WeightedMetaGraph {
    pub fn nodes(&self) -> usize {
        self.p
    }

    /// Number of graphs summarized, which bounds `|w|`.
    pub fn graphs(&self) -> usize {
        self.graphs
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn weight(&self, i: usize, j: usize) -> i64 {
        self.weights.get(&(i.min(j), i.max(j))).copied().unwrap_or(0)
    }

    /// Nonzero weights keyed by `(i, j)` with `i < j`.
    pub fn weights(&self) -> &BTreeMap<(usize, usize), i64> {
        &self.weights
    }

    /// Difference of two summaries, e.g. one subtype's total network minus another's.
    pub fn subtract(&self, other: &WeightedMetaGraph) -> Result<WeightedMetaGraph> {
        if self.p != other.p {
            return Err(Error::input("meta graphs have different numbers of nodes"));
        }
        let mut weights = self.weights.clone();
        for (&k, &w) in &other.weights {
            *weights.entry(k).or_insert(0) -= w;
        }
        weights.retain(|_, w| *w != 0);
        Ok(WeightedMetaGraph { p: self.p, graphs: self.graphs + other.graphs, signed: true, weights })
    }

    /// Keeps the pairs with `|w| > min_abs`.
    pub fn filter_abs(&self, min_abs: i64) -> WeightedMetaGraph {
        let weights = self.weights.iter().filter(|(_, w)| w.abs() > min_abs).map(|(&k, &w)| (k, w)).collect();
        WeightedMetaGraph { weights, ..self.clone() }
    }

    pub fn to_csv(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("node1,node2,weight\n");
        for (&(i, j), w) in &self.weights {
            let _ = writeln!(out, "{},{},{w}", label(names, i), label(names, j));
        }
        out
    }

    /// Undirected DOT graph with `penwidth = |w|`; negative weights are dashed.
    pub fn to_dot(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("graph G {\n");
        for v in 0..self.p {
            let _ = writeln!(out, "  \"{}\";", label(names, v));
        }
        for (&(i, j), &w) in &self.weights {
            let style = if w < 0 { "dashed" } else { "solid" };
            let _ = writeln!(
                out,
                "  \"{}\" -- \"{}\" [label={w}, penwidth={}, style={style}];",
                label(names, i),
                label(names, j),
                w.abs()
            );
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCentrality {
    pub degree: usize,
    pub positive_degree: usize,
    pub negative_degree: usize,
    pub betweenness: f64,
}

/// Degrees and betweenness (unweighted shortest paths, ties share credit).
pub fn centrality(graph: &SparseGraph) -> Vec<NodeCentrality> {
    let p = graph.p;
    let mut nodes = vec![NodeCentrality { degree: 0, positive_degree: 0, negative_degree: 0, betweenness: 0.0 }; p];
    for e in &graph.edges {
        for v in [e.i, e.j] {
            nodes[v].degree += 1;
            match e.sign {
                Sign::Positive => nodes[v].positive_degree += 1,
                Sign::Negative => nodes[v].negative_degree += 1,
            }
        }
    }
    for (v, b) in betweenness(&graph.neighbors()).into_iter().enumerate() {
        nodes[v].betweenness = b;
    }
    nodes
}

/// Brandes' algorithm on an undirected graph; each unordered pair counted once.
fn betweenness(adj: &[Vec<usize>]) -> Vec<f64> {
    let p = adj.len();
    let mut score = vec![0.0; p];
    for s in 0..p {
        let mut stack = Vec::with_capacity(p);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); p];
        let mut sigma = vec![0.0; p];
        let mut dist = vec![usize::MAX; p];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; p];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                score[w] += delta[w];
            }
        }
    }
    score.iter().map(|b| b / 2.0).collect()
}

/// Zeroes the off-diagonal entries of `omega` outside the graph. If that loses
/// positive definiteness, the diagonal is raised by `|λ_min| + 1e-8`; the shift
/// is returned alongside.
pub fn sparsified_precision(omega: &SymMatrix, graph: &SparseGraph) -> Result<(SymMatrix, f64)> {
    if omega.dim() != graph.p {
        return Err(Error::input("graph and precision matrix sizes differ"));
    }
    let p = omega.dim();
    let m = DMatrix::from_fn(p, p, |i, j| if i == j || graph.contains(i, j) { omega[(i, j)] } else { 0.0 });
    let sparse = SymMatrix::symmetrize(m);
    let report = spd_check(&sparse)?;
    if report.is_pd {
        return Ok((sparse, 0.0));
    }
    let shift = report.min_eigenvalue.abs() + 1e-8;
    log::warn!("sparsified precision is not positive definite; diagonal raised by {shift:.3e}");
    Ok((sparse.add(&SymMatrix::scaled_identity(p, shift)), shift))
}

/// Node sets of the connected components, in order of their smallest node.
pub fn connected_components(graph: &SparseGraph) -> Vec<BTreeSet<usize>> {
    let adj = graph.neighbors();
    let mut seen = vec![false; graph.p];
    let mut out = Vec::new();
    for start in 0..graph.p {
        if seen[start] {
            continue;
        }
        let mut component = BTreeSet::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            component.insert(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        out.push(component);
    }
    out
}
