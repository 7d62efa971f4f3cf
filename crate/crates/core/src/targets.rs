//! Target matrices: scalar multiples of the identity and precision matrices
//! implied by a directed graph fitted to pilot data.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarTarget {
    /// `αI` with `α = p/tr(S)`, the reciprocal of the mean eigenvalue.
    InverseMeanEigenvalue,
    /// The zero matrix.
    Zero,
    /// `αI` for a fixed `α ≥ 0`.
    Fixed(f64),
}

pub fn scalar_target(covariance: &SymMatrix, kind: ScalarTarget) -> Result<SymMatrix> {
    let p = covariance.dim();
    match kind {
        ScalarTarget::Zero => Ok(SymMatrix::zeros(p)),
        ScalarTarget::Fixed(alpha) if alpha >= 0.0 && alpha.is_finite() => {
            Ok(SymMatrix::scaled_identity(p, alpha))
        }
        ScalarTarget::Fixed(alpha) => Err(Error::input(format!("invalid target scale {alpha}"))),
        ScalarTarget::InverseMeanEigenvalue => {
            let tr = covariance.trace();
            if !(tr > 0.0) {
                return Err(Error::input("covariance has zero trace"));
            }
            Ok(SymMatrix::scaled_identity(p, p as f64 / tr))
        }
    }
}

/// Directed graph on `p` nodes given by the parent list of every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraphSpec {
    parents: Vec<Vec<usize>>,
    acyclic: bool,
}

impl DirectedGraphSpec {
    /// Builds the graph from `(parent, child)` pairs. Duplicate edges are merged.
    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut parents = vec![Vec::new(); p];
        for &(from, to) in edges {
            if from >= p || to >= p {
                return Err(Error::input(format!("edge ({from}, {to}) out of range for {p} nodes")));
            }
            if from == to {
                return Err(Error::input(format!("self loop on node {from}")));
            }
            if !parents[to].contains(&from) {
                parents[to].push(from);
            }
        }
        for list in &mut parents {
            list.sort_unstable();
        }
        let acyclic = is_acyclic(&parents);
        if !acyclic {
            log::warn!("directed graph has a cycle; the implied target may be singular");
        }
        Ok(DirectedGraphSpec { parents, acyclic })
    }

    /// Parses lines of `parent child` node names. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn parse_edge_list(text: &str, names: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut edges = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()).collect();
            if fields.len() != 2 {
                return Err(Error::input(format!(
                    "edge list line {}: expected `parent child`, got {line:?}",
                    line_no + 1
                )));
            }
            let lookup = |name: &str| {
                index.get(name).copied().ok_or_else(|| {
                    Error::input(format!("edge list line {}: unknown node {name:?}", line_no + 1))
                })
            };
            edges.push((lookup(fields[0])?, lookup(fields[1])?));
        }
        Self::from_edges(names.len(), &edges)
    }

    pub fn nodes(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn is_acyclic(&self) -> bool {
        self.acyclic
    }
}

fn is_acyclic(parents: &[Vec<usize>]) -> bool {
    let p = parents.len();
    let mut children = vec![Vec::new(); p];
    let mut indegree = vec![0usize; p];
    for (child, list) in parents.iter().enumerate() {
        indegree[child] = list.len();
        for &parent in list {
            children[parent].push(child);
        }
    }
    let mut ready: Vec<usize> = (0..p).filter(|&v| indegree[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = ready.pop() {
        seen += 1;
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    seen == p
}

/// A regression-built target and the per-node fits that produced it.
#[derive(Debug, Clone)]
pub struct DagTarget {
    pub target: SymMatrix,
    /// `coefficients[(child, parent)]` is the regression coefficient of the parent.
    pub coefficients: DMatrix<f64>,
    pub residual_variances: Vec<f64>,
    pub acyclic: bool,
}

/// Regresses every node on its parents in the pilot data (rows are samples) and
/// accumulates the precision matrix of the fitted linear structural model,
/// `(I − B)ᵀ D^{-1} (I − B)`.
pub fn dag_target(pilot: &DMatrix<f64>, graph: &DirectedGraphSpec) -> Result<DagTarget> {
    let (n, p) = pilot.shape();
    if p != graph.nodes() {
        return Err(Error::input(format!(
            "pilot data has {p} columns but the graph has {} nodes",
            graph.nodes()
        )));
    }
    let mut target = DMatrix::zeros(p, p);
    let mut coefficients = DMatrix::zeros(p, p);
    let mut residual_variances = Vec::with_capacity(p);
    for node in 0..p {
        let pa = graph.parents(node);
        if n < pa.len() + 2 {
            return Err(Error::Regression(format!(
                "node {node}: {} parents need at least {} pilot rows, got {n}",
                pa.len(),
                pa.len() + 2
            )));
        }
        let design = DMatrix::from_fn(n, pa.len() + 1, |i, j| if j == 0 { 1.0 } else { pilot[(i, pa[j - 1])] });
        let response: DVector<f64> = pilot.column(node).into_owned();
        let svd = design.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-10 * smax {
            return Err(Error::Regression(format!("node {node}: parent design is rank deficient")));
        }
        let fit = svd
            .solve(&response, 0.0)
            .map_err(|e| Error::Regression(format!("node {node}: {e}")))?;
        let residual = &response - &design * &fit;
        let sigma2 = residual.norm_squared() / (n - pa.len() - 1) as f64;
        let scale = response.norm_squared() / n as f64;
        if !(sigma2 > 1e-14 * scale.max(1e-300)) {
            return Err(Error::Regression(format!("node {node}: zero residual variance")));
        }
        let beta: Vec<f64> = fit.iter().skip(1).copied().collect();
        target[(node, node)] += 1.0 / sigma2;
        for (a, &pa_a) in pa.iter().enumerate() {
            coefficients[(node, pa_a)] = beta[a];
            target[(pa_a, node)] -= beta[a] / sigma2;
            target[(node, pa_a)] -= beta[a] / sigma2;
            for (b, &pa_b) in pa.iter().enumerate() {
                target[(pa_a, pa_b)] += beta[a] * beta[b] / sigma2;
            }
        }
        residual_variances.push(sigma2);
    }
    let mut target = SymMatrix::symmetrize(target);
    if !graph.is_acyclic() {
        let (d, v) = sym_eigen(&target)?;
        if d.iter().any(|&x| x < 0.0) {
            log::warn!("target from cyclic graph clamped to positive semi-definite");
            let clamped = DMatrix::from_diagonal(&d.map(|x| x.max(0.0)));
            target = SymMatrix::symmetrize(&v * clamped * v.transpose());
        }
    }
    Ok(DagTarget { target, coefficients, residual_variances, acyclic: graph.is_acyclic() })
}
