//! Decomposition of a covariance into contributions of the paths between two nodes.

use nalgebra::DMatrix;

use super::SparseGraph;
use crate::error::{Error, Result};
use crate::linalg::{spd_check, spd_inverse, SymMatrix};

/// Largest number of paths enumerated before giving up.
pub const MAX_PATHS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathLabel {
    /// Every edge lies in the common network.
    Common,
    /// No edge lies in the common network.
    Differential,
    /// Some edges lie in the common network.
    Mixed,
    /// No common network was supplied.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathContribution {
    /// Vertex sequence from the first to the second endpoint.
    pub path: Vec<usize>,
    pub contribution: f64,
    pub label: PathLabel,
}

impl PathContribution {
    /// Number of edges.
    pub fn length(&self) -> usize {
        self.path.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathDecomposition {
    /// Paths sorted by decreasing absolute contribution.
    pub paths: Vec<PathContribution>,
    /// Sum of the contributions.
    pub total: f64,
    /// `(Ω⁻¹)_{AB}`.
    pub covariance: f64,
    /// Whether every simple path was enumerated.
    pub complete: bool,
}

impl PathDecomposition {
    /// Covariance not accounted for by the enumerated paths.
    pub fn residual(&self) -> f64 {
        self.covariance - self.total
    }
}

fn determinant_without(omega: &DMatrix<f64>, removed: &[bool]) -> f64 {
    let keep: Vec<usize> = (0..omega.nrows()).filter(|&i| !removed[i]).collect();
    if keep.is_empty() {
        return 1.0;
    }
    DMatrix::from_fn(keep.len(), keep.len(), |i, j| omega[(keep[i], keep[j])]).determinant()
}

/// Splits `Cov(A, B) = (Ω⁻¹)_{AB}` over the simple paths `A = v_0, …, v_t = B`
/// of the support of `Ω`:
/// `(−1)^t ω_{v_0v_1}⋯ω_{v_{t−1}v_t} · det(Ω without the path's nodes) / det(Ω)`.
/// Paths longer than `max_length` edges are skipped; with `max_length ≥ p − 1`
/// the contributions sum to the covariance.
pub fn covariance_path_decomposition(
    omega: &SymMatrix,
    a: usize,
    b: usize,
    max_length: usize,
    common: Option<&SparseGraph>,
) -> Result<PathDecomposition> {
    let p = omega.dim();
    if a >= p || b >= p {
        return Err(Error::input(format!("endpoints must be below {p}")));
    }
    if a == b {
        return Err(Error::input("endpoints must differ"));
    }
    if common.is_some_and(|g| g.nodes() != p) {
        return Err(Error::input("common network has a different number of nodes"));
    }
    if !spd_check(omega)?.is_pd {
        return Err(Error::domain("precision matrix must be positive definite"));
    }
    let m = omega.as_matrix();
    let support = SparseGraph::from_support(omega);
    let adj = support.neighbors();

    let mut found: Vec<Vec<usize>> = Vec::new();
    let mut path = vec![a];
    let mut on_path = vec![false; p];
    on_path[a] = true;
    let mut truncated = false;
    // iterative depth-first search over simple paths
    let mut cursors = vec![0usize];
    while let Some(cursor) = cursors.last_mut() {
        let v = *path.last().expect("path is never empty while searching");
        if *cursor >= adj[v].len() {
            cursors.pop();
            on_path[v] = false;
            path.pop();
            continue;
        }
        let w = adj[v][*cursor];
        *cursor += 1;
        if on_path[w] {
            continue;
        }
        if w == b {
            if path.len() <= max_length {
                found.push([path.as_slice(), &[b]].concat());
                if found.len() > MAX_PATHS {
                    return Err(Error::Enumeration(format!(
                        "more than {MAX_PATHS} paths between the endpoints; use a smaller maximum path length"
                    )));
                }
            } else {
                truncated = true;
            }
            continue;
        }
        if path.len() < max_length {
            path.push(w);
            on_path[w] = true;
            cursors.push(0);
        } else {
            truncated = true;
        }
    }

    let det = m.determinant();
    let mut paths: Vec<PathContribution> = found
        .into_iter()
        .map(|path| {
            let mut removed = vec![false; p];
            let mut product = 1.0;
            for w in path.windows(2) {
                product *= m[(w[0], w[1])];
            }
            for &v in &path {
                removed[v] = true;
            }
            let t = path.len() - 1;
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            let contribution = sign * product * determinant_without(m, &removed) / det;
            let label = match common {
                None => PathLabel::Unlabeled,
                Some(g) => {
                    let inside = path.windows(2).filter(|w| g.contains(w[0], w[1])).count();
                    if inside == t {
                        PathLabel::Common
                    } else if inside == 0 {
                        PathLabel::Differential
                    } else {
                        PathLabel::Mixed
                    }
                }
            };
            PathContribution { path, contribution, label }
        })
        .collect();
    paths.sort_by(|x, y| y.contribution.abs().total_cmp(&x.contribution.abs()));
    let total = paths.iter().map(|c| c.contribution).sum();
    let covariance = spd_inverse(omega)?[(a, b)];
    Ok(PathDecomposition { paths, total, covariance, complete: !truncated })
}
