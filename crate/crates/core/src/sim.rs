//! Synthetic data generators and the benchmark scenarios.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{fit, pooled_covariance, ClassData, FitOptions, PrecisionEstimates};
use crate::linalg::{cholesky, frobenius_loss, quadratic_loss, ridge_update, spd_check, spd_inverse, SymMatrix};
use crate::penalty::{PenaltyMatrix, PenaltyTemplate};
use crate::selection::{cv_score, optimize_penalties, CvMethod};
use crate::targets::{scalar_target, ScalarTarget};

/// Banded precision matrix with entries `(k+1)/(|j−j'|+1)` for `|j−j'| ≤ k`.
///
/// A bandwidth of `p − 1` or more fills the whole matrix; the result is positive
/// definite for every `k` because `1/(d+1)` is a convex, decreasing sequence.
pub fn banded_precision(p: usize, k: usize) -> Result<SymMatrix> {
    if p == 0 {
        return Err(Error::input("dimension must be positive"));
    }
    let m = DMatrix::from_fn(p, p, |i, j| {
        let d = i.abs_diff(j);
        if d <= k {
            (k + 1) as f64 / (d + 1) as f64
        } else {
            0.0
        }
    });
    Ok(SymMatrix::symmetrize(m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    /// Watts–Strogatz ring lattice where every node starts with `neighbors`
    /// neighbours (half on each side) and each edge is rewired with probability `rewire`.
    SmallWorld { neighbors: usize, rewire: f64 },
    /// Barabási preferential attachment with `attach` edges per arriving node.
    ScaleFree { attach: usize },
}

impl Topology {
    pub fn small_world() -> Self {
        Topology::SmallWorld { neighbors: 4, rewire: 0.05 }
    }

    pub fn scale_free() -> Self {
        Topology::ScaleFree { attach: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct TopologyPrecision {
    pub precision: SymMatrix,
    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Amount added to the diagonal to restore positive definiteness (0 if none).
    pub diagonal_inflation: f64,
}

fn small_world_edges(p: usize, neighbors: usize, rewire: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let half = (neighbors / 2).max(1).min((p - 1) / 2).max(1);
    let mut adjacency = vec![vec![false; p]; p];
    let mut edges = Vec::new();
    for i in 0..p {
        for s in 1..=half {
            let j = (i + s) % p;
            if i != j && !adjacency[i][j] {
                adjacency[i][j] = true;
                adjacency[j][i] = true;
                edges.push((i, j));
            }
        }
    }
    for edge in edges.iter_mut() {
        if rng.random::<f64>() >= rewire {
            continue;
        }
        let (a, b) = *edge;
        let candidates: Vec<usize> = (0..p).filter(|&c| c != a && !adjacency[a][c]).collect();
        if candidates.is_empty() {
            continue;
        }
        let c = candidates[rng.random_range(0..candidates.len())];
        adjacency[a][b] = false;
        adjacency[b][a] = false;
        adjacency[a][c] = true;
        adjacency[c][a] = true;
        *edge = (a, c);
    }
    edges
}

fn scale_free_edges(p: usize, attach: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut degree = vec![0usize; p];
    let mut edges = Vec::new();
    for node in 1..p {
        let m = attach.min(node);
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        while chosen.len() < m {
            let weights: Vec<f64> =
                (0..node).map(|v| if chosen.contains(&v) { 0.0 } else { degree[v] as f64 + 1.0 }).collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.random::<f64>() * total;
            let mut pick = node - 1;
            for (v, w) in weights.iter().enumerate() {
                if *w > 0.0 && draw < *w {
                    pick = v;
                    break;
                }
                draw -= w;
            }
            if weights[pick] == 0.0 {
                pick = (0..node).rev().find(|v| !chosen.contains(v)).expect("a node is left to choose");
            }
            chosen.push(pick);
        }
        for v in chosen {
            degree[v] += 1;
            degree[node] += 1;
            edges.push((v, node));
        }
    }
    edges
}

/// Unit-diagonal precision matrix with `edge_value` on the edges of a random
/// graph of the given topology. If the result is not positive definite the
/// diagonal is raised by `|λ_min| + 0.01`.
pub fn topology_precision(p: usize, topology: Topology, edge_value: f64, rng: &mut impl Rng) -> Result<TopologyPrecision> {
    if p < 3 {
        return Err(Error::input("topology generators need at least 3 nodes"));
    }
    let mut edges = match topology {
        Topology::SmallWorld { neighbors, rewire } => {
            if !(0.0..=1.0).contains(&rewire) {
                return Err(Error::input("rewiring probability must lie in [0, 1]"));
            }
            small_world_edges(p, neighbors, rewire, rng)
        }
        Topology::ScaleFree { attach } => {
            if attach == 0 {
                return Err(Error::input("attachment count must be positive"));
            }
            scale_free_edges(p, attach, rng)
        }
    };
    for e in edges.iter_mut() {
        *e = (e.0.min(e.1), e.0.max(e.1));
    }
    edges.sort_unstable();
    edges.dedup();
    let mut m = DMatrix::identity(p, p);
    for &(i, j) in &edges {
        m[(i, j)] = edge_value;
        m[(j, i)] = edge_value;
    }
    let mut precision = SymMatrix::symmetrize(m);
    let report = spd_check(&precision)?;
    let mut diagonal_inflation = 0.0;
    if !report.is_pd {
        diagonal_inflation = report.min_eigenvalue.abs() + 0.01;
        log::warn!("topology precision inflated by {diagonal_inflation:.4} to be positive definite");
        precision = precision.add(&SymMatrix::scaled_identity(p, diagonal_inflation));
    }
    Ok(TopologyPrecision { precision, edges, diagonal_inflation })
}

/// Draws `Σ ~ W⁻¹((ν−p−1)Φ⁻¹, ν)`, so that `E[Σ] = Φ⁻¹`.
pub fn sample_inverse_wishart(phi: &SymMatrix, nu: f64, rng: &mut impl Rng) -> Result<SymMatrix> {
    let p = phi.dim();
    if !(nu > (p + 1) as f64) {
        return Err(Error::input(format!("degrees of freedom {nu} must exceed p + 1 = {}", p + 1)));
    }
    // Σ⁻¹ ~ W(Φ/(ν−p−1), ν), drawn with the Bartlett decomposition.
    let scale = phi.scale(1.0 / (nu - p as f64 - 1.0));
    let l = cholesky(&scale)?.l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::input(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let precision = SymMatrix::symmetrize(&la * la.transpose());
    spd_inverse(&precision)
}

/// `n` independent rows from `N(0, Σ)`.
pub fn sample_mvn(n: usize, sigma: &SymMatrix, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let l = cholesky(sigma)?.l();
    let z = DMatrix::from_fn(n, sigma.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(z * l.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioId {
    /// Two classes, banded truths with equal bandwidths: fused vs non-fused.
    OneA,
    /// Two classes, banded truths with different bandwidths: fused vs non-fused.
    OneB,
    /// Two classes sharing a banded truth; zero, scalar and exact targets.
    Two,
    /// Three classes from an inverse-Wishart around a random topology.
    Three,
    /// Two classes of unequal size sharing a banded truth.
    Four,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [ScenarioId::OneA, ScenarioId::OneB, ScenarioId::Two, ScenarioId::Three, ScenarioId::Four];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::OneA => "1a",
            ScenarioId::OneB => "1b",
            ScenarioId::Two => "2",
            ScenarioId::Three => "3",
            ScenarioId::Four => "4",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = ScenarioId::ALL.iter().map(|id| id.as_str()).collect();
            Error::input(format!("unknown scenario {s:?}; valid ids are {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthModel {
    Banded,
    Topology(Topology),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub scenario: ScenarioId,
    pub p: usize,
    pub class_sizes: Vec<usize>,
    /// Bandwidth per class for banded truths.
    pub bands: Vec<usize>,
    pub truth: TruthModel,
    /// Inverse-Wishart degrees of freedom for heterogeneous classes.
    pub nu: Option<f64>,
    /// Value of the off-diagonal entries of topology-based precision matrices.
    pub edge_value: f64,
    pub replicates: usize,
    pub seed: u64,
    pub method: CvMethod,
    /// Maximum number of criterion evaluations per penalty search.
    pub budget: usize,
}

impl SimulationConfig {
    /// Default settings of a scenario for the given class sizes.
    pub fn preset(scenario: ScenarioId, class_sizes: Vec<usize>) -> Self {
        let (p, bands, truth, nu) = match scenario {
            ScenarioId::OneA => (30, vec![15, 15], TruthModel::Banded, None),
            ScenarioId::OneB => (30, vec![15, 2], TruthModel::Banded, None),
            ScenarioId::Two => (50, vec![25, 25], TruthModel::Banded, None),
            ScenarioId::Three => (50, vec![], TruthModel::Topology(Topology::small_world()), Some(100.0)),
            ScenarioId::Four => (50, vec![8, 8], TruthModel::Banded, None),
        };
        SimulationConfig {
            scenario,
            p,
            class_sizes,
            bands,
            truth,
            nu,
            edge_value: 0.1,
            replicates: 20,
            seed: 1,
            method: CvMethod::LeaveOneOut,
            budget: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.class_sizes.len();
        let expected = match self.scenario {
            ScenarioId::Three => 3,
            _ => 2,
        };
        if g != expected {
            return Err(Error::input(format!("scenario {} needs {expected} classes, got {g}", self.scenario)));
        }
        if self.class_sizes.iter().any(|&n| n < 2) {
            return Err(Error::input("every class needs at least 2 samples"));
        }
        if self.p == 0 || self.replicates == 0 || self.budget == 0 {
            return Err(Error::input("p, replicates and budget must be positive"));
        }
        if self.truth == TruthModel::Banded && self.bands.len() != g {
            return Err(Error::input("banded truths need one bandwidth per class"));
        }
        if let Some(nu) = self.nu {
            if !(nu > (self.p + 1) as f64) {
                return Err(Error::input(format!("nu must exceed p + 1 = {}", self.p + 1)));
            }
        }
        Ok(())
    }

    fn replicate_seed(&self, replicate: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(replicate as u64)
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: ScenarioId,
    pub replicate: usize,
    pub estimator: String,
    /// 1-based class index.
    pub class: usize,
    pub frobenius_loss: f64,
    pub quadratic_loss: f64,
    /// Upper triangle (row major, diagonal included) of the selected penalty matrix.
    pub penalty: Vec<f64>,
    pub seed: u64,
}

/// Column names for the penalty part of [`ResultRow`], e.g. `lambda_1_2`.
pub fn penalty_columns(classes: usize) -> Vec<String> {
    (0..classes)
        .flat_map(|i| (i..classes).map(move |j| format!("lambda_{}_{}", i + 1, j + 1)))
        .collect()
}

fn upper_triangle(penalty: &PenaltyMatrix) -> Vec<f64> {
    let g = penalty.classes();
    (0..g).flat_map(|i| (i..g).map(move |j| (i, j))).map(|(i, j)| penalty.get(i, j)).collect()
}

struct Replicate {
    truths: Vec<SymMatrix>,
    data: Vec<ClassData>,
}

fn draw_replicate(config: &SimulationConfig, latent: Option<&SymMatrix>, rng: &mut ChaCha8Rng) -> Result<Replicate> {
    let g = config.class_sizes.len();
    let mut truths = Vec::with_capacity(g);
    for class in 0..g {
        let base = match (config.truth, latent) {
            (TruthModel::Banded, _) => banded_precision(config.p, config.bands[class])?,
            (TruthModel::Topology(_), Some(psi)) => psi.clone(),
            (TruthModel::Topology(_), None) => unreachable!("latent topology drawn beforehand"),
        };
        let truth = match config.nu {
            Some(nu) => spd_inverse(&sample_inverse_wishart(&base, nu, rng)?)?,
            None => base,
        };
        truths.push(truth);
    }
    let mut data = Vec::with_capacity(g);
    for (truth, &n) in truths.iter().zip(&config.class_sizes) {
        let sigma = spd_inverse(truth)?;
        data.push(ClassData::from_samples(&sample_mvn(n, &sigma, rng)?)?);
    }
    Ok(Replicate { truths, data })
}

fn lenient_fit(data: &[ClassData], penalty: &PenaltyMatrix, targets: &[SymMatrix]) -> Result<PrecisionEstimates> {
    match fit(data, penalty, targets, &FitOptions::default()) {
        Err(Error::Convergence { last, .. }) => Ok(*last),
        other => other,
    }
}

/// Picks the best-scoring start, then runs the simplex search from it.
fn select(
    template: &PenaltyTemplate,
    data: &[ClassData],
    targets: &[SymMatrix],
    method: &CvMethod,
    starts: &[Vec<f64>],
    budget: usize,
) -> Result<PenaltyMatrix> {
    let options = FitOptions::default();
    let mut best_start = &starts[0];
    if starts.len() > 1 {
        let mut best = f64::INFINITY;
        for start in starts {
            let score = template
                .instantiate(start)
                .and_then(|penalty| cv_score(method, &penalty, data, targets, &options))
                .map(|s| s.value)
                .unwrap_or(f64::INFINITY);
            if score < best {
                best = score;
                best_start = start;
            }
        }
    }
    let remaining = budget.saturating_sub(starts.len().saturating_sub(1)).max(1);
    Ok(optimize_penalties(template, data, targets, method, best_start, remaining, &options)?.penalty)
}

struct Outcome {
    estimator: &'static str,
    estimates: Vec<SymMatrix>,
    penalty: PenaltyMatrix,
}

/// Fused, restricted fused, separate and pooled estimators with scalar targets.
fn fusion_comparison(config: &SimulationConfig, data: &[ClassData]) -> Result<Vec<Outcome>> {
    let g = data.len();
    let p = config.p;
    let total: usize = data.iter().map(ClassData::n).sum();
    let target = scalar_target(&pooled_covariance(data), ScalarTarget::InverseMeanEigenvalue)?;
    let targets = vec![target.clone(); g];

    let pooled_rows = DMatrix::from_fn(total, p, {
        let offsets: Vec<(usize, usize)> = data.iter().enumerate().flat_map(|(c, d)| (0..d.n()).map(move |i| (c, i))).collect();
        move |r, j| data[offsets[r].0].samples().expect("simulated data has samples")[(offsets[r].1, j)]
    });
    let pooled_data = vec![ClassData::from_centred_samples(pooled_rows)?];
    let pooled_penalty = select(&PenaltyTemplate::shared(1), &pooled_data, &[target.clone()], &config.method, &[vec![1.0]], config.budget)?;
    let pooled_lambda = pooled_penalty.get(0, 0);
    let pooled = ridge_update(pooled_data[0].covariance(), &target, pooled_lambda / total as f64)?;

    let separate_labels: Vec<Vec<String>> =
        (0..g).map(|i| (0..g).map(|j| if i == j { format!("lambda_{}", i + 1) } else { "0".into() }).collect()).collect();
    let separate_template = PenaltyTemplate::from_labels(&separate_labels)?;
    let separate_penalty = select(&separate_template, data, &targets, &config.method, &[vec![1.0; g]], config.budget)?;
    let separate = lenient_fit(data, &separate_penalty, &targets)?;

    let separate_ridge: Vec<f64> = (0..g).map(|c| separate_penalty.get(c, c)).collect();
    let share = pooled_lambda / g as f64;
    let mean_ridge = separate_ridge.iter().sum::<f64>() / g as f64;
    let restricted_starts = vec![vec![mean_ridge, 0.0], vec![share, pooled_lambda], vec![1.0, 1.0]];
    let restricted_penalty = select(&PenaltyTemplate::shared(g), data, &targets, &config.method, &restricted_starts, config.budget)?;
    let restricted = lenient_fit(data, &restricted_penalty, &targets)?;

    // The unrestricted model nests the restricted one, so its optimum is a start too.
    let unrestricted_starts = vec![
        [vec![restricted_penalty.get(0, 0); g], vec![restricted_penalty.get(0, 1)]].concat(),
        [separate_ridge.clone(), vec![0.0]].concat(),
        [vec![share; g], vec![pooled_lambda]].concat(),
    ];
    let unrestricted_penalty =
        select(&PenaltyTemplate::class_specific(g), data, &targets, &config.method, &unrestricted_starts, config.budget)?;
    let unrestricted = lenient_fit(data, &unrestricted_penalty, &targets)?;

    let pooled_matrix = PenaltyMatrix::diagonal(&vec![pooled_lambda; 1])?;
    Ok(vec![
        Outcome { estimator: "fused_unrestricted", estimates: unrestricted.estimates, penalty: unrestricted_penalty },
        Outcome { estimator: "fused_restricted", estimates: restricted.estimates, penalty: restricted_penalty },
        Outcome { estimator: "separate", estimates: separate.estimates, penalty: separate_penalty },
        Outcome { estimator: "pooled", estimates: vec![pooled; g], penalty: pooled_matrix },
    ])
}

/// Shared-penalty fused estimator `λI + λ_f(J−I)` under each requested target.
fn target_comparison(
    config: &SimulationConfig,
    data: &[ClassData],
    truths: &[SymMatrix],
    kinds: &[(&'static str, TargetKind)],
) -> Result<Vec<Outcome>> {
    let g = data.len();
    let template = PenaltyTemplate::shared(g);
    let pooled = pooled_covariance(data);
    kinds
        .iter()
        .map(|&(name, kind)| {
            let targets: Vec<SymMatrix> = match kind {
                TargetKind::Zero => vec![SymMatrix::zeros(config.p); g],
                TargetKind::Scalar => vec![scalar_target(&pooled, ScalarTarget::InverseMeanEigenvalue)?; g],
                TargetKind::Truth => truths.to_vec(),
            };
            let penalty = select(&template, data, &targets, &config.method, &[vec![1.0, 1.0]], config.budget)?;
            let fitted = lenient_fit(data, &penalty, &targets)?;
            Ok(Outcome { estimator: name, estimates: fitted.estimates, penalty })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum TargetKind {
    Zero,
    Scalar,
    Truth,
}

fn run_replicate(config: &SimulationConfig, latent: Option<&SymMatrix>, replicate: usize) -> Result<Vec<ResultRow>> {
    let seed = config.replicate_seed(replicate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Replicate { truths, data } = draw_replicate(config, latent, &mut rng)?;
    let outcomes = match config.scenario {
        ScenarioId::OneA | ScenarioId::OneB => fusion_comparison(config, &data)?,
        ScenarioId::Two => target_comparison(
            config,
            &data,
            &truths,
            &[("fused_target_zero", TargetKind::Zero), ("fused_target_scalar", TargetKind::Scalar), ("fused_target_truth", TargetKind::Truth)],
        )?,
        ScenarioId::Three => target_comparison(
            config,
            &data,
            &truths,
            &[("fused_target_zero", TargetKind::Zero), ("fused_target_scalar", TargetKind::Scalar)],
        )?,
        ScenarioId::Four => target_comparison(config, &data, &truths, &[("fused", TargetKind::Scalar)])?,
    };
    let mut rows = Vec::new();
    for outcome in outcomes {
        let penalty = upper_triangle(&outcome.penalty);
        for (class, (estimate, truth)) in outcome.estimates.iter().zip(&truths).enumerate() {
            rows.push(ResultRow {
                scenario: config.scenario,
                replicate,
                estimator: outcome.estimator.to_string(),
                class: class + 1,
                frobenius_loss: frobenius_loss(estimate, truth)?,
                quadratic_loss: quadratic_loss(estimate, truth)?,
                penalty: penalty.clone(),
                seed,
            });
        }
    }
    Ok(rows)
}

/// Runs every replicate of a scenario. Replicates run in parallel with seeds
/// derived from the configuration seed, so the table depends only on the
/// configuration.
pub fn run_scenario(config: &SimulationConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let latent = match config.truth {
        TruthModel::Topology(topology) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            Some(topology_precision(config.p, topology, config.edge_value, &mut rng)?.precision)
        }
        TruthModel::Banded => None,
    };
    let per_replicate: Vec<Result<Vec<ResultRow>>> =
        (0..config.replicates).into_par_iter().map(|r| run_replicate(config, latent.as_ref(), r)).collect();
    let mut rows = Vec::new();
    for r in per_replicate {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSummary {
    pub estimator: String,
    /// `None` when classes are pooled together.
    pub class: Option<usize>,
    pub frobenius_quartiles: [f64; 3],
    pub quadratic_quartiles: [f64; 3],
}

/// Lower quartile, median and upper quartile with linear interpolation.
pub fn quartiles(values: &[f64]) -> [f64; 3] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    [at(0.25), at(0.5), at(0.75)]
}

/// Quartiles of both losses per estimator, per class or with classes merged.
pub fn summarize(rows: &[ResultRow], per_class: bool) -> Vec<LossSummary> {
    let mut keys: Vec<(String, Option<usize>)> = Vec::new();
    for r in rows {
        let key = (r.estimator.clone(), per_class.then_some(r.class));
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(estimator, class)| {
            let selected: Vec<&ResultRow> =
                rows.iter().filter(|r| r.estimator == estimator && class.is_none_or(|c| r.class == c)).collect();
            let frob: Vec<f64> = selected.iter().map(|r| r.frobenius_loss).collect();
            let quad: Vec<f64> = selected.iter().map(|r| r.quadratic_loss).collect();
            LossSummary { estimator, class, frobenius_quartiles: quartiles(&frob), quadratic_quartiles: quartiles(&quad) }
        })
        .collect()
}

/// Per-replicate `[Frobenius, quadratic]` losses of one estimator, summed over
/// classes, in replicate order.
pub fn total_losses(rows: &[ResultRow], estimator: &str) -> Vec<[f64; 2]> {
    let mut totals: Vec<(usize, [f64; 2])> = Vec::new();
    for r in rows.iter().filter(|r| r.estimator == estimator) {
        match totals.iter_mut().find(|(rep, _)| *rep == r.replicate) {
            Some((_, t)) => {
                t[0] += r.frobenius_loss;
                t[1] += r.quadratic_loss;
            }
            None => totals.push((r.replicate, [r.frobenius_loss, r.quadratic_loss])),
        }
    }
    totals.sort_by_key(|(rep, _)| *rep);
    totals.into_iter().map(|(_, t)| t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_examples() {
        let b = banded_precision(3, 1).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        assert_eq!(b.as_matrix(), &expected);
        assert_eq!(banded_precision(4, 0).unwrap(), SymMatrix::identity(4));
        let wide = banded_precision(30, 15).unwrap();
        assert!(spd_check(&wide).unwrap().is_pd);
        assert_eq!(wide[(0, 15)], 1.0);
        assert_eq!(wide[(0, 16)], 0.0);
        assert!(spd_check(&banded_precision(10, 15).unwrap()).unwrap().is_pd);
    }

    #[test]
    fn ring_lattice_without_rewiring() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = topology_precision(10, Topology::SmallWorld { neighbors: 4, rewire: 0.0 }, 0.1, &mut rng).unwrap();
        assert_eq!(t.edges.len(), 20);
        for &(i, j) in &t.edges {
            let d = j - i;
            assert!(d <= 2 || d >= 8);
        }
    }

    #[test]
    fn scale_free_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = topology_precision(10, Topology::scale_free(), 0.1, &mut rng).unwrap();
        assert_eq!(t.edges.len(), 9);
    }

    #[test]
    fn default_topologies_are_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for topology in [Topology::small_world(), Topology::scale_free(), Topology::ScaleFree { attach: 3 }] {
            let t = topology_precision(50, topology, 0.1, &mut rng).unwrap();
            assert!(spd_check(&t.precision).unwrap().is_pd);
            for i in 0..50 {
                for j in (i + 1)..50 {
                    let present = t.edges.contains(&(i, j));
                    assert_eq!(t.precision[(i, j)] != 0.0, present);
                }
            }
        }
        let dense = topology_precision(20, Topology::SmallWorld { neighbors: 2, rewire: 0.0 }, 0.6, &mut rng).unwrap();
        assert!(dense.diagonal_inflation > 0.0);
        assert!(spd_check(&dense.precision).unwrap().is_pd);
    }

    #[test]
    fn inverse_wishart_concentrates_and_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let i = SymMatrix::identity(4);
        let draw = sample_inverse_wishart(&i, 1e6, &mut rng).unwrap();
        assert!((draw.as_matrix() - i.as_matrix()).norm() < 0.01 * 2.0);
        let phi = banded_precision(4, 1).unwrap();
        let target = spd_inverse(&phi).unwrap();
        let mut mean = DMatrix::zeros(4, 4);
        for _ in 0..2000 {
            let d = sample_inverse_wishart(&phi, 20.0, &mut rng).unwrap();
            assert!(spd_check(&d).unwrap().is_pd);
            mean += d.as_matrix() / 2000.0;
        }
        assert!((mean - target.as_matrix()).norm() / target.frobenius_norm() < 0.05);
        assert!(sample_inverse_wishart(&phi, 5.0, &mut rng).is_err());
    }

    #[test]
    fn mvn_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let i = SymMatrix::identity(3);
        let y = sample_mvn(20_000, &i, &mut rng).unwrap();
        let s = y.transpose() * &y / 20_000.0;
        assert!((s - DMatrix::identity(3, 3)).amax() < 0.05);
        let one = sample_mvn(1, &i, &mut rng).unwrap();
        assert_eq!(one.nrows(), 1);
        assert!(one.iter().all(|v| v.is_finite()));
        let a = sample_mvn(5, &i, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_mvn(5, &i, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_mvn(2, &SymMatrix::from_diagonal(&[1.0, -1.0]), &mut rng).is_err());
    }

    #[test]
    fn scenario_ids_parse() {
        assert_eq!("1b".parse::<ScenarioId>().unwrap(), ScenarioId::OneB);
        let err = "7".parse::<ScenarioId>().unwrap_err().to_string();
        assert!(err.contains("1a, 1b, 2, 3, 4"));
    }

    #[test]
    fn quartile_interpolation() {
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]), [2.0, 3.0, 4.0]);
        assert_eq!(quartiles(&[4.0, 1.0]), [1.75, 2.5, 3.25]);
    }

    #[test]
    fn small_scenario_is_reproducible() {
        let mut config = SimulationConfig::preset(ScenarioId::OneB, vec![8, 8]);
        config.p = 6;
        config.bands = vec![3, 1];
        config.replicates = 2;
        config.budget = 15;
        config.method = CvMethod::FusedKullbackLeibler;
        let a = run_scenario(&config).unwrap();
        assert_eq!(a.len(), 4 * 2 * 2);
        assert_eq!(a, run_scenario(&config).unwrap());
        let summary = summarize(&a, false);
        assert_eq!(summary.len(), 4);
        let totals = total_losses(&a, "pooled");
        assert_eq!(totals.len(), 2);
        let first: f64 = a.iter().filter(|r| r.estimator == "pooled" && r.replicate == 0).map(|r| r.frobenius_loss).sum();
        assert_eq!(totals[0][0], first);
    }

    #[test]
    fn topology_scenario_runs() {
        let mut config = SimulationConfig::preset(ScenarioId::Three, vec![6, 6, 6]);
        config.p = 8;
        config.replicates = 1;
        config.budget = 10;
        config.method = CvMethod::SingleUpdateLeaveOneOut;
        let rows = run_scenario(&config).unwrap();
        assert_eq!(rows.len(), 2 * 3);
        assert!(rows.iter().all(|r| r.penalty.len() == 6));
    }
}
