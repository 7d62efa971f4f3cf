//! Block coordinate ascent for the fused ridge problem, its closed-form special
//! cases, and stationarity diagnostics.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_loglik, ridge_update, spd_inverse, sym_eigen, SymMatrix};
use crate::penalty::{fused_penalty_value, PenaltyMatrix};

/// Fusion penalties at or above this are treated as infinite when every class
/// shares one target.
pub const POOLED_FUSION_THRESHOLD: f64 = 1e8;

/// The data of one class: its sample covariance (with `1/n` scaling), sample
/// count, and optionally the column-centred samples themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    covariance: SymMatrix,
    n: usize,
    samples: Option<DMatrix<f64>>,
}

impl ClassData {
    /// Centres the columns of `y` (rows are samples) and stores both the centred
    /// samples and `YᵀY/n`.
    pub fn from_samples(y: &DMatrix<f64>) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::input("class data must have at least one row and column"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("class data has non-finite values"));
        }
        let n = y.nrows();
        let mut centred = y.clone();
        for mut col in centred.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let covariance = SymMatrix::symmetrize(centred.transpose() * &centred / n as f64);
        Ok(ClassData { covariance, n, samples: Some(centred) })
    }

    /// Uses `y` as given, without centring. Intended for data already centred
    /// elsewhere, such as resampled rows of centred classes.
    pub fn from_centred_samples(y: DMatrix<f64>) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::input("class data must have at least one row and column"));
        }
        let n = y.nrows();
        let covariance = SymMatrix::symmetrize(y.transpose() * &y / n as f64);
        Ok(ClassData { covariance, n, samples: Some(y) })
    }

    /// Summary-only class data; cross-validation and permutation tests need samples.
    pub fn from_covariance(covariance: SymMatrix, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("sample count must be positive"));
        }
        let (d, _) = sym_eigen(&covariance)?;
        let floor = -1e-10 * d.amax().max(1e-12);
        if d[d.len() - 1] < floor {
            return Err(Error::input(format!(
                "sample covariance is not positive semi-definite (eigenvalue {:.3e})",
                d[d.len() - 1]
            )));
        }
        Ok(ClassData { covariance, n, samples: None })
    }

    pub(crate) fn from_parts_unchecked(covariance: SymMatrix, n: usize, samples: Option<DMatrix<f64>>) -> Self {
        ClassData { covariance, n, samples }
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn samples(&self) -> Option<&DMatrix<f64>> {
        self.samples.as_ref()
    }
}

/// `S_• = Σ_g n_g S_g / n_•`.
pub fn pooled_covariance(data: &[ClassData]) -> SymMatrix {
    let total: usize = data.iter().map(ClassData::n).sum();
    let mut acc = DMatrix::zeros(data[0].dim(), data[0].dim());
    for d in data {
        acc += d.covariance.as_matrix() * (d.n as f64 / total as f64);
    }
    SymMatrix::symmetrize(acc)
}

/// How the fusion terms enter a single-class update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateScheme {
    /// Target shift when the effective penalty exceeds 1 or the shifted
    /// covariance would be huge; covariance shift otherwise.
    #[default]
    Auto,
    /// Moves the fusion terms into the covariance, keeping the class target.
    CovarianceShift,
    /// Moves the fusion terms into the target, keeping the class covariance.
    TargetShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    /// Per-class closed form (no fusion).
    ClosedForm,
    /// Pooled closed form (infinite fusion, common target).
    Pooled,
    /// Block coordinate ascent.
    CoordinateAscent,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence threshold on the largest relative squared Frobenius change per sweep.
    pub tolerance: f64,
    pub max_iter: usize,
    pub scheme: UpdateScheme,
    /// Use the closed forms for diagonal and effectively infinite fusion penalties.
    pub special_cases: bool,
    /// Starting estimates; defaults to `p/tr(S_•)·I` for every class.
    pub initial: Option<Vec<SymMatrix>>,
    /// Class sweep order; defaults to `0..G`.
    pub order: Option<Vec<usize>>,
    /// Record the penalized log-likelihood after every sweep.
    pub record_objective: bool,
    /// Anderson-accelerate the sweeps, keeping an accelerated point only if it
    /// has a higher penalized log-likelihood than the plain sweep.
    pub accelerate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-18,
            max_iter: 1000,
            scheme: UpdateScheme::Auto,
            special_cases: true,
            initial: None,
            order: None,
            record_objective: false,
            accelerate: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrecisionEstimates {
    pub estimates: Vec<SymMatrix>,
    pub iterations: usize,
    pub final_relative_change: f64,
    pub kkt_residuals: Vec<f64>,
    pub wall_time: Duration,
    pub method: FitMethod,
    /// Penalized log-likelihood after each sweep, when requested.
    pub objective_trace: Vec<f64>,
}

/// Checks class data, penalty and targets for mutual consistency and rejects
/// indefinite targets.
pub fn validate_problem(data: &[ClassData], penalty: &PenaltyMatrix, targets: &[SymMatrix]) -> Result<()> {
    let g = penalty.classes();
    if data.len() != g || targets.len() != g {
        return Err(Error::input(format!(
            "penalty has {g} classes but {} data sets and {} targets were given",
            data.len(),
            targets.len()
        )));
    }
    let p = data[0].dim();
    if data.iter().any(|d| d.dim() != p) || targets.iter().any(|t| t.dim() != p) {
        return Err(Error::input("classes and targets must share one dimension"));
    }
    for (g, t) in targets.iter().enumerate() {
        let (d, _) = sym_eigen(t)?;
        let min = d[d.len() - 1];
        if min < -1e-10 * d.amax().max(1.0) {
            return Err(Error::input(format!(
                "target of class {g} is indefinite (eigenvalue {min:.3e})"
            )));
        }
    }
    Ok(())
}

/// Effective `(S̄, T̄, λ̄)` for updating class `g0` under the given scheme.
fn shifted_problem(
    g0: usize,
    penalty: &PenaltyMatrix,
    omegas: &[SymMatrix],
    targets: &[SymMatrix],
    data: &[ClassData],
    scheme: UpdateScheme,
) -> (SymMatrix, SymMatrix, f64) {
    let n = data[g0].n as f64;
    let row_sum = penalty.row_sum(g0);
    let lambda_bar = row_sum / n;
    let s = data[g0].covariance.as_matrix();
    let mut fusion = DMatrix::zeros(s.nrows(), s.ncols());
    let mut fused = false;
    for g in (0..penalty.classes()).filter(|&g| g != g0) {
        let lambda = penalty.get(g, g0);
        if lambda != 0.0 {
            fused = true;
            fusion += (omegas[g].as_matrix() - targets[g].as_matrix()) * lambda;
        }
    }
    if !fused {
        return (data[g0].covariance.clone(), targets[g0].clone(), lambda_bar);
    }
    let covariance_shift = || SymMatrix::symmetrize(s - &fusion / n);
    let target_shift = || {
        (
            data[g0].covariance.clone(),
            SymMatrix::symmetrize(targets[g0].as_matrix() + &fusion / row_sum),
            lambda_bar,
        )
    };
    match scheme {
        UpdateScheme::CovarianceShift => (covariance_shift(), targets[g0].clone(), lambda_bar),
        UpdateScheme::TargetShift => target_shift(),
        UpdateScheme::Auto => {
            if lambda_bar > 1.0 {
                return target_shift();
            }
            let s_bar = covariance_shift();
            if s_bar.amax() > 1e6 * data[g0].covariance.frobenius_norm() {
                target_shift()
            } else {
                (s_bar, targets[g0].clone(), lambda_bar)
            }
        }
    }
}

/// Maximizes the penalized log-likelihood in the coordinate of class `g0` with
/// every other class held at `omegas`.
pub fn class_update(
    g0: usize,
    penalty: &PenaltyMatrix,
    omegas: &[SymMatrix],
    targets: &[SymMatrix],
    data: &[ClassData],
    scheme: UpdateScheme,
) -> Result<SymMatrix> {
    if g0 >= penalty.classes() {
        return Err(Error::input(format!("class index {g0} out of range")));
    }
    let (s_bar, t_bar, lambda_bar) = shifted_problem(g0, penalty, omegas, targets, data, scheme);
    ridge_update(&s_bar, &t_bar, lambda_bar)
}

/// Non-fused estimate of a class: `ridge_update(S_g, T_g, λ_gg/n_g)`.
pub fn closed_form_class(data: &ClassData, target: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    ridge_update(&data.covariance, target, ridge / data.n as f64)
}

/// The estimate every class converges to as all fusion penalties grow without
/// bound: `ridge_update(S_•, T, tr(Λ)/n_•)`.
pub fn pooled_estimate(data: &[ClassData], penalty: &PenaltyMatrix, target: &SymMatrix) -> Result<SymMatrix> {
    if data.is_empty() {
        return Err(Error::input("no classes given"));
    }
    let total: usize = data.iter().map(ClassData::n).sum();
    ridge_update(&pooled_covariance(data), target, penalty.trace() / total as f64)
}

/// The default starting point `p/tr(S_•)·I`.
pub fn initial_estimate(data: &[ClassData]) -> SymMatrix {
    let pooled = pooled_covariance(data);
    let p = pooled.dim();
    let tr = pooled.trace();
    let alpha = if tr > 0.0 { p as f64 / tr } else { 1.0 };
    SymMatrix::scaled_identity(p, alpha)
}

/// Penalized log-likelihood `Σ_g n_g(ln|Ω_g| − tr(S_gΩ_g)) − penalty`.
pub fn objective(
    omegas: &[SymMatrix],
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
) -> Result<f64> {
    let mut loglik = 0.0;
    for (o, d) in omegas.iter().zip(data) {
        loglik += gaussian_loglik(o, &d.covariance, d.n)?;
    }
    Ok(loglik - fused_penalty_value(omegas, penalty, targets)?)
}

/// Frobenius norm of the scaled gradient
/// `Ω_g^{-1} − S_g − (λ_{g•}/n_g)(Ω_g−T_g) + Σ_{g'≠g}(λ_{g'g}/n_g)(Ω_{g'}−T_{g'})` per class.
pub fn kkt_residuals(
    omegas: &[SymMatrix],
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
) -> Result<Vec<f64>> {
    let g_count = penalty.classes();
    (0..g_count)
        .map(|g| {
            let n = data[g].n as f64;
            let mut r = spd_inverse(&omegas[g])?.into_inner() - data[g].covariance.as_matrix();
            r -= (omegas[g].as_matrix() - targets[g].as_matrix()) * (penalty.row_sum(g) / n);
            for h in (0..g_count).filter(|&h| h != g) {
                let lambda = penalty.get(h, g);
                if lambda != 0.0 {
                    r += (omegas[h].as_matrix() - targets[h].as_matrix()) * (lambda / n);
                }
            }
            Ok(r.norm())
        })
        .collect()
}

fn relative_change(new: &SymMatrix, old: &SymMatrix) -> f64 {
    (new.as_matrix() - old.as_matrix()).norm_squared() / new.as_matrix().norm_squared().max(1e-12)
}

/// Shifts every class by one common matrix, a damped Newton step on the
/// penalized log-likelihood with the fusion terms left unchanged. Single-class
/// updates move this direction very slowly once fusion dominates. Returns the
/// largest relative change if the step was taken.
fn common_shift(
    omegas: &mut Vec<SymMatrix>,
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
) -> Result<Option<f64>> {
    let p = omegas[0].dim();
    let total: f64 = data.iter().map(|d| d.n as f64).sum();
    let mut gradient = DMatrix::zeros(p, p);
    let mut mean_sigma = DMatrix::zeros(p, p);
    for (g, (o, d)) in omegas.iter().zip(data).enumerate() {
        let sigma = spd_inverse(o)?.into_inner();
        gradient += (&sigma - d.covariance.as_matrix()) * d.n as f64
            - (o.as_matrix() - targets[g].as_matrix()) * penalty.get(g, g);
        mean_sigma += sigma * (d.n as f64 / total);
    }
    let (values, vectors) = sym_eigen(&SymMatrix::symmetrize(mean_sigma))?;
    let rotated = vectors.transpose() * gradient * &vectors;
    let curvature = penalty.trace();
    let scaled = DMatrix::from_fn(p, p, |i, j| rotated[(i, j)] / (total * values[i] * values[j] + curvature));
    let shift = &vectors * scaled * vectors.transpose();
    let current = objective(omegas, data, penalty, targets)?;
    let mut t = 1.0;
    while t >= 1.0 / 64.0 {
        let candidate: Vec<SymMatrix> =
            omegas.iter().map(|o| SymMatrix::symmetrize(o.as_matrix() + &shift * t)).collect();
        if objective(&candidate, data, penalty, targets).is_ok_and(|value| value > current) {
            let change = candidate.iter().zip(omegas.iter()).map(|(new, old)| relative_change(new, old)).fold(0.0, f64::max);
            *omegas = candidate;
            return Ok(Some(change));
        }
        t /= 2.0;
    }
    Ok(None)
}

/// Moves the iterate `t` further along the last sweep's step, with `t` the
/// remaining length of a geometric series of contraction `ratio`, halving `t`
/// until the objective increases. Returns whether a step was taken.
fn extrapolate(
    omegas: &mut Vec<SymMatrix>,
    step: &[DMatrix<f64>],
    ratio: f64,
    current: f64,
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
) -> bool {
    if !(0.5..1.0).contains(&ratio) {
        return false;
    }
    let mut t = (ratio / (1.0 - ratio)).min(1e8);
    while t >= 1.0 {
        let candidate: Vec<SymMatrix> =
            omegas.iter().zip(step).map(|(o, d)| SymMatrix::symmetrize(o.as_matrix() + d * t)).collect();
        if objective(&candidate, data, penalty, targets).is_ok_and(|value| value > current) {
            *omegas = candidate;
            return true;
        }
        t /= 2.0;
    }
    false
}

/// Number of past sweeps kept by the Anderson acceleration.
const ACCELERATION_MEMORY: usize = 5;

/// Anderson acceleration of the sweep map `x ↦ sweep(x)`, safeguarded so that
/// an accelerated point is only used if it beats the plain sweep.
struct Accelerator {
    residual_diffs: Vec<DVector<f64>>,
    sweep_diffs: Vec<DVector<f64>>,
    last: Option<(DVector<f64>, DVector<f64>)>,
}

impl Accelerator {
    fn new() -> Self {
        Accelerator { residual_diffs: Vec::new(), sweep_diffs: Vec::new(), last: None }
    }

    fn flatten(omegas: &[SymMatrix]) -> DVector<f64> {
        DVector::from_iterator(omegas.iter().map(|o| o.len()).sum(), omegas.iter().flat_map(|o| o.iter().copied()))
    }

    fn reset(&mut self) {
        self.residual_diffs.clear();
        self.sweep_diffs.clear();
        self.last = None;
    }

    /// Given the iterate before a sweep and the swept iterate, proposes the
    /// next iterate, or `None` if there is not enough history.
    fn propose(&mut self, before: &[SymMatrix], swept: &[SymMatrix]) -> Option<Vec<SymMatrix>> {
        let mapped = Self::flatten(swept);
        let residual = &mapped - Self::flatten(before);
        if let Some((last_mapped, last_residual)) = self.last.take() {
            self.residual_diffs.push(&residual - last_residual);
            self.sweep_diffs.push(&mapped - last_mapped);
            if self.residual_diffs.len() > ACCELERATION_MEMORY {
                self.residual_diffs.remove(0);
                self.sweep_diffs.remove(0);
            }
        }
        self.last = Some((mapped.clone(), residual.clone()));
        if self.residual_diffs.is_empty() {
            return None;
        }
        let diffs = DMatrix::from_columns(&self.residual_diffs);
        let gamma = diffs.svd(true, true).solve(&residual, 1e-12).ok()?;
        let proposal = mapped - DMatrix::from_columns(&self.sweep_diffs) * gamma;
        if !proposal.iter().all(|v| v.is_finite()) {
            return None;
        }
        let p = swept[0].dim();
        Some(
            proposal
                .as_slice()
                .chunks(p * p)
                .map(|block| SymMatrix::symmetrize(DMatrix::from_column_slice(p, p, block)))
                .collect(),
        )
    }
}

/// Jointly estimates all class precision matrices.
pub fn fit(
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<PrecisionEstimates> {
    validate_problem(data, penalty, targets)?;
    fit_validated(data, penalty, targets, options)
}

/// [`fit`] without the input checks, for callers that refit one validated
/// problem many times.
pub(crate) fn fit_validated(
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<PrecisionEstimates> {
    if !(options.tolerance > 0.0) {
        return Err(Error::input("convergence tolerance must be positive"));
    }
    let start = Instant::now();
    let g_count = penalty.classes();
    let finish = |estimates: Vec<SymMatrix>, iterations, change, method, trace| -> Result<PrecisionEstimates> {
        let kkt_residuals = kkt_residuals(&estimates, data, penalty, targets)?;
        Ok(PrecisionEstimates {
            estimates,
            iterations,
            final_relative_change: change,
            kkt_residuals,
            wall_time: start.elapsed(),
            method,
            objective_trace: trace,
        })
    };

    if options.special_cases {
        if penalty.is_diagonal() {
            let estimates = (0..g_count)
                .map(|g| closed_form_class(&data[g], &targets[g], penalty.get(g, g)))
                .collect::<Result<Vec<_>>>()?;
            return finish(estimates, 0, 0.0, FitMethod::ClosedForm, Vec::new());
        }
        let common_target = targets.iter().all(|t| t == &targets[0]);
        if common_target && penalty.min_fusion().is_some_and(|f| f >= POOLED_FUSION_THRESHOLD) {
            let pooled = pooled_estimate(data, penalty, &targets[0])?;
            return finish(vec![pooled; g_count], 0, 0.0, FitMethod::Pooled, Vec::new());
        }
    }

    let order: Vec<usize> = match &options.order {
        Some(order) => {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..g_count).collect::<Vec<_>>() {
                return Err(Error::input("sweep order must be a permutation of the classes"));
            }
            order.clone()
        }
        None => (0..g_count).collect(),
    };
    let mut omegas = match &options.initial {
        Some(init) => {
            if init.len() != g_count || init.iter().any(|o| o.dim() != data[0].dim()) {
                return Err(Error::input("initial estimates do not match the problem"));
            }
            init.clone()
        }
        None => vec![initial_estimate(data); g_count],
    };
    let mut trace = Vec::new();
    let mut change = f64::INFINITY;
    let mut accelerator = Accelerator::new();
    let mut previous_step: Option<f64> = None;
    let fused = !penalty.is_diagonal();
    for iteration in 1..=options.max_iter {
        change = 0.0;
        let before = options.accelerate.then(|| omegas.clone());
        for &g in &order {
            let updated = class_update(g, penalty, &omegas, targets, data, options.scheme)?;
            change = f64::max(change, relative_change(&updated, &omegas[g]));
            omegas[g] = updated;
        }
        if fused {
            if let Some(shifted) = common_shift(&mut omegas, data, penalty, targets)? {
                change = change.max(shifted);
            }
        }
        if options.record_objective {
            trace.push(objective(&omegas, data, penalty, targets)?);
        }
        if change < options.tolerance {
            return finish(omegas, iteration, change, FitMethod::CoordinateAscent, trace);
        }
        if let Some(before) = before {
            let swept = objective(&omegas, data, penalty, targets)?;
            let proposal = accelerator.propose(&before, &omegas);
            let rejected = proposal.is_some();
            let accelerated = proposal.filter(|candidate| {
                objective(candidate, data, penalty, targets).is_ok_and(|v| v > swept)
            });
            if let Some(candidate) = accelerated {
                omegas = candidate;
                previous_step = None;
            } else {
                if rejected {
                    accelerator.reset();
                }
                let step: Vec<DMatrix<f64>> =
                    omegas.iter().zip(&before).map(|(new, old)| new.as_matrix() - old.as_matrix()).collect();
                let norm = step.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
                previous_step = match previous_step {
                    Some(prev) if extrapolate(&mut omegas, &step, norm / prev, swept, data, penalty, targets) => None,
                    _ => Some(norm),
                };
            }
        }
    }
    let last = finish(omegas, options.max_iter, change, FitMethod::CoordinateAscent, trace)?;
    Err(Error::Convergence {
        iterations: options.max_iter,
        relative_change: change,
        last: Box::new(last),
    })
}
