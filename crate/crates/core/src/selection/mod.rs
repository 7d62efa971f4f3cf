//! Penalty selection by cross-validation and its fast approximations.

pub mod nelder_mead;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{class_update, fit_validated, validate_problem, ClassData, FitOptions, PrecisionEstimates};
use crate::linalg::{log_det, SymMatrix};
use crate::penalty::{ParamKind, PenaltyMatrix, PenaltyTemplate};

pub use nelder_mead::{NelderMeadOptions, NelderMeadResult};

/// Offset of the shifted-log transform used for fusion penalties, so that a
/// fusion penalty can reach exactly zero.
pub const FUSION_SHIFT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMethod {
    /// K-fold cross-validation with a stratified random fold plan.
    KFold { folds: usize, seed: u64 },
    /// Leave-one-out with a full refit per left-out sample.
    LeaveOneOut,
    /// Leave-one-out where only the class of the left-out sample is updated, once.
    SingleUpdateLeaveOneOut,
    /// Closed-form approximation to leave-one-out.
    FusedKullbackLeibler,
}

impl CvMethod {
    pub fn name(&self) -> &'static str {
        match self {
            CvMethod::KFold { .. } => "kcv",
            CvMethod::LeaveOneOut => "loocv",
            CvMethod::SingleUpdateLeaveOneOut => "sloocv",
            CvMethod::FusedKullbackLeibler => "fkl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvScore {
    pub value: f64,
    pub method: CvMethod,
    pub folds_evaluated: usize,
    pub per_fold_terms: Option<Vec<f64>>,
}

/// Per-class assignment of samples to folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: usize,
    assignments: Vec<Vec<usize>>,
    seed: Option<u64>,
}

impl FoldPlan {
    /// Shuffles each class with its own seeded stream and deals samples to folds
    /// in turn, so per-class fold sizes differ by at most one.
    pub fn stratified(class_sizes: &[usize], folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::Fold(format!("need at least 2 folds, got {folds}")));
        }
        let assignments = class_sizes
            .iter()
            .enumerate()
            .map(|(g, &n)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(g as u64);
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let mut fold_of = vec![0; n];
                for (slot, &i) in order.iter().enumerate() {
                    fold_of[i] = slot % folds;
                }
                fold_of
            })
            .collect();
        Ok(FoldPlan { folds, assignments, seed: Some(seed) })
    }

    /// Fold `k` holds sample `k` of every class that has one; `K = max n_g`.
    pub fn leave_one_out(class_sizes: &[usize]) -> Result<Self> {
        let folds = class_sizes.iter().copied().max().unwrap_or(0);
        Self::from_assignments(class_sizes.iter().map(|&n| (0..n).collect()).collect(), folds)
    }

    pub fn from_assignments(assignments: Vec<Vec<usize>>, folds: usize) -> Result<Self> {
        if folds < 2 {
            return Err(Error::Fold(format!("need at least 2 folds, got {folds}")));
        }
        if assignments.iter().flatten().any(|&k| k >= folds) {
            return Err(Error::Fold("fold index out of range".into()));
        }
        Ok(FoldPlan { folds, assignments, seed: None })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Indices of the class-`g` samples held out in fold `k`.
    pub fn held_out(&self, g: usize, k: usize) -> Vec<usize> {
        self.assignments[g].iter().enumerate().filter(|(_, &f)| f == k).map(|(i, _)| i).collect()
    }
}

fn require_samples(data: &[ClassData]) -> Result<Vec<&DMatrix<f64>>> {
    data.iter()
        .enumerate()
        .map(|(g, d)| {
            d.samples().ok_or_else(|| Error::input(format!("class {g} has no raw samples; cross-validation needs them")))
        })
        .collect()
}

/// Splits off the rows `held`. Both parts are centred on the training mean,
/// so held-out rows are not in the span of the training rows.
fn split(data: &ClassData, samples: &DMatrix<f64>, held: &[usize]) -> (ClassData, DMatrix<f64>) {
    let n = data.n();
    let kept = n - held.len();
    let mut scatter = data.covariance().as_matrix() * n as f64;
    let mut held_sum = DVector::zeros(samples.ncols());
    for &i in held {
        let y = samples.row(i).transpose();
        scatter -= &y * y.transpose();
        held_sum += y;
    }
    let mean = held_sum / -(kept as f64);
    scatter -= &mean * mean.transpose() * kept as f64;
    let held_rows = DMatrix::from_fn(held.len(), samples.ncols(), |r, j| samples[(held[r], j)] - mean[j]);
    let training = ClassData::from_parts_unchecked(SymMatrix::symmetrize(scatter / kept as f64), kept, None);
    (training, held_rows)
}

/// Held-out term `h·(−ln|Ω|) + Σ yᵀΩy` over the `h` rows of `held`.
fn held_out_term(omega: &SymMatrix, held: &DMatrix<f64>) -> Result<f64> {
    let quad: f64 = held.row_iter().map(|y| (y * omega.as_matrix()).dot(&y)).sum();
    Ok(-(held.nrows() as f64) * log_det(omega)? + quad)
}

/// Fits, falling back to the last iterate if the iteration cap is hit.
fn fit_lenient(
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<PrecisionEstimates> {
    match fit_validated(data, penalty, targets, options) {
        Err(Error::Convergence { last, iterations, .. }) => {
            log::debug!("cross-validation fit stopped after {iterations} sweeps");
            Ok(*last)
        }
        other => other,
    }
}

fn warm_options(options: &FitOptions, full: &PrecisionEstimates) -> FitOptions {
    FitOptions { initial: Some(full.estimates.clone()), record_objective: false, ..options.clone() }
}

/// K-fold cross-validated negative log-likelihood, refitting every class on
/// each training split and averaging `n_g^k[−ln|Ω̂_g^{¬k}| + tr(Ω̂_g^{¬k}S_g^k)]`
/// over `K·G` terms.
pub fn kcv_score(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    plan: &FoldPlan,
    options: &FitOptions,
) -> Result<CvScore> {
    validate_problem(data, penalty, targets)?;
    kcv_validated(penalty, data, targets, plan, options)
}

fn kcv_validated(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    plan: &FoldPlan,
    options: &FitOptions,
) -> Result<CvScore> {
    let samples = require_samples(data)?;
    if plan.assignments.len() != data.len()
        || plan.assignments.iter().zip(data).any(|(a, d)| a.len() != d.n())
    {
        return Err(Error::Fold("fold plan does not match the class sizes".into()));
    }
    let held: Vec<Vec<Vec<usize>>> =
        (0..plan.folds).map(|k| (0..data.len()).map(|g| plan.held_out(g, k)).collect()).collect();
    for (k, fold) in held.iter().enumerate() {
        for (g, h) in fold.iter().enumerate() {
            if h.len() >= data[g].n() {
                return Err(Error::Fold(format!("fold {k} leaves no training samples in class {g}")));
            }
        }
    }
    let full = fit_lenient(data, penalty, targets, options)?;
    let warm = warm_options(options, &full);
    let terms: Vec<Result<f64>> = held
        .par_iter()
        .map(|fold| {
            let (training, held_rows): (Vec<ClassData>, Vec<Option<DMatrix<f64>>>) = data
                .iter()
                .zip(fold)
                .zip(&samples)
                .map(|((d, h), y)| {
                    if h.is_empty() {
                        (d.clone(), None)
                    } else {
                        let (t, rows) = split(d, y, h);
                        (t, Some(rows))
                    }
                })
                .unzip();
            let fitted = fit_lenient(&training, penalty, targets, &warm)?;
            let mut term = 0.0;
            for (omega, rows) in fitted.estimates.iter().zip(&held_rows) {
                if let Some(rows) = rows {
                    term += held_out_term(omega, rows)?;
                }
            }
            Ok(term)
        })
        .collect();
    let terms = terms.into_iter().collect::<Result<Vec<f64>>>()?;
    let value = terms.iter().sum::<f64>() / (plan.folds * data.len()) as f64;
    Ok(CvScore {
        value,
        method: CvMethod::KFold { folds: plan.folds, seed: plan.seed.unwrap_or(0) },
        folds_evaluated: plan.folds,
        per_fold_terms: Some(terms),
    })
}

/// Every `(class, sample)` pair in class order.
fn leave_out_pairs(data: &[ClassData]) -> Result<Vec<(usize, usize)>> {
    for (g, d) in data.iter().enumerate() {
        if d.n() < 2 {
            return Err(Error::Fold(format!("class {g} has a single sample and cannot leave it out")));
        }
    }
    Ok(data.iter().enumerate().flat_map(|(g, d)| (0..d.n()).map(move |i| (g, i))).collect())
}

fn replace_class(data: &[ClassData], g: usize, replacement: ClassData) -> Vec<ClassData> {
    let mut out: Vec<ClassData> = data.to_vec();
    out[g] = replacement;
    out
}

/// Leave-one-out cross-validation with a full fused refit per left-out sample,
/// averaged over all `n_•` samples.
pub fn loocv_score(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<CvScore> {
    validate_problem(data, penalty, targets)?;
    loocv_validated(penalty, data, targets, options)
}

fn loocv_validated(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<CvScore> {
    let samples = require_samples(data)?;
    let pairs = leave_out_pairs(data)?;
    let full = fit_lenient(data, penalty, targets, options)?;
    let warm = warm_options(options, &full);
    let terms = pairs
        .par_iter()
        .map(|&(g, i)| {
            let (reduced, held) = split(&data[g], samples[g], &[i]);
            let training = replace_class(data, g, reduced);
            let fitted = fit_lenient(&training, penalty, targets, &warm)?;
            held_out_term(&fitted.estimates[g], &held)
        })
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(leave_one_out_score(terms, CvMethod::LeaveOneOut))
}

fn leave_one_out_score(terms: Vec<f64>, method: CvMethod) -> CvScore {
    let value = terms.iter().sum::<f64>() / terms.len() as f64;
    CvScore { value, method, folds_evaluated: terms.len(), per_fold_terms: Some(terms) }
}

/// Leave-one-out where, starting from the full-data fit, only the class of the
/// left-out sample receives a single block update.
pub fn sloocv_score(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<CvScore> {
    validate_problem(data, penalty, targets)?;
    sloocv_validated(penalty, data, targets, options)
}

fn sloocv_validated(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<CvScore> {
    let samples = require_samples(data)?;
    let pairs = leave_out_pairs(data)?;
    let full = fit_lenient(data, penalty, targets, options)?;
    let terms = pairs
        .par_iter()
        .map(|&(g, i)| {
            let (reduced, held) = split(&data[g], samples[g], &[i]);
            let training = replace_class(data, g, reduced);
            let updated = class_update(g, penalty, &full.estimates, targets, &training, options.scheme)?;
            held_out_term(&updated, &held)
        })
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(leave_one_out_score(terms, CvMethod::SingleUpdateLeaveOneOut))
}

/// Sign of the quartic correction in the approximate leave-one-out score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FklCorrection {
    /// `+λ̄_g yᵀ(Ω̂⁴−Ω̂³)y`.
    #[default]
    Plus,
    /// `−λ̄_g yᵀ(Ω̂⁴−Ω̂³)y`.
    Minus,
}

/// Approximate leave-one-out score from the full-data fit alone:
/// `(1/n_•)[−Σ_g n_g(ln|Ω̂_g| − tr(S_gΩ̂_g)) + Σ_{g,i} ζ_ig]` with
/// `ζ = yᵀ(Ω̂²−Ω̂)y ± λ̄_g yᵀ(Ω̂⁴−Ω̂³)y`. It is reported on the same scale as
/// [`loocv_score`].
pub fn fkl_score(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<CvScore> {
    fkl_score_with(penalty, data, targets, options, FklCorrection::Plus)
}

pub fn fkl_score_with(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
    correction: FklCorrection,
) -> Result<CvScore> {
    validate_problem(data, penalty, targets)?;
    fkl_validated(penalty, data, targets, options, correction)
}

fn fkl_validated(
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
    correction: FklCorrection,
) -> Result<CvScore> {
    let samples = require_samples(data)?;
    let full = fit_lenient(data, penalty, targets, options)?;
    let total: usize = data.iter().map(ClassData::n).sum();
    let mut value = 0.0;
    let mut terms = Vec::with_capacity(data.len());
    for (g, d) in data.iter().enumerate() {
        let omega = &full.estimates[g];
        let lambda_bar = penalty.row_sum(g) / d.n() as f64;
        let sign = match correction {
            FklCorrection::Plus => 1.0,
            FklCorrection::Minus => -1.0,
        };
        let loglik = crate::linalg::gaussian_loglik(omega, d.covariance(), d.n())?;
        let bias: f64 = bias_terms(omega, samples[g]).iter().map(|b| b.0 + sign * lambda_bar * b.1).sum();
        terms.push(-loglik + bias);
        value += -loglik + bias;
    }
    Ok(CvScore {
        value: value / total as f64,
        method: CvMethod::FusedKullbackLeibler,
        folds_evaluated: 1,
        per_fold_terms: Some(terms),
    })
}

/// Per-sample `(yᵀ(Ω²−Ω)y, yᵀ(Ω⁴−Ω³)y)` using two matrix–vector products.
fn bias_terms(omega: &SymMatrix, samples: &DMatrix<f64>) -> Vec<(f64, f64)> {
    samples
        .row_iter()
        .map(|row| {
            let y: DVector<f64> = row.transpose();
            let u = omega.as_matrix() * &y;
            let v = omega.as_matrix() * &u;
            let q1 = y.dot(&u);
            let q2 = u.dot(&u);
            let q3 = u.dot(&v);
            let q4 = v.dot(&v);
            (q2 - q1, q4 - q3)
        })
        .collect()
}

/// Evaluates the chosen criterion for one penalty matrix.
pub fn cv_score(
    method: &CvMethod,
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<CvScore> {
    validate_problem(data, penalty, targets)?;
    let plan = match method {
        CvMethod::KFold { folds, seed } => {
            Some(FoldPlan::stratified(&data.iter().map(ClassData::n).collect::<Vec<_>>(), *folds, *seed)?)
        }
        _ => None,
    };
    score_validated(method, plan.as_ref(), penalty, data, targets, options)
}

fn score_validated(
    method: &CvMethod,
    plan: Option<&FoldPlan>,
    penalty: &PenaltyMatrix,
    data: &[ClassData],
    targets: &[SymMatrix],
    options: &FitOptions,
) -> Result<CvScore> {
    match method {
        CvMethod::KFold { .. } => kcv_validated(penalty, data, targets, plan.expect("plan built for k-fold"), options),
        CvMethod::LeaveOneOut => loocv_validated(penalty, data, targets, options),
        CvMethod::SingleUpdateLeaveOneOut => sloocv_validated(penalty, data, targets, options),
        CvMethod::FusedKullbackLeibler => fkl_validated(penalty, data, targets, options, FklCorrection::Plus),
    }
}

/// Maps optimizer coordinates to penalty values: `exp(x)` for ridge parameters
/// and `max(exp(x) − FUSION_SHIFT, 0)` for fusion parameters. Parameters that
/// are not on the log scale are used as they are.
pub fn to_penalty_values(template: &PenaltyTemplate, x: &[f64]) -> Vec<f64> {
    template
        .params()
        .iter()
        .zip(x)
        .map(|(param, &v)| match (param.log_scale, param.kind) {
            (false, _) => v,
            (true, ParamKind::Ridge) => v.exp(),
            (true, ParamKind::Fusion) => (v.exp() - FUSION_SHIFT).max(0.0),
        })
        .collect()
}

/// Inverse of [`to_penalty_values`].
pub fn from_penalty_values(template: &PenaltyTemplate, values: &[f64]) -> Vec<f64> {
    template
        .params()
        .iter()
        .zip(values)
        .map(|(param, &v)| match (param.log_scale, param.kind) {
            (false, _) => v,
            (true, ParamKind::Ridge) => v.ln(),
            (true, ParamKind::Fusion) => (v + FUSION_SHIFT).ln(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub values: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub penalty: PenaltyMatrix,
    pub values: Vec<f64>,
    pub score: CvScore,
    pub trace: Vec<TraceEntry>,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes the chosen criterion over the free parameters of `template` with
/// Nelder–Mead, starting from `start` (given in parameter order). Structural
/// zeros of the template are never searched. When the budget runs out, the
/// best point so far is returned with `converged == false`.
pub fn optimize_penalties(
    template: &PenaltyTemplate,
    data: &[ClassData],
    targets: &[SymMatrix],
    method: &CvMethod,
    start: &[f64],
    budget: usize,
    options: &FitOptions,
) -> Result<Selection> {
    if budget == 0 {
        return Err(Error::input("evaluation budget must be at least 1"));
    }
    let start_penalty = template.instantiate(start)?;
    validate_problem(data, &start_penalty, targets)?;
    let plan = match method {
        CvMethod::KFold { folds, seed } => {
            Some(FoldPlan::stratified(&data.iter().map(ClassData::n).collect::<Vec<_>>(), *folds, *seed)?)
        }
        _ => None,
    };
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best: Option<(Vec<f64>, CvScore)> = None;
    let mut first_error: Option<Error> = None;
    let objective = |x: &[f64]| -> f64 {
        let values = to_penalty_values(template, x);
        let scored = template
            .instantiate(&values)
            .and_then(|penalty| score_validated(method, plan.as_ref(), &penalty, data, targets, options));
        match scored {
            Ok(score) => {
                let v = score.value;
                trace.push(TraceEntry { values: values.clone(), score: v });
                if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v < b.value) {
                    best = Some((values, score));
                }
                v
            }
            Err(e) => {
                log::debug!("penalty {values:?} could not be scored: {e}");
                trace.push(TraceEntry { values, score: f64::INFINITY });
                first_error.get_or_insert(e);
                f64::INFINITY
            }
        }
    };
    let result = nelder_mead::minimize(
        objective,
        &from_penalty_values(template, start),
        &NelderMeadOptions { max_evaluations: budget, ..NelderMeadOptions::default() },
    );
    let Some((values, score)) = best else {
        return Err(first_error.unwrap_or_else(|| Error::input("no penalty could be scored")));
    };
    Ok(Selection {
        penalty: template.instantiate(&values)?,
        values,
        score,
        trace,
        evaluations: result.evaluations,
        converged: result.converged,
    })
}
