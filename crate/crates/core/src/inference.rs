//! Permutation score test for equality of the class precision matrices.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{pooled_estimate, validate_problem, ClassData};
use crate::linalg::{spd_inverse, SymMatrix};
use crate::penalty::PenaltyMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTestResult {
    pub observed: f64,
    pub null_draws: Vec<f64>,
    pub p_value: f64,
    pub permutations: usize,
    pub seed: u64,
}

/// Score statistic `Σ_g tr[X_g Ω X_g Ω]` with
/// `X_g = n_g{2(Ω⁻¹ − S_g) − (Ω⁻¹ − S_g)∘I}`, evaluated at the null estimate `Ω`.
pub fn score_statistic(data: &[ClassData], omega_null: &SymMatrix) -> Result<f64> {
    let sigma = spd_inverse(omega_null)?;
    let omega = omega_null.as_matrix();
    let mut total = 0.0;
    for d in data {
        if d.dim() != omega_null.dim() {
            return Err(Error::input("class dimension does not match the null estimate"));
        }
        total += class_term(sigma.as_matrix(), d.covariance().as_matrix(), d.n(), omega);
    }
    Ok(total)
}

fn class_term(sigma: &DMatrix<f64>, covariance: &DMatrix<f64>, n: usize, omega: &DMatrix<f64>) -> f64 {
    let diff = sigma - covariance;
    let mut x = &diff * 2.0;
    x.set_diagonal(&diff.diagonal());
    x *= n as f64;
    let xo = &x * omega;
    xo.component_mul(&xo.transpose()).sum()
}

/// Permutation test of `Ω_1 = … = Ω_G`. The null estimate is the pooled closed
/// form, which depends on the data only through the pooled covariance; since
/// permuting labels leaves that unchanged it is computed once.
pub fn permutation_test(
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    target: &SymMatrix,
    permutations: usize,
    seed: u64,
) -> Result<ScoreTestResult> {
    if permutations == 0 {
        return Err(Error::input("the number of permutations must be at least 1"));
    }
    let targets = vec![target.clone(); data.len()];
    validate_problem(data, penalty, &targets)?;
    let samples: Vec<&DMatrix<f64>> = data
        .iter()
        .enumerate()
        .map(|(g, d)| d.samples().ok_or_else(|| Error::input(format!("class {g} has no raw samples; the test needs them"))))
        .collect::<Result<_>>()?;
    let omega_null = pooled_estimate(data, penalty, target)?;
    let observed = score_statistic(data, &omega_null)?;

    let p = omega_null.dim();
    let sizes: Vec<usize> = data.iter().map(ClassData::n).collect();
    let rows: Vec<_> = samples.iter().flat_map(|y| y.row_iter().map(|r| r.transpose())).collect();
    let sigma = spd_inverse(&omega_null)?.into_inner();
    let null_draws: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut rng);
            let mut start = 0;
            let mut total = 0.0;
            for &n in &sizes {
                let mut scatter = DMatrix::zeros(p, p);
                for &i in &order[start..start + n] {
                    scatter += &rows[i] * rows[i].transpose();
                }
                start += n;
                total += class_term(&sigma, &(scatter / n as f64), n, omega_null.as_matrix());
            }
            total
        })
        .collect();
    let exceed = null_draws.iter().filter(|&&u| u >= observed).count();
    let p_value = (1 + exceed) as f64 / (permutations + 1) as f64;
    Ok(ScoreTestResult { observed, null_draws, p_value, permutations, seed })
}

/// Kolmogorov–Smirnov statistic and asymptotic p-value for the fit of a sample to U(0, 1).
pub fn ks_uniformity(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::input("no values to test"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            f64::max((i + 1) as f64 / n - x, x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok((d, kolmogorov_p_value(d, n)))
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("both samples must be non-empty"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    let n = (x.len() * y.len()) as f64 / (x.len() + y.len()) as f64;
    Ok((d, kolmogorov_p_value(d, n)))
}

/// Kolmogorov survival function with Stephens' small-sample correction.
fn kolmogorov_p_value(d: f64, n: f64) -> f64 {
    let root = n.sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
