//! Dense symmetric linear algebra and the single-class targeted ridge update.

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this (relative to the spectral radius) count as roundoff.
const PSD_TOLERANCE: f64 = 1e-10;

/// A real symmetric matrix. Construction symmetrizes, so `a[(i, j)] == a[(j, i)]`
/// holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a square matrix, rejecting non-finite entries and visible asymmetry.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::input(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("matrix has non-finite entries"));
        }
        let scale = m.amax().max(1e-12);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-8 * scale {
            return Err(Error::input(format!(
                "matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2` without checking.
    pub fn symmetrize(mut m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn scaled_identity(p: usize, alpha: f64) -> Self {
        SymMatrix(DMatrix::from_diagonal_element(p, p, alpha))
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix(DMatrix::zeros(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// `tr(self · other)` for symmetric operands, without forming the product.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, a: f64) -> SymMatrix {
        SymMatrix(&self.0 * a)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    /// `self + a · other`.
    pub fn add_scaled(&self, a: f64, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0 * a)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn require_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::input(format!("{what} has non-finite entries")))
        }
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdCheckReport {
    pub is_pd: bool,
    pub min_eigenvalue: f64,
    pub condition_number: f64,
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen(a: &SymMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    a.require_finite("matrix")?;
    let eig = SymmetricEigen::new(a.0.clone());
    let p = a.dim();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Unsorted eigendecomposition for internal use where order is irrelevant.
fn eigen_unsorted(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    (eig.eigenvalues, eig.eigenvectors)
}

/// `V diag(f(d)) Vᵀ`.
fn spectral_map(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> SymMatrix {
    let mut scaled = vectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(values[k]);
    }
    SymMatrix::symmetrize(scaled * vectors.transpose())
}

pub fn spd_check(a: &SymMatrix) -> Result<SpdCheckReport> {
    let (d, _) = sym_eigen(a)?;
    let max = d[0];
    let min = d[d.len() - 1];
    Ok(SpdCheckReport {
        is_pd: min > 0.0,
        min_eigenvalue: min,
        condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
    })
}

/// Principal square root of a symmetric matrix. With `require_psd`, eigenvalues in
/// `[-1e-10·ρ, 0)` are clamped to zero and anything more negative is an error;
/// without it, all negative eigenvalues are clamped.
pub fn sym_sqrt(a: &SymMatrix, require_psd: bool) -> Result<SymMatrix> {
    a.require_finite("matrix")?;
    let (d, v) = eigen_unsorted(&a.0);
    let radius = d.amax().max(1e-12);
    if require_psd {
        if let Some(bad) = d.iter().find(|&&x| x < -PSD_TOLERANCE * radius) {
            return Err(Error::domain(format!(
                "matrix square root of a matrix with eigenvalue {bad:.3e}"
            )));
        }
    }
    Ok(spectral_map(&d, &v, |x| x.max(0.0).sqrt()))
}

fn check_update_inputs(s_bar: &SymMatrix, t_bar: &SymMatrix, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Penalty(format!(
            "ridge update needs a finite positive penalty, got {lambda}"
        )));
    }
    if s_bar.dim() != t_bar.dim() {
        return Err(Error::input(format!(
            "covariance is {0}x{0} but target is {1}x{1}",
            s_bar.dim(),
            t_bar.dim()
        )));
    }
    s_bar.require_finite("covariance")?;
    t_bar.require_finite("target")
}

/// Scalar form of the ridge update on one eigenvalue `m` of `S̄ − λ̄T̄`:
/// `1 / (sqrt(λ̄ + m²/4) + m/2)`, rearranged to avoid cancellation for `m < 0`.
fn ridge_eigenvalue(m: f64, lambda: f64) -> f64 {
    let root = (lambda + 0.25 * m * m).sqrt();
    if m >= 0.0 {
        1.0 / (root + 0.5 * m)
    } else {
        (root - 0.5 * m) / lambda
    }
}

/// Targeted ridge precision estimate
/// `{[λ̄I + ¼(S̄−λ̄T̄)²]^{1/2} + ½(S̄−λ̄T̄)}^{-1}`.
///
/// Both terms of the bracket are functions of `M = S̄ − λ̄T̄`, so a single
/// eigendecomposition of `M` gives the result.
pub fn ridge_update(s_bar: &SymMatrix, t_bar: &SymMatrix, lambda: f64) -> Result<SymMatrix> {
    check_update_inputs(s_bar, t_bar, lambda)?;
    let m = &s_bar.0 - &t_bar.0 * lambda;
    let (d, v) = eigen_unsorted(&m);
    Ok(spectral_map(&d, &v, |x| ridge_eigenvalue(x, lambda)))
}

/// The same estimate computed without any inversion: returns `(Ω̂, Σ̂)` with
/// `Σ̂ = [λ̄I + ¼M²]^{1/2} + ½M` and `Ω̂ = (Σ̂ − M)/λ̄`.
pub fn ridge_update_inverse_free(
    s_bar: &SymMatrix,
    t_bar: &SymMatrix,
    lambda: f64,
) -> Result<(SymMatrix, SymMatrix)> {
    check_update_inputs(s_bar, t_bar, lambda)?;
    let m = SymMatrix::symmetrize(&s_bar.0 - &t_bar.0 * lambda);
    let bracket = SymMatrix::symmetrize(
        DMatrix::from_diagonal_element(m.dim(), m.dim(), lambda) + (&m.0 * &m.0) * 0.25,
    );
    let root = sym_sqrt(&bracket, true)?;
    let sigma = root.add_scaled(0.5, &m);
    let omega = root.add_scaled(-0.5, &m).scale(1.0 / lambda);
    Ok((omega, sigma))
}

/// Cholesky factor of a positive definite matrix, or a domain error.
pub fn cholesky(a: &SymMatrix) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(a.0.clone()).ok_or_else(|| Error::domain("matrix is not positive definite"))
}

pub fn log_det(a: &SymMatrix) -> Result<f64> {
    let chol = cholesky(a)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

pub fn spd_inverse(a: &SymMatrix) -> Result<SymMatrix> {
    Ok(SymMatrix::symmetrize(cholesky(a)?.inverse()))
}

/// Per-class log-likelihood term `n·(ln|Ω| − tr(SΩ))`.
pub fn gaussian_loglik(omega: &SymMatrix, s: &SymMatrix, n: usize) -> Result<f64> {
    if omega.dim() != s.dim() {
        return Err(Error::input("precision and covariance dimensions differ"));
    }
    Ok(n as f64 * (log_det(omega)? - omega.trace_product(s)))
}

/// Squared Frobenius loss `‖Ω̂ − Ω‖²_F`.
pub fn frobenius_loss(estimate: &SymMatrix, truth: &SymMatrix) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(Error::input("loss operands have different dimensions"));
    }
    Ok((&estimate.0 - &truth.0).norm_squared())
}

/// Quadratic loss `‖Ω̂Ω^{-1} − I‖²_F`.
pub fn quadratic_loss(estimate: &SymMatrix, truth: &SymMatrix) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(Error::input("loss operands have different dimensions"));
    }
    let chol = cholesky(truth)?;
    // Ω̂Ω^{-1} − I = (Ω^{-1}Ω̂ − I)ᵀ
    let mut x = chol.solve(&estimate.0);
    for i in 0..x.nrows() {
        x[(i, i)] -= 1.0;
    }
    Ok(x.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(p: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let m = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(&m + m.transpose())
    }

    fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let x = DMatrix::from_fn(p + 3, p, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(x.transpose() * x / (p + 3) as f64)
    }

    fn naive_inverse(a: &SymMatrix) -> DMatrix<f64> {
        a.as_matrix().clone().try_inverse().unwrap()
    }

    fn kkt(omega: &SymMatrix, s: &SymMatrix, t: &SymMatrix, lambda: f64) -> f64 {
        (naive_inverse(omega) - s.as_matrix() - (omega.as_matrix() - t.as_matrix()) * lambda).norm()
    }

    #[test]
    fn new_rejects_asymmetric_and_non_finite() {
        assert!(SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(SymMatrix::new(DMatrix::from_row_slice(1, 1, &[f64::NAN])).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eigen_of_identity_and_classic_two_by_two() {
        let (d, _) = sym_eigen(&SymMatrix::identity(3)).unwrap();
        assert_eq!(d.as_slice(), &[1.0, 1.0, 1.0]);
        let a = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let (d, v) = sym_eigen(&a).unwrap();
        assert!((d[0] - 3.0).abs() < 1e-14 && (d[1] - 1.0).abs() < 1e-14);
        let r = 0.5f64.sqrt();
        assert!((v[(0, 0)].abs() - r).abs() < 1e-12 && (v[(1, 0)] - v[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_symmetric(6, &mut rng);
        let (d, v) = sym_eigen(&a).unwrap();
        assert!(d.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let recon = &v * DMatrix::from_diagonal(&d) * v.transpose();
        assert!((recon - a.as_matrix()).norm() < 1e-10 * a.frobenius_norm());
        assert!((v.transpose() * &v - DMatrix::identity(6, 6)).norm() < 1e-10);
    }

    #[test]
    fn sqrt_examples() {
        let r = sym_sqrt(&SymMatrix::from_diagonal(&[4.0, 9.0]), true).unwrap();
        assert!((r.as_matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).norm() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(5, &mut rng);
        let r = sym_sqrt(&a, true).unwrap();
        assert!((r.as_matrix() * r.as_matrix() - a.as_matrix()).norm() < 1e-9 * a.frobenius_norm());
        let neg = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(sym_sqrt(&neg, true), Err(Error::Domain(_))));
        assert!(sym_sqrt(&neg, false).is_ok());
    }

    #[test]
    fn ridge_update_examples() {
        let i3 = SymMatrix::identity(3);
        for lambda in [1e-3, 1.0, 50.0] {
            let o = ridge_update(&i3, &i3, lambda).unwrap();
            assert!((o.as_matrix() - i3.as_matrix()).amax() < 1e-14);
        }
        let s = SymMatrix::from_diagonal(&[1.0]);
        let t = SymMatrix::zeros(1);
        let o = ridge_update(&s, &t, 1.0).unwrap();
        assert!((o[(0, 0)] - 1.0 / (1.25f64.sqrt() + 0.5)).abs() < 1e-15);
        assert!((o[(0, 0)] - 0.6180340).abs() < 1e-7);
        let (o2, _) = ridge_update_inverse_free(&s, &t, 1.0).unwrap();
        assert!((o2[(0, 0)] - 0.6180340).abs() < 1e-7);
        let t = SymMatrix::from_diagonal(&[1.0, 2.0]);
        let o = ridge_update(&SymMatrix::identity(2), &t, 1e8).unwrap();
        assert!((o.as_matrix() - t.as_matrix()).amax() < 1e-4);
        assert!(matches!(ridge_update(&s, &s, 0.0), Err(Error::Penalty(_))));
        assert!(matches!(ridge_update(&s, &s, -1.0), Err(Error::Penalty(_))));
    }

    #[test]
    fn ridge_update_satisfies_kkt_and_matches_inverse_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = 10;
            // fusion-corrected covariances may be indefinite
            let s = random_symmetric(p, &mut rng);
            let t = random_spd(p, &mut rng);
            let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
            let o = ridge_update(&s, &t, lambda).unwrap();
            assert!(spd_check(&o).unwrap().is_pd);
            assert!(kkt(&o, &s, &t, lambda) < 1e-8 * s.frobenius_norm().max(1.0));
            let (o2, sigma) = ridge_update_inverse_free(&s, &t, lambda).unwrap();
            assert!((o.as_matrix() - o2.as_matrix()).amax() < 1e-9);
            let prod = o2.as_matrix() * sigma.as_matrix();
            assert!((prod - DMatrix::identity(p, p)).amax() < 1e-8);
        }
    }

    #[test]
    fn ridge_update_vanishing_penalty_gives_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_spd(5, &mut rng);
        let t = SymMatrix::identity(5);
        let o = ridge_update(&s, &t, 1e-10).unwrap();
        let inv = naive_inverse(&s);
        assert!((o.as_matrix() - &inv).norm() <= 1e-4 * inv.norm());
    }

    #[test]
    fn loglik_examples() {
        let i = SymMatrix::identity(4);
        assert!((gaussian_loglik(&i, &i, 1).unwrap() + 4.0).abs() < 1e-15);
        let s = SymMatrix::from_diagonal(&[2.0, 3.0]);
        assert!((gaussian_loglik(&SymMatrix::identity(2), &s, 2).unwrap() + 10.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let o = random_spd(4, &mut rng);
        let s = random_spd(4, &mut rng);
        let direct = 7.0 * (o.as_matrix().determinant().ln() - (o.as_matrix() * s.as_matrix()).trace());
        assert!((gaussian_loglik(&o, &s, 7).unwrap() - direct).abs() < 1e-10);
        assert!(gaussian_loglik(&SymMatrix::from_diagonal(&[1.0, -1.0]), &s.clone(), 1).is_err());
    }

    #[test]
    fn loss_examples() {
        let i = SymMatrix::identity(2);
        let two = SymMatrix::scaled_identity(2, 2.0);
        assert_eq!(frobenius_loss(&i, &i).unwrap(), 0.0);
        assert_eq!(quadratic_loss(&i, &i).unwrap(), 0.0);
        assert!((frobenius_loss(&two, &i).unwrap() - 2.0).abs() < 1e-15);
        assert!((quadratic_loss(&two, &i).unwrap() - 2.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_spd(4, &mut rng);
        let b = random_spd(4, &mut rng);
        let binv = naive_inverse(&b);
        let mut frob = 0.0;
        let mut quad = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                frob += (a[(i, j)] - b[(i, j)]).powi(2);
                let mut prod = 0.0;
                for k in 0..4 {
                    prod += a[(i, k)] * binv[(k, j)];
                }
                if i == j {
                    prod -= 1.0;
                }
                quad += prod * prod;
            }
        }
        assert!((frobenius_loss(&a, &b).unwrap() - frob).abs() < 1e-12);
        assert!((quadratic_loss(&a, &b).unwrap() - quad).abs() < 1e-9 * quad.max(1.0));
    }

    #[test]
    fn rotation_equivariance_with_scalar_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = 6;
        let s = random_spd(p, &mut rng);
        let q = random_symmetric(p, &mut rng).into_inner().qr().q();
        let t = SymMatrix::scaled_identity(p, 0.7);
        let rotated = SymMatrix::symmetrize(&q * s.as_matrix() * q.transpose());
        let lhs = ridge_update(&rotated, &t, 0.3).unwrap();
        let rhs = &q * ridge_update(&s, &t, 0.3).unwrap().as_matrix() * q.transpose();
        assert!((lhs.as_matrix() - rhs).amax() < 1e-9);
    }
}
