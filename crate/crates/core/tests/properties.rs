use fusedridge::estimator::{fit, kkt_residuals, objective, ClassData, FitOptions};
use fusedridge::graphs::{covariance_path_decomposition, lfdr_fit, partial_correlation, LfdrOptions};
use fusedridge::inference::{ks_uniformity, score_statistic};
use fusedridge::linalg::{ridge_update, spd_check, spd_inverse};
use fusedridge::penalty::{PenaltyMatrix, PenaltyTemplate};
use fusedridge::selection::{from_penalty_values, to_penalty_values};
use fusedridge::sim::quartiles;
use fusedridge::SymMatrix;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn samples(n: usize, p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * p).prop_map(move |v| DMatrix::from_row_slice(n, p, &v))
}

/// `A Aᵀ + I/2` from an arbitrary square `A`.
fn spd(p: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-1.0f64..1.0, p * p).prop_map(move |v| {
        let a = DMatrix::from_row_slice(p, p, &v);
        SymMatrix::symmetrize(&a * a.transpose() + DMatrix::identity(p, p) * 0.5)
    })
}

fn penalty(g: usize) -> impl Strategy<Value = PenaltyMatrix> {
    (prop::collection::vec(-1.0f64..1.0, g), prop::collection::vec(-2.0f64..1.0, g * g)).prop_map(move |(d, f)| {
        let mut m = DMatrix::zeros(g, g);
        for i in 0..g {
            m[(i, i)] = 10f64.powf(d[i]);
            for j in (i + 1)..g {
                let v = 10f64.powf(f[i * g + j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        PenaltyMatrix::new(m).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ridge_update_solves_its_stationarity_equation(s in spd(4), alpha in 0.0f64..2.0, ridge in 0.01f64..10.0) {
        let t = SymMatrix::scaled_identity(4, alpha);
        let omega = ridge_update(&s, &t, ridge).unwrap();
        prop_assert!(spd_check(&omega).unwrap().is_pd);
        // Ω⁻¹ − S − ridge·(Ω − T) = 0
        let residual = spd_inverse(&omega).unwrap().as_matrix() - s.as_matrix()
            - (omega.as_matrix() - t.as_matrix()) * ridge;
        prop_assert!(residual.amax() < 1e-8 * (1.0 + s.as_matrix().amax()));
    }

    #[test]
    fn fit_is_a_positive_definite_stationary_point(
        ys in prop::collection::vec(samples(6, 4), 3),
        lam in penalty(3),
        alpha in 0.1f64..2.0,
    ) {
        let data: Vec<ClassData> = ys.iter().map(|y| ClassData::from_samples(y).unwrap()).collect();
        let targets = vec![SymMatrix::scaled_identity(4, alpha); 3];
        let fitted = fit(&data, &lam, &targets, &FitOptions::default()).unwrap();
        for omega in &fitted.estimates {
            prop_assert!(spd_check(omega).unwrap().is_pd);
        }
        let residuals = kkt_residuals(&fitted.estimates, &data, &lam, &targets).unwrap();
        prop_assert!(residuals.iter().all(|&r| r < 1e-6), "{residuals:?}");
        let start = vec![SymMatrix::identity(4); 3];
        prop_assert!(
            objective(&fitted.estimates, &data, &lam, &targets).unwrap()
                >= objective(&start, &data, &lam, &targets).unwrap()
        );
    }

    #[test]
    fn fit_is_equivariant_under_class_relabelling(
        ys in prop::collection::vec(samples(7, 3), 3),
        lam in penalty(3),
    ) {
        let data: Vec<ClassData> = ys.iter().map(|y| ClassData::from_samples(y).unwrap()).collect();
        let targets = vec![SymMatrix::identity(3); 3];
        let base = fit(&data, &lam, &targets, &FitOptions::default()).unwrap();
        let order = [2usize, 0, 1];
        let permuted_data: Vec<ClassData> = order.iter().map(|&g| data[g].clone()).collect();
        let m = lam.as_matrix();
        let permuted_lam = PenaltyMatrix::new(DMatrix::from_fn(3, 3, |i, j| m[(order[i], order[j])])).unwrap();
        let permuted = fit(&permuted_data, &permuted_lam, &targets, &FitOptions::default()).unwrap();
        for (k, &g) in order.iter().enumerate() {
            let gap = (permuted.estimates[k].as_matrix() - base.estimates[g].as_matrix()).amax();
            prop_assert!(gap < 1e-6, "class {g}: {gap}");
        }
    }

    #[test]
    fn partial_correlations_lie_in_the_unit_interval(omega in spd(5)) {
        let pcor = partial_correlation(&omega).unwrap();
        for i in 0..5 {
            prop_assert_eq!(pcor.get(i, i), 1.0);
            for j in 0..5 {
                prop_assert!(pcor.get(i, j).abs() <= 1.0 + 1e-12);
                prop_assert_eq!(pcor.get(i, j), pcor.get(j, i));
            }
        }
    }

    #[test]
    fn path_contributions_sum_to_the_covariance(omega in spd(5), a in 0usize..5, b in 0usize..5) {
        prop_assume!(a != b);
        let decomposition = covariance_path_decomposition(&omega, a, b, 4, None).unwrap();
        let covariance = spd_inverse(&omega).unwrap().as_matrix()[(a, b)];
        prop_assert!(decomposition.complete);
        prop_assert!((decomposition.total - covariance).abs() < 1e-9 * (1.0 + covariance.abs()));
    }

    #[test]
    fn score_statistic_is_non_negative(ys in prop::collection::vec(samples(5, 3), 2), omega in spd(3)) {
        let data: Vec<ClassData> = ys.iter().map(|y| ClassData::from_samples(y).unwrap()).collect();
        prop_assert!(score_statistic(&data, &omega).unwrap() >= -1e-9);
    }

    #[test]
    fn lfdr_values_are_probabilities(values in prop::collection::vec(-0.95f64..0.95, 20..200)) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        if let Ok(fit) = lfdr_fit(&values, &LfdrOptions::default()) {
            prop_assert!((0.0..=1.0).contains(&fit.eta0));
            prop_assert!(fit.lfdr.iter().all(|l| (0.0..=1.0).contains(l)));
        }
    }

    #[test]
    fn ks_p_values_are_probabilities(values in prop::collection::vec(0.0f64..1.0, 1..100)) {
        let (d, p) = ks_uniformity(&values).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn search_transform_round_trips(ridge in 1e-4f64..1e4, fusion in 0.0f64..1e6) {
        let template = PenaltyTemplate::shared(3);
        let values = vec![ridge, fusion];
        let back = to_penalty_values(&template, &from_penalty_values(&template, &values));
        prop_assert!((back[0] - ridge).abs() <= 1e-9 * ridge);
        prop_assert!((back[1] - fusion).abs() <= 1e-9 * (fusion + 1e-4));
        let m = template.instantiate(&back).unwrap();
        prop_assert_eq!(m.as_matrix(), &m.as_matrix().transpose());
    }

    #[test]
    fn quartiles_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let [q1, q2, q3] = quartiles(&values);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= q1 && q1 <= q2 && q2 <= q3 && q3 <= max);
    }
}
