//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then asserts it.

use std::io::Write;
use std::time::{Duration, Instant};

use fusedridge::estimator::{closed_form_class, fit, pooled_estimate, ClassData, FitMethod, FitOptions};
use fusedridge::graphs::{covariance_path_decomposition, lfdr_fit, LfdrOptions};
use fusedridge::inference::{ks_uniformity, permutation_test};
use fusedridge::linalg::{ridge_update, spd_check, spd_inverse};
use fusedridge::penalty::PenaltyMatrix;
use fusedridge::selection::{fkl_score_with, loocv_score, CvMethod, FklCorrection};
use fusedridge::sim::{banded_precision, run_scenario, sample_mvn, total_losses, ScenarioId, SimulationConfig};
use fusedridge::{Error, SymMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

fn report(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let status = if pass { "PASS" } else { "FAIL" };
    // Written to the stderr handle directly so the line shows even when output is captured.
    let _ = writeln!(std::io::stderr(), "{status} criterion {id} ({name}): {detail} [{:.1}s]", elapsed.as_secs_f64());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn random_samples(n: usize, p: usize, rng: &mut ChaCha8Rng) -> ClassData {
    ClassData::from_samples(&DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))).unwrap()
}

fn random_spd(p: usize, floor: f64, rng: &mut ChaCha8Rng) -> SymMatrix {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrize(&a * a.transpose() + DMatrix::identity(p, p) * floor)
}

fn random_penalty(rng: &mut ChaCha8Rng) -> PenaltyMatrix {
    let ridge = [10f64.powf(rng.random_range(-1.0..1.0)), 10f64.powf(rng.random_range(-1.0..1.0))];
    let fusion = 10f64.powf(rng.random_range(-2.0..1.0));
    PenaltyMatrix::new(DMatrix::from_row_slice(2, 2, &[ridge[0], fusion, fusion, ridge[1]])).unwrap()
}

fn unwrap_fit(result: fusedridge::Result<fusedridge::estimator::PrecisionEstimates>) -> Vec<SymMatrix> {
    match result {
        Ok(f) => f.estimates,
        Err(Error::Convergence { last, .. }) => last.estimates,
        Err(e) => panic!("{e}"),
    }
}

/// Penalized log-likelihood written out directly for two classes.
fn oracle_objective(omegas: &[DMatrix<f64>], data: &[ClassData], lambda: &PenaltyMatrix, targets: &[SymMatrix]) -> f64 {
    let mut value = 0.0;
    let diffs: Vec<DMatrix<f64>> = omegas.iter().zip(targets).map(|(o, t)| o - t.as_matrix()).collect();
    for (g, (o, d)) in omegas.iter().zip(data).enumerate() {
        let Some(chol) = o.clone().cholesky() else { return f64::NEG_INFINITY };
        let ln_det = 2.0 * chol.l().diagonal().map(f64::ln).sum();
        value += d.n() as f64 * (ln_det - (d.covariance().as_matrix() * o).trace());
        value -= 0.5 * lambda.get(g, g) * diffs[g].norm_squared();
    }
    value - 0.5 * lambda.get(0, 1) * (&diffs[0] - &diffs[1]).norm_squared()
}

fn project_pd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(1e-8));
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Projected gradient ascent with Armijo backtracking over pairs of p.d. matrices.
fn generic_maximizer(data: &[ClassData], lambda: &PenaltyMatrix, targets: &[SymMatrix]) -> Vec<DMatrix<f64>> {
    let p = targets[0].dim();
    let mut omegas = vec![DMatrix::<f64>::identity(p, p); 2];
    let mut value = oracle_objective(&omegas, data, lambda, targets);
    let mut step = 1e-2;
    for _ in 0..200_000 {
        let diffs: Vec<DMatrix<f64>> = omegas.iter().zip(targets).map(|(o, t)| o - t.as_matrix()).collect();
        let grads: Vec<DMatrix<f64>> = (0..2)
            .map(|g| {
                let inv = omegas[g].clone().try_inverse().unwrap();
                (inv - data[g].covariance().as_matrix()) * data[g].n() as f64
                    - &diffs[g] * lambda.get(g, g)
                    - (&diffs[g] - &diffs[1 - g]) * lambda.get(0, 1)
            })
            .collect();
        let grad_sq: f64 = grads.iter().map(|m| m.norm_squared()).sum();
        if grad_sq.sqrt() < 1e-11 {
            break;
        }
        step *= 2.0;
        loop {
            let candidate: Vec<DMatrix<f64>> = omegas.iter().zip(&grads).map(|(o, d)| project_pd(&(o + d * step))).collect();
            let moved: f64 = candidate.iter().zip(&omegas).map(|(c, o)| (c - o).norm_squared()).sum();
            let new_value = oracle_objective(&candidate, data, lambda, targets);
            if new_value >= value + 1e-4 * moved / step || step < 1e-14 {
                if new_value >= value {
                    omegas = candidate;
                    value = new_value;
                }
                break;
            }
            step *= 0.5;
        }
        if step < 1e-14 {
            break;
        }
    }
    omegas
}

#[test]
fn criterion_01_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_objective, mut worst_entry) = (0.0f64, 0.0f64);
    for _ in 0..25 {
        let data: Vec<ClassData> = (0..2).map(|_| random_samples(rng.random_range(2..=8), 3, &mut rng)).collect();
        let targets: Vec<SymMatrix> = (0..2).map(|_| SymMatrix::scaled_identity(3, rng.random_range(0.0..2.0))).collect();
        let lambda = random_penalty(&mut rng);
        let fitted = fit(&data, &lambda, &targets, &FitOptions::default()).unwrap();
        let estimates: Vec<DMatrix<f64>> = fitted.estimates.iter().map(|o| o.as_matrix().clone()).collect();
        let oracle = generic_maximizer(&data, &lambda, &targets);
        let ours = oracle_objective(&estimates, &data, &lambda, &targets);
        let theirs = oracle_objective(&oracle, &data, &lambda, &targets);
        worst_objective = worst_objective.max((ours - theirs).abs() / theirs.abs().max(1.0));
        for (a, b) in estimates.iter().zip(&oracle) {
            worst_entry = worst_entry.max((a - b).amax());
        }
    }
    let pass = worst_objective < 1e-6 && worst_entry < 1e-4 && start.elapsed() < Duration::from_secs(60);
    report(
        1,
        "oracle equivalence",
        pass,
        &format!("max objective gap {worst_objective:.2e} (< 1e-6), max entry gap {worst_entry:.2e} (< 1e-4)"),
        start.elapsed(),
    );
}

#[test]
fn criterion_02_special_cases() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let no_dispatch = FitOptions { special_cases: false, max_iter: 100_000, ..FitOptions::default() };
    let (mut diagonal_gap, mut pooled_gap, mut dispatched_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let p = rng.random_range(2..=8);
        let data: Vec<ClassData> = (0..2).map(|_| random_samples(rng.random_range(3..=15), p, &mut rng)).collect();
        let targets: Vec<SymMatrix> = (0..2).map(|_| SymMatrix::scaled_identity(p, rng.random_range(0.1..2.0))).collect();
        let ridge = [rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)];
        let diagonal = PenaltyMatrix::diagonal(&ridge).unwrap();
        let fitted = unwrap_fit(fit(&data, &diagonal, &targets, &no_dispatch));
        for g in 0..2 {
            let closed = closed_form_class(&data[g], &targets[g], ridge[g]).unwrap();
            diagonal_gap = diagonal_gap.max((fitted[g].as_matrix() - closed.as_matrix()).amax());
        }

        let common = vec![targets[0].clone(); 2];
        let fused = PenaltyMatrix::uniform(2, ridge[0], 1e9).unwrap();
        let pooled = pooled_estimate(&data, &fused, &targets[0]).unwrap();
        let dispatched = fit(&data, &fused, &common, &FitOptions::default()).unwrap();
        assert_eq!(dispatched.method, FitMethod::Pooled);
        let iterated = unwrap_fit(fit(&data, &fused, &common, &no_dispatch));
        for g in 0..2 {
            dispatched_gap = dispatched_gap.max((dispatched.estimates[g].as_matrix() - pooled.as_matrix()).amax());
            pooled_gap = pooled_gap.max((iterated[g].as_matrix() - pooled.as_matrix()).amax());
        }
    }
    let pass = diagonal_gap < 1e-10 && pooled_gap < 1e-4 && dispatched_gap < 1e-4;
    report(
        2,
        "special cases",
        pass,
        &format!(
            "diagonal vs closed form {diagonal_gap:.2e} (< 1e-10); fusion 1e9 vs pooled: iterated {pooled_gap:.2e}, dispatched {dispatched_gap:.2e} (< 1e-4)"
        ),
        start.elapsed(),
    );
}

#[test]
fn criterion_03_limit_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut failures = Vec::new();
    for instance in 0..50 {
        let p = rng.random_range(2..=6);
        // i: the update is positive definite for any p.s.d. input
        let s_bar = SymMatrix::symmetrize({
            let a = DMatrix::from_fn(p, 1, |_, _| rng.random_range(-3.0..3.0));
            &a * a.transpose()
        });
        let t_bar = SymMatrix::scaled_identity(p, rng.random_range(0.0..3.0));
        let lambda_bar = 10f64.powf(rng.random_range(-6.0..6.0));
        if !spd_check(&ridge_update(&s_bar, &t_bar, lambda_bar).unwrap()).unwrap().is_pd {
            failures.push(format!("instance {instance}: item i"));
        }
        // ii: vanishing penalty recovers the inverse covariance
        let invertible = random_spd(p, 0.5, &mut rng);
        let limit = ridge_update(&invertible, &t_bar, 1e-10).unwrap();
        let inverse = spd_inverse(&invertible).unwrap();
        if (limit.as_matrix() - inverse.as_matrix()).norm() > 1e-4 * inverse.frobenius_norm() {
            failures.push(format!("instance {instance}: item ii"));
        }
        // iii and iv on a fused problem with distinct targets
        let data: Vec<ClassData> = (0..2).map(|_| random_samples(rng.random_range(3..=10), p, &mut rng)).collect();
        let targets = vec![SymMatrix::scaled_identity(p, 0.5), SymMatrix::from_diagonal(&vec![1.5; p])];
        let fusion = rng.random_range(0.1..5.0);
        let ridge = rng.random_range(0.1..5.0);
        let options = FitOptions { max_iter: 100_000, ..FitOptions::default() };
        let heavy = PenaltyMatrix::new(DMatrix::from_row_slice(2, 2, &[1e10, fusion, fusion, ridge])).unwrap();
        let fitted = unwrap_fit(fit(&data, &heavy, &targets, &options));
        if (fitted[0].as_matrix() - targets[0].as_matrix()).norm() > 1e-4 * targets[0].frobenius_norm().max(1.0) {
            failures.push(format!("instance {instance}: item iii"));
        }
        let fused = PenaltyMatrix::uniform(2, ridge, 1e10).unwrap();
        let fitted = unwrap_fit(fit(&data, &fused, &targets, &options));
        let shift = (fitted[0].as_matrix() - targets[0].as_matrix()) - (fitted[1].as_matrix() - targets[1].as_matrix());
        if shift.norm() > 1e-4 {
            failures.push(format!("instance {instance}: item iv ({:.2e})", shift.norm()));
        }
        if fitted.iter().any(|o| !spd_check(o).unwrap().is_pd) {
            failures.push(format!("instance {instance}: item i (fit)"));
        }
    }
    let pass = failures.is_empty() && start.elapsed() < Duration::from_secs(60);
    let detail = if failures.is_empty() { "items i-iv hold on 50 instances".to_string() } else { failures.join(", ") };
    report(3, "limit suite", pass, &detail, start.elapsed());
}

fn scenario_one(scenario: ScenarioId, n: usize) -> (f64, f64, f64) {
    let mut config = SimulationConfig::preset(scenario, vec![n, n]);
    config.method = if n <= 10 { CvMethod::LeaveOneOut } else { CvMethod::KFold { folds: 5, seed: 1 } };
    let rows = run_scenario(&config).unwrap();
    let med = |name: &str| median(&total_losses(&rows, name).iter().map(|l| l[0]).collect::<Vec<_>>());
    (med("fused_unrestricted"), med("separate"), med("pooled"))
}

#[test]
fn criterion_04_scenario_one_ordering() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for scenario in [ScenarioId::OneA, ScenarioId::OneB] {
        for n in [10, 25, 70] {
            let (fused, separate, pooled) = scenario_one(scenario, n);
            let bound = 1.05 * separate.min(pooled);
            pass &= fused <= bound;
            lines.push(format!("{scenario} n={n}: fused {fused:.1} vs 1.05*min(separate {separate:.1}, pooled {pooled:.1})"));
        }
    }
    pass &= start.elapsed() < Duration::from_secs(30 * 60);
    report(4, "scenario 1 ordering", pass, &lines.join("; "), start.elapsed());
}

#[test]
fn criterion_05_scenario_two_ordering() {
    let start = Instant::now();
    let mut config = SimulationConfig::preset(ScenarioId::Two, vec![25, 25]);
    config.method = CvMethod::KFold { folds: 5, seed: 1 };
    config.budget = 40;
    let rows = run_scenario(&config).unwrap();
    let names = ["fused_target_zero", "fused_target_scalar", "fused_target_truth"];
    let medians: Vec<[f64; 2]> = names
        .iter()
        .map(|name| {
            let losses = total_losses(&rows, name);
            [0, 1].map(|k| median(&losses.iter().map(|l| l[k]).collect::<Vec<_>>()))
        })
        .collect();
    let pass = (0..2).all(|k| medians[2][k] < medians[0][k] && medians[2][k] < medians[1][k])
        && start.elapsed() < Duration::from_secs(30 * 60);
    let detail = names
        .iter()
        .zip(&medians)
        .map(|(name, m)| format!("{name} frobenius {:.1} quadratic {:.3}", m[0], m[1]))
        .collect::<Vec<_>>()
        .join("; ");
    report(5, "scenario 2 ordering", pass, &detail, start.elapsed());
}

#[test]
fn criterion_06_fkl_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let options = FitOptions::default();
    let (mut worst_plus, mut worst_minus) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let truth = spd_inverse(&random_spd(8, 0.5, &mut rng)).unwrap();
        let data: Vec<ClassData> =
            (0..2).map(|_| ClassData::from_samples(&sample_mvn(100, &truth, &mut rng).unwrap()).unwrap()).collect();
        let targets: Vec<SymMatrix> = (0..2).map(|_| SymMatrix::scaled_identity(8, rng.random_range(0.5..1.5))).collect();
        let lambda = random_penalty(&mut rng);
        let loocv = loocv_score(&lambda, &data, &targets, &options).unwrap().value;
        for (correction, worst) in [(FklCorrection::Plus, &mut worst_plus), (FklCorrection::Minus, &mut worst_minus)] {
            let fkl = fkl_score_with(&lambda, &data, &targets, &options, correction).unwrap().value;
            *worst = worst.max((fkl - loocv).abs() / loocv.abs());
        }
    }
    let pass = worst_plus < 0.05 && start.elapsed() < Duration::from_secs(600);
    report(
        6,
        "FKL fidelity",
        pass,
        &format!("max relative gap {worst_plus:.2e} (< 0.05); with the opposite correction sign {worst_minus:.2e}"),
        start.elapsed(),
    );
}

#[test]
fn criterion_07_score_test_calibration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let sigma = spd_inverse(&banded_precision(5, 2).unwrap()).unwrap();
    let lambda = PenaltyMatrix::uniform(2, 1.0, 1.0).unwrap();
    let null_p: Vec<f64> = (0..200u64)
        .map(|rep| {
            let data: Vec<ClassData> =
                (0..2).map(|_| ClassData::from_samples(&sample_mvn(20, &sigma, &mut rng).unwrap()).unwrap()).collect();
            permutation_test(&data, &lambda, &SymMatrix::identity(5), 200, rep).unwrap().p_value
        })
        .collect();
    let (ks, ks_p) = ks_uniformity(&null_p).unwrap();

    let sigmas = [15, 2].map(|k| spd_inverse(&banded_precision(10, k).unwrap()).unwrap());
    let rejections = (0..20u64)
        .filter(|&rep| {
            let data: Vec<ClassData> =
                sigmas.iter().map(|s| ClassData::from_samples(&sample_mvn(40, s, &mut rng).unwrap()).unwrap()).collect();
            permutation_test(&data, &lambda, &SymMatrix::identity(10), 200, rep).unwrap().p_value <= 0.05
        })
        .count();
    let pass = ks_p > 0.01 && rejections >= 18 && start.elapsed() < Duration::from_secs(30 * 60);
    report(
        7,
        "score test calibration",
        pass,
        &format!("null KS D={ks:.3} p={ks_p:.3} (> 0.01); power {rejections}/20 (>= 18)"),
        start.elapsed(),
    );
}

#[test]
fn criterion_08_path_completeness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let (mut instances, mut worst) = (0, 0.0f64);
    while instances < 50 {
        let p = rng.random_range(2..=6);
        let mut m = random_spd(p, 0.3, &mut rng).into_inner();
        for i in 0..p {
            for j in 0..i {
                if rng.random::<f64>() < 0.4 {
                    m[(i, j)] = 0.0;
                    m[(j, i)] = 0.0;
                }
            }
        }
        let omega = SymMatrix::symmetrize(m);
        if !spd_check(&omega).unwrap().is_pd {
            continue;
        }
        instances += 1;
        let covariance = spd_inverse(&omega).unwrap();
        for a in 0..p {
            for b in (a + 1)..p {
                let d = covariance_path_decomposition(&omega, a, b, p - 1, None).unwrap();
                assert!(d.complete);
                worst = worst.max((d.total - covariance[(a, b)]).abs());
            }
        }
    }
    let pass = worst < 1e-8 && start.elapsed() < Duration::from_secs(60);
    report(8, "path completeness", pass, &format!("max |sum - covariance| {worst:.2e} (< 1e-8)"), start.elapsed());
}

#[test]
fn criterion_09_lfdr_recovery() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let null = Beta::<f64>::new(0.5, 0.5 * (50.0 - 1.0)).unwrap();
    let mut values: Vec<f64> = (0..4500)
        .map(|_| {
            let r = null.sample(&mut rng).sqrt();
            if rng.random::<bool>() { r } else { -r }
        })
        .collect();
    values.extend((0..500).map(|_| {
        let r = rng.random_range(0.5..0.8);
        if rng.random::<bool>() { r } else { -r }
    }));
    let fit = lfdr_fit(&values, &LfdrOptions::default()).unwrap();
    let selected: Vec<bool> = fit.lfdr.iter().map(|l| 1.0 - l >= 0.9).collect();
    let true_hits = selected[4500..].iter().filter(|&&s| s).count();
    let false_hits = selected[..4500].iter().filter(|&&s| s).count();
    let recall = true_hits as f64 / 500.0;
    let false_proportion = false_hits as f64 / (true_hits + false_hits).max(1) as f64;
    let pass = (0.85..=0.95).contains(&fit.eta0) && recall >= 0.8 && false_proportion <= 0.1;
    report(
        9,
        "lFDR recovery",
        pass,
        &format!("eta0 {:.3} in [0.85, 0.95]; recall {recall:.3} (>= 0.8); false-positive proportion {false_proportion:.3} (<= 0.1)", fit.eta0),
        start.elapsed(),
    );
}

#[test]
fn criterion_10_fit_speed() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let data: Vec<ClassData> = (0..2).map(|_| random_samples(10, 50, &mut rng)).collect();
    let targets: Vec<SymMatrix> = data.iter().map(|d| SymMatrix::scaled_identity(50, 50.0 / d.covariance().trace())).collect();
    let lambda = PenaltyMatrix::uniform(2, 1.0, 1.0).unwrap();
    let options = FitOptions::default();
    fit(&data, &lambda, &targets, &options).unwrap();
    let start = Instant::now();
    let runs = 20;
    for _ in 0..runs {
        fit(&data, &lambda, &targets, &options).unwrap();
    }
    let mean = start.elapsed() / runs;
    report(10, "fit speed", mean < Duration::from_millis(100), &format!("mean fit time {mean:?} (< 100 ms)"), start.elapsed());
}
