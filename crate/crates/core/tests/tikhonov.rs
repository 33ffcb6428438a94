use invlearn_core::experiments::{NoiseMeta, NoiseModel, SampleSet};
use invlearn_core::hilbert::{Grid, NormMode, RkhsBasis, Space};
use invlearn_core::kernels::Kernel;
use invlearn_core::linalg::SymEig;
use invlearn_core::operators::{ForwardOp, Theta};
use invlearn_core::tikhonov::{
    lambda_choice, population_linearized_solution, rate_exponents, smallness_check,
    tikhonov_objective, tikhonov_solve, GnOptions, IndexFunction,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn space(n: usize, mode: NormMode) -> Space {
    let k = Kernel::sobolev1d(1, 0.0, 1.0).unwrap();
    let grid = Grid::trapezoid(0.0, 1.0, n, false).unwrap();
    Space::new(RkhsBasis::new(k, grid).unwrap(), mode)
}

fn plain_meta(sigma: f64) -> NoiseMeta {
    NoiseMeta {
        model: NoiseModel::Gaussian { sigma },
        m_cert: 3.0 * sigma,
        sigma_cert: 2.0 * sigma,
    }
}

fn random_dataset(
    sp: &Space,
    op: &ForwardOp,
    truth: &DVector<f64>,
    m: usize,
    sigma: f64,
    seed: u64,
) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let clean = op.apply(sp, truth, &xs).unwrap();
    let y: Vec<f64> = clean
        .iter()
        .map(|v| v + sigma * (rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    SampleSet::new(xs, y, seed, plain_meta(sigma)).unwrap()
}

/// The closed-form normal-equation solution of the discretized problem:
/// `(E^T E / m + lambda M) v = E^T y / m + lambda M vbar`, solved densely.
/// Independent of the Gauss-Newton path.
fn dense_linear_oracle(
    sp: &Space,
    data: &SampleSet,
    fbar: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let e = sp.basis().eval_matrix(&data.x).unwrap();
    let m = data.x.len() as f64;
    let metric = sp.h1_metric();
    let a = e.transpose() * &e / m + &metric * lambda;
    let y = DVector::from_column_slice(&data.y);
    let rhs = e.transpose() * y / m + &metric * fbar * lambda;
    a.lu().solve(&rhs).expect("oracle solve")
}

#[test]
fn objective_zero_at_truth_with_clean_data() {
    let sp = space(48, NormMode::WeightedL2);
    let op = ForwardOp::identity();
    let fbar = DVector::from_element(48, 1.3);
    let data = random_dataset(&sp, &op, &fbar, 30, 0.0, 4);
    let obj = tikhonov_objective(&op, &sp, &data, &fbar, &fbar, 0.5).unwrap();
    assert!(obj.abs() < 1e-20, "objective {obj}");
}

#[test]
fn objective_matches_naive_two_term_oracle() {
    let sp = space(48, NormMode::WeightedL2);
    let op = ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let f = DVector::from_fn(48, |_, _| 0.5 + rng.random::<f64>());
    let fbar = DVector::from_element(48, 1.0);
    let data = random_dataset(&sp, &op, &fbar, 37, 0.1, 5);
    let lambda = 0.037;
    let fast = tikhonov_objective(&op, &sp, &data, &f, &fbar, lambda).unwrap();
    // naive loops
    let pred = op.apply(&sp, &f, &data.x).unwrap();
    let mut misfit = 0.0;
    for i in 0..data.len() {
        misfit += (pred[i] - data.y[i]) * (pred[i] - data.y[i]);
    }
    misfit /= data.len() as f64;
    let mut pen = 0.0;
    for j in 0..48 {
        pen += sp.grid().weights()[j] * (f[j] - fbar[j]) * (f[j] - fbar[j]);
    }
    let slow = misfit + lambda * pen;
    assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()));
}

#[test]
fn objective_with_zero_lambda_is_pure_misfit() {
    let sp = space(32, NormMode::WeightedL2);
    let op = ForwardOp::identity();
    let fbar = DVector::from_element(32, 0.0);
    let f = DVector::from_element(32, 1.0);
    let data = random_dataset(&sp, &op, &fbar, 10, 0.0, 6);
    let o = tikhonov_objective(&op, &sp, &data, &f, &fbar, 0.0).unwrap();
    assert!(o > 0.9); // misfit only, penalty suppressed
    assert!(tikhonov_objective(&op, &sp, &data, &f, &fbar, -0.1).is_err());
}

#[test]
fn linear_solve_matches_dense_oracle_in_both_norm_modes() {
    let op = ForwardOp::identity();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for mode in [NormMode::WeightedL2, NormMode::Rkhs] {
        let sp = space(64, mode);
        for trial in 0..5 {
            let m = 20 + (trial * 37) % 180;
            let truth = DVector::from_fn(64, |i, _| (i as f64 * 0.2).sin());
            let data = random_dataset(&sp, &op, &truth, m, 0.05, 100 + trial as u64);
            let lambda = 10f64.powf(-(1.0 + rng.random::<f64>() * 3.0));
            let fbar = DVector::from_element(64, 0.2);
            let fit =
                tikhonov_solve(&op, &sp, &data, &fbar, lambda, &GnOptions::default()).unwrap();
            assert!(fit.converged);
            let oracle = dense_linear_oracle(&sp, &data, &fbar, lambda);
            let gap = sp.h1_norm(&(&fit.solution - &oracle)).unwrap();
            assert!(gap <= 1e-8, "{mode:?} m={m} lambda={lambda}: gap {gap}");
        }
    }
}

#[test]
fn linear_solve_converges_in_one_accepted_step() {
    let sp = space(64, NormMode::WeightedL2);
    let op = ForwardOp::identity();
    let truth = DVector::from_fn(64, |i, _| (i as f64 * 0.1).cos());
    let data = random_dataset(&sp, &op, &truth, 50, 0.02, 8);
    let fbar = DVector::zeros(64);
    let fit = tikhonov_solve(&op, &sp, &data, &fbar, 0.01, &GnOptions::default()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.gn_iters, 1, "linear operators need one accepted step");
}

#[test]
fn huge_lambda_pins_solution_to_fbar() {
    let sp = space(48, NormMode::WeightedL2);
    let op = ForwardOp::identity();
    let truth = DVector::from_element(48, 3.0);
    let data = random_dataset(&sp, &op, &truth, 64, 0.1, 9);
    let fbar = DVector::from_element(48, 0.5);
    let fit = tikhonov_solve(&op, &sp, &data, &fbar, 1e6, &GnOptions::default()).unwrap();
    let dist = sp.h1_norm(&(&fit.solution - &fbar)).unwrap();
    assert!(dist <= 1e-3, "||f - fbar|| = {dist}");
}

#[test]
fn quadratic_noiseless_recovery_at_negligible_regularization() {
    let n = 48;
    let sp = space(n, NormMode::WeightedL2);
    let op = ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04));
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let truth = DVector::from_fn(n, |_, _| 1.0 + 0.2 * (rng.random::<f64>() - 0.5));
    let data = random_dataset(&sp, &op, &truth, 400, 0.0, 10);
    // start near the truth
    let fbar = DVector::from_fn(n, |i, _| truth[i] + 0.05 * ((i as f64).sin()));
    let fit = tikhonov_solve(&op, &sp, &data, &fbar, 1e-8, &GnOptions::default()).unwrap();
    assert!(fit.converged);
    let err = sp.h1_norm(&(&fit.solution - &truth)).unwrap();
    assert!(err <= 1e-3, "recovery error {err}");
}

#[test]
fn objective_trace_is_non_increasing() {
    let sp = space(48, NormMode::WeightedL2);
    let op = ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04));
    let truth = DVector::from_element(48, 1.2);
    let data = random_dataset(&sp, &op, &truth, 120, 0.05, 11);
    let fbar = DVector::from_element(48, 1.0);
    let fit = tikhonov_solve(&op, &sp, &data, &fbar, 1e-3, &GnOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.objective_trace.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn fit_distance_to_fbar_shrinks_with_lambda() {
    // penalty dominance on one fixed dataset across a 10-point grid
    let sp = space(48, NormMode::WeightedL2);
    let quadratic = ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04));
    for op in [ForwardOp::identity(), quadratic] {
        let truth = DVector::from_element(48, 1.4);
        let data = random_dataset(&sp, &op, &truth, 100, 0.05, 12);
        let fbar = DVector::from_element(48, 1.0);
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let lambda = 10f64.powf(-4.0 + k as f64 * 0.6);
            let fit =
                tikhonov_solve(&op, &sp, &data, &fbar, lambda, &GnOptions::default()).unwrap();
            assert!(fit.converged);
            let dist = sp.h1_norm(&(&fit.solution - &fbar)).unwrap();
            assert!(
                dist <= prev * (1.0 + 1e-9),
                "lambda={lambda}: {dist} after {prev}"
            );
            prev = dist;
        }
    }
}

#[test]
fn population_solution_fixed_points_and_limits() {
    let n = 40;
    let sp = space(n, NormMode::WeightedL2);
    let op = ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04));
    let fbar_vals = DVector::from_element(n, 1.0);
    let t = op.population_t(&sp, &fbar_vals).unwrap();
    let ubar = sp.fold(&fbar_vals);
    // f_rho = fbar stays fixed
    let sol = population_linearized_solution(&t, &ubar, &ubar, 0.1).unwrap();
    assert!((&sol - &ubar).norm() < 1e-12);
    // dominated limit
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let urho = &ubar + DVector::from_fn(n, |_, _| 0.3 * (rng.random::<f64>() - 0.5));
    let t_norm = SymEig::new(&t).unwrap().values[0];
    let sol = population_linearized_solution(&t, &urho, &ubar, 1e9 * t_norm).unwrap();
    assert!((&sol - &ubar).norm() < 1e-6 * ubar.norm());
    // stationarity: lambda (u - ubar) = T (urho - u)
    let lambda = 0.03;
    let sol = population_linearized_solution(&t, &urho, &ubar, lambda).unwrap();
    let lhs = (&sol - &ubar) * lambda;
    let rhs = &t * (&urho - &sol);
    assert!((lhs - rhs).norm() < 1e-10);
}

#[test]
fn approximation_error_bound_for_holder_sources() {
    // ||f_lambda - f_rho|| <= ||g|| lambda^r for sources f_rho - fbar = T^r g
    let n = 48;
    let sp = space(n, NormMode::WeightedL2);
    let op = ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04));
    let fbar_vals = DVector::from_element(n, 1.0);
    let t = op.population_t(&sp, &fbar_vals).unwrap();
    let eig = SymEig::new(&t).unwrap().clamped_nonneg();
    let ubar = sp.fold(&fbar_vals);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let g_norm = g.norm();
    for r in [0.5, 1.0] {
        let urho = &ubar + eig.spectral_fn_apply(|s| s.powf(r), &g);
        for k in 0..20 {
            let lambda = 10f64.powf(-6.0 + 6.0 * k as f64 / 19.0);
            let sol = population_linearized_solution(&t, &urho, &ubar, lambda).unwrap();
            let err = (&sol - &urho).norm();
            let bound = g_norm * lambda.powf(r);
            assert!(
                err <= bound + 1e-10,
                "r={r} lambda={lambda}: {err} vs {bound}"
            );
        }
    }
}

#[test]
fn lambda_choice_closed_forms() {
    // phi = t^{1/2}, no decay: Theta(t) = t^{3/2}, m = 729 -> 1/9
    let phi = IndexFunction::holder(0.5, 1.0).unwrap();
    let c = lambda_choice(729, &phi, None).unwrap();
    assert!(!c.saturated);
    assert!((c.lambda - 1.0 / 9.0).abs() < 1e-9);
    // phi = t^{1/2}, b = 2: Psi(t) = t^{5/4}, m = 1024 -> 1024^{-2/5}
    let c = lambda_choice(1024, &phi, Some(2.0)).unwrap();
    assert!((c.lambda - 0.0625).abs() < 1e-9);
    // phi = t, b = 2, m = 1: lambda = 1 at unit scale
    let phi1 = IndexFunction::holder(1.0, 1.5).unwrap();
    let c = lambda_choice(1, &phi1, Some(2.0)).unwrap();
    assert!((c.lambda - 1.0).abs() < 1e-9);
}

#[test]
fn lambda_choice_matches_closed_form_grid() {
    for &r in &[0.5, 0.75, 1.0] {
        for &b in &[1.5, 2.0, 4.0] {
            for &m in &[100usize, 1000, 10_000] {
                let phi = IndexFunction::holder(r, 10.0).unwrap();
                let got = lambda_choice(m, &phi, Some(b)).unwrap();
                let expect = (m as f64).powf(-b / (2.0 * b * r + b + 1.0));
                assert!(
                    (got.lambda - expect).abs() <= 1e-8 * expect,
                    "r={r} b={b} m={m}: {} vs {expect}",
                    got.lambda
                );
            }
        }
    }
}

#[test]
fn lambda_choice_inverts_log_type_rules() {
    // phi(t) = t log^{-1/2}(1/t) on (0, 1/2]: strictly increasing, no
    // closed-form inverse; the bisection must satisfy the rule equation
    let phi = IndexFunction::new(
        invlearn_core::tikhonov::IndexFamily::LogType { p: 1, nu: 0.5 },
        0.5,
    )
    .unwrap();
    for &m in &[100usize, 10_000] {
        let c = lambda_choice(m, &phi, None).unwrap();
        assert!(!c.saturated);
        let target = 1.0 / (m as f64).sqrt();
        let theta = c.lambda * phi.eval(c.lambda);
        assert!(
            (theta - target).abs() <= 1e-8 * target,
            "m={m}: Theta(lambda)={theta} vs {target}"
        );
        let c2 = lambda_choice(m, &phi, Some(2.0)).unwrap();
        let psi = c2.lambda.powf(0.75) * phi.eval(c2.lambda);
        assert!((psi - target).abs() <= 1e-8 * target);
    }
}

#[test]
fn lambda_choice_saturates_at_domain_cap() {
    let phi = IndexFunction::holder(0.5, 0.01).unwrap();
    let c = lambda_choice(1, &phi, None).unwrap();
    assert!(c.saturated);
    assert_eq!(c.lambda, 0.01);
}

#[test]
fn rate_exponent_table() {
    let e = rate_exponents(0.5, 2.0);
    assert!((e.h1_exponent - 0.2).abs() < 1e-15);
    assert!((e.prediction_exponent - 0.4).abs() < 1e-15);
    assert!(e.within_theory);
    let e = rate_exponents(1.0, 2.0);
    assert!((e.h1_exponent - 2.0 / 7.0).abs() < 1e-15);
    let e = rate_exponents(2.0, 2.0);
    assert!(!e.within_theory); // beyond the Tikhonov qualification
    let e = rate_exponents(0.5, 2.0);
    assert!((e.pphi_exponent - 1.0 / 6.0).abs() < 1e-15);
    // 0 < exponent < 1/2, increasing in both r and b
    let mut prev_r = 0.0;
    for k in 0..=10 {
        let r = 0.5 + 0.05 * k as f64;
        let e = rate_exponents(r, 2.0);
        assert!(e.h1_exponent > prev_r && e.h1_exponent < 0.5);
        prev_r = e.h1_exponent;
    }
    let mut prev_b = 0.0;
    for k in 0..=10 {
        let b = 1.1 + 0.4 * k as f64;
        let e = rate_exponents(0.75, b);
        assert!(e.h1_exponent > prev_b && e.h1_exponent < 0.5);
        prev_b = e.h1_exponent;
    }
}

#[test]
fn smallness_condition_arithmetic() {
    assert!(smallness_check(0.0, 123.0));
    assert!(smallness_check(0.4, 1.0)); // 0.8 < 1
    assert!(!smallness_check(0.5, 1.0)); // exactly 1 is not small
}

#[test]
fn index_function_hypotheses() {
    let phi = IndexFunction::holder(0.75, 1.0).unwrap();
    assert!(phi.upper_rate_hypotheses_hold(1e-8, 200));
    // phi(0) = 0 and nondecreasing on a grid
    assert_eq!(phi.eval(0.0), 0.0);
    let mut prev = -1.0;
    for k in 0..100 {
        let v = phi.eval(k as f64 / 99.0);
        assert!(v >= prev);
        prev = v;
    }
    // r < 1/2 violates the sqrt-split monotonicity
    let rough = IndexFunction::holder(0.25, 1.0).unwrap();
    assert!(!rough.upper_rate_hypotheses_hold(1e-8, 200));
    // log-type: constructible below cap 1, checker runs
    let lt = IndexFunction::new(
        invlearn_core::tikhonov::IndexFamily::LogType { p: 1, nu: 0.5 },
        0.5,
    )
    .unwrap();
    let _ = lt.upper_rate_hypotheses_hold(1e-6, 100);
    assert!(IndexFunction::new(
        invlearn_core::tikhonov::IndexFamily::LogType { p: 1, nu: 0.5 },
        1.5
    )
    .is_err());
}

#[test]
fn multi_start_returns_a_no_worse_fit() {
    let sp = space(40, NormMode::WeightedL2);
    let op = ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04));
    let truth = DVector::from_element(40, 1.3);
    let data = random_dataset(&sp, &op, &truth, 80, 0.05, 16);
    let fbar = DVector::from_element(40, 1.0);
    let single = tikhonov_solve(&op, &sp, &data, &fbar, 1e-3, &GnOptions::default()).unwrap();
    let multi = tikhonov_solve(
        &op,
        &sp,
        &data,
        &fbar,
        1e-3,
        &GnOptions {
            multi_start: 5,
            multi_start_seed: 99,
            ..GnOptions::default()
        },
    )
    .unwrap();
    let o1 = *single.objective_trace.last().unwrap();
    let o2 = *multi.objective_trace.last().unwrap();
    assert!(o2 <= o1 * (1.0 + 1e-12));
}

#[test]
fn failed_convergence_is_reported_not_hidden() {
    // one allowed iteration on a non-linear problem cannot meet a 1e-9
    // step tolerance from a distant start
    let sp = space(32, NormMode::WeightedL2);
    let op = ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04));
    let truth = DVector::from_element(32, 2.0);
    let data = random_dataset(&sp, &op, &truth, 60, 0.0, 17);
    let fbar = DVector::from_element(32, 0.3);
    let opts = GnOptions {
        max_iters: 1,
        ..GnOptions::default()
    };
    let fit = tikhonov_solve(&op, &sp, &data, &fbar, 1e-6, &opts).unwrap();
    assert!(!fit.converged);
    let _ = DMatrix::<f64>::zeros(1, 1);
}
