//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible under `--nocapture`). Run with
//! `cargo test -p invlearn-cli --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use invlearn_core::experiments::{
    pinelis_tail_check, run_rate_study, simulate, ConcentrationContext, ConcentrationQuantity,
    LambdaRule, NoiseModel, RateStudyConfig, SourceSpec,
};
use invlearn_core::hilbert::{
    decay_bound_constant, effective_dimension, effective_dimension_with_bound, Grid, NormMode,
    RkhsBasis, Space,
};
use invlearn_core::kernels::{certify_decay, estimate_decay, Kernel};
use invlearn_core::linalg::{linear_fit, SymEig};
use invlearn_core::lowerbound::{
    build_hard_family, hs_operator_lipschitz_check, hs_sqrt_perturbation_check,
};
use invlearn_core::operators::{ForwardOp, Theta};
use invlearn_core::tikhonov::{
    population_linearized_solution, tikhonov_solve, GnOptions, IndexFunction,
};

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!(
        "ACCEPTANCE {id:2} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} {name}: {detail}");
}

fn sobolev_space(n: usize, mode: NormMode) -> Space {
    let kernel = Kernel::sobolev1d(1, 0.0, 1.0).unwrap();
    let grid = Grid::trapezoid(0.0, 1.0, n, false).unwrap();
    Space::new(RkhsBasis::new(kernel, grid).unwrap(), mode)
}

fn study_operator() -> ForwardOp {
    ForwardOp::quadratic_integral(Theta::gaussian(4.5, 0.04))
}

fn study_config(r: f64, sigma: f64, ms: Vec<usize>, replicates: usize, b: f64) -> RateStudyConfig {
    let phi = IndexFunction::holder(r, 2.0).unwrap();
    let source = SourceSpec::new(phi.clone(), 1.0, 0.25, 11).unwrap();
    RateStudyConfig {
        ms,
        replicates,
        noise: NoiseModel::Gaussian { sigma },
        phi,
        b,
        source,
        seed: 7,
        lambda_rule: LambdaRule::Psi,
        lambda_scale: 1.0,
        condition_eta: 0.1,
        gn: GnOptions::default(),
        positivity_floor: Some(0.0),
    }
}

fn grid_decay_b(space: &Space) -> f64 {
    estimate_decay(space.basis().gram(), space.grid().weights())
        .unwrap()
        .fitted_b
}

/// Criterion 1: identity-operator Tikhonov matches the closed-form
/// normal-equation solve within 1e-8 in H1 norm, 20 random instances.
#[test]
fn criterion_01_linear_oracle_equivalence() {
    let t0 = Instant::now();
    let op = ForwardOp::identity();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut max_gap = 0.0_f64;
    for trial in 0..20 {
        let mode = if trial % 2 == 0 {
            NormMode::WeightedL2
        } else {
            NormMode::Rkhs
        };
        let sp = sobolev_space(64, mode);
        let m = 20 + (rng.random::<u32>() % 181) as usize; // m <= 200
        let truth = DVector::from_fn(64, |i, _| (i as f64 * 0.17).sin() + 0.5);
        let data = simulate(
            &op,
            &sp,
            &truth,
            m,
            NoiseModel::Gaussian { sigma: 0.05 },
            2000 + trial as u64,
        )
        .unwrap();
        let lambda = 10f64.powf(-(1.0 + 2.5 * rng.random::<f64>()));
        let fbar = DVector::from_element(64, 0.3);
        let fit = tikhonov_solve(&op, &sp, &data, &fbar, lambda, &GnOptions::default()).unwrap();
        assert!(fit.converged);
        // independent dense solve of (E^T E / m + lambda M) v = E^T y / m + lambda M fbar
        let e = sp.basis().eval_matrix(&data.x).unwrap();
        let metric = sp.h1_metric();
        let a = e.transpose() * &e / m as f64 + &metric * lambda;
        let rhs = e.transpose() * DVector::from_column_slice(&data.y) / m as f64
            + &metric * &fbar * lambda;
        let oracle = a.lu().solve(&rhs).unwrap();
        let gap = sp.h1_norm(&(&fit.solution - &oracle)).unwrap();
        max_gap = max_gap.max(gap);
    }
    let elapsed = t0.elapsed();
    verdict(
        1,
        "linear-oracle equivalence",
        max_gap <= 1e-8 && elapsed.as_secs() < 10,
        format!("max H1 gap {max_gap:.2e} over 20 instances in {elapsed:.2?}"),
    );
}

/// Criteria 2 and 3: the minimax H1 slope and the prediction-error slope
/// of the r = 1/2 study (shared run; tolerance 0.15 around -0.2 / -0.4).
#[test]
fn criterion_02_03_minimax_and_prediction_slopes() {
    let t0 = Instant::now();
    let sp = sobolev_space(64, NormMode::WeightedL2);
    let op = study_operator();
    let fbar = DVector::from_element(64, 1.0);
    let b = grid_decay_b(&sp);
    let cfg = study_config(0.5, 0.02, vec![50, 100, 200, 400, 800, 1600, 3200], 20, b);
    let res = run_rate_study(cfg, &op, &sp, &fbar, || 0.0).unwrap();
    let elapsed = t0.elapsed();
    let h1_ok = (res.fitted_slope_h1 - (-0.2)).abs() <= 0.15;
    verdict(
        2,
        "minimax H1 slope (r = 1/2)",
        h1_ok && elapsed.as_secs() < 600,
        format!(
            "fitted {:.4} vs -0.2 +/- 0.15 (b-hat {b:.3}, medians {:?}, {elapsed:.1?})",
            res.fitted_slope_h1, res.medians_h1
        ),
    );
    let pred_ok = (res.fitted_slope_pred - (-0.4)).abs() <= 0.15;
    verdict(
        3,
        "prediction-vs-reconstruction gap",
        pred_ok,
        format!(
            "fitted prediction slope {:.4} vs -0.4 +/- 0.15 (H1 slope {:.4})",
            res.fitted_slope_pred, res.fitted_slope_h1
        ),
    );
}

/// Criterion 4: approximation-error bound `||f_l - f_rho|| <= R lambda^r`
/// for r in {1/2, 1} on a 20-point lambda grid.
#[test]
fn criterion_04_approximation_error_bound() {
    let t0 = Instant::now();
    let sp = sobolev_space(64, NormMode::WeightedL2);
    let op = study_operator();
    let fbar = DVector::from_element(64, 1.0);
    let t = op.population_t(&sp, &fbar).unwrap();
    let eig = SymEig::new(&t).unwrap().clamped_nonneg();
    let ubar = sp.fold(&fbar);
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let g = DVector::from_fn(64, |_, _| rng.random::<f64>() - 0.5);
    let big_r = g.norm();
    let mut worst = f64::NEG_INFINITY;
    for r in [0.5, 1.0] {
        let urho = &ubar + eig.spectral_fn_apply(|s| s.powf(r), &g);
        for k in 0..20 {
            let lambda = 10f64.powf(-6.0 + 6.0 * k as f64 / 19.0);
            let sol = population_linearized_solution(&t, &urho, &ubar, lambda).unwrap();
            let err = (&sol - &urho).norm();
            worst = worst.max(err - big_r * lambda.powf(r));
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        4,
        "approximation-error bound",
        worst <= 1e-10 && elapsed.as_secs() < 5,
        format!("max (err - R lambda^r) = {worst:.2e} in {elapsed:.2?}"),
    );
}

/// Criterion 5: effective dimension bounds on the empirical spectrum and
/// the synthetic n^{-2} spectrum.
#[test]
fn criterion_05_effective_dimension() {
    let t0 = Instant::now();
    let sp = sobolev_space(256, NormMode::WeightedL2);
    let cov = invlearn_core::hilbert::empirical_covariance(sp.basis());
    let spectrum: Vec<f64> = SymEig::new(&cov)
        .unwrap()
        .clamped_nonneg()
        .values
        .iter()
        .cloned()
        .collect();
    let kappa2 = sp.basis().kappa().powi(2);
    let lambdas: Vec<f64> = (0..30)
        .map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 29.0))
        .collect();
    let mut trivial_ok = true;
    let mut monotone_ok = true;
    let mut prev = f64::INFINITY;
    for &lam in &lambdas {
        let e = effective_dimension(&spectrum, lam).unwrap();
        trivial_ok &= e.value <= kappa2 / lam;
        monotone_ok &= e.value <= prev * (1.0 + 1e-12);
        prev = e.value;
    }
    let syn: Vec<f64> = (1..=300).map(|n| (n as f64).powf(-2.0)).collect();
    let fit_grid: Vec<f64> = (0..400)
        .map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 399.0))
        .collect();
    let c = decay_bound_constant(&syn, 2.0, &fit_grid).unwrap();
    let mut decay_ok = true;
    for &lam in &lambdas {
        let e = effective_dimension_with_bound(&syn, lam, 2.0, c).unwrap();
        decay_ok &= e.value <= e.decay_bound.unwrap() * (1.0 + 1e-6);
    }
    let elapsed = t0.elapsed();
    verdict(
        5,
        "effective dimension",
        trivial_ok && monotone_ok && decay_ok && elapsed.as_secs() < 5,
        format!(
            "trivial {trivial_ok}, monotone {monotone_ok}, decay bound {decay_ok}, {elapsed:.2?}"
        ),
    );
}

/// Criterion 6: concentration tails over 1e4 trials at m in {50, 200}
/// and eta in {0.3, 0.1, 0.03} for all three sampled quantities.
#[test]
fn criterion_06_concentration() {
    let t0 = Instant::now();
    let sp = sobolev_space(64, NormMode::WeightedL2);
    let ctx = ConcentrationContext::new(sp.basis_arc()).unwrap();
    let noise = NoiseModel::Gaussian { sigma: 0.5 };
    let etas = [0.3, 0.1, 0.03];
    let trials = 10_000;
    let mut all_ok = true;
    let mut details = Vec::new();
    for &m in &[50usize, 200] {
        for quantity in [
            ConcentrationQuantity::NoiseSection,
            ConcentrationQuantity::WhitenedNoiseSection { lambda: 0.01 },
            ConcentrationQuantity::CovarianceDeviation,
        ] {
            let report =
                pinelis_tail_check(&ctx, quantity, noise, trials, m, &etas, 60 + m as u64).unwrap();
            all_ok &= report.within_slack();
            details.push(format!(
                "m={m} {:?}: {:?}",
                quantity, report.empirical_tail_freq
            ));
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        6,
        "concentration tails",
        all_ok && elapsed.as_secs() < 120,
        format!("{} in {elapsed:.1?}", details.join("; ")),
    );
}

/// Criterion 7: quadratic Taylor remainder scales with exponent 2 within
/// 0.05 over three decades.
#[test]
fn criterion_07_taylor_remainder() {
    let t0 = Instant::now();
    let sp = sobolev_space(64, NormMode::WeightedL2);
    let op = study_operator();
    let f0 = DVector::from_element(64, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    let g = DVector::from_fn(64, |_, _| rng.random::<f64>() - 0.5);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 1..=4 {
        let t = 10f64.powi(-k);
        let f = &f0 + &g * t;
        let rem = op.taylor_remainder(&sp, &f, &f0).unwrap();
        xs.push(sp.h1_norm(&(&f - &f0)).unwrap().ln());
        ys.push(rem.ln());
    }
    let (_, slope, _) = linear_fit(&xs, &ys).unwrap();
    let elapsed = t0.elapsed();
    verdict(
        7,
        "Taylor-remainder exponent",
        (slope - 2.0).abs() <= 0.05 && elapsed.as_secs() < 5,
        format!("log-log slope {slope:.4} in {elapsed:.2?}"),
    );
}

/// Criterion 8: both Hilbert-Schmidt lemmas on 100 random pairs, with the
/// square-root ratio within sqrt(2) + 1e-9.
#[test]
fn criterion_08_hs_lemmas() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    let mut lipschitz_ok = true;
    let mut sqrt_ok = true;
    let mut max_ratio = 0.0_f64;
    for _ in 0..100 {
        let a = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let b = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let sa = (&a + a.transpose()) * 0.5;
        let sb = (&b + b.transpose()) * 0.5;
        lipschitz_ok &= hs_operator_lipschitz_check(|t| t.abs(), 1.0, &sa, &sb)
            .unwrap()
            .holds;
        let ba = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let bb = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let chk = hs_sqrt_perturbation_check(&ba, &bb).unwrap();
        sqrt_ok &= chk.holds;
        max_ratio = max_ratio.max(chk.ratio);
    }
    let ratio_ok = max_ratio <= 2.0_f64.sqrt() + 1e-9;
    let elapsed = t0.elapsed();
    verdict(
        8,
        "Hilbert-Schmidt lemmas",
        lipschitz_ok && sqrt_ok && ratio_ok && elapsed.as_secs() < 10,
        format!("max sqrt-ratio {max_ratio:.6} <= sqrt(2), {elapsed:.2?}"),
    );
}

/// Criterion 9: the hard family at eps in {0.1, 0.05} satisfies the
/// source-norm budget, the separation, the packing invariants, and both
/// links of the KL chain.
#[test]
fn criterion_09_lower_bound_family() {
    let t0 = Instant::now();
    let sp = sobolev_space(200, NormMode::Rkhs);
    let op = ForwardOp::quadratic_integral(Theta::pointwise(0.05, sp.grid().weights()));
    let fbar = DVector::from_element(200, 1.0);
    let tbar = op.population_t(&sp, &fbar).unwrap();
    let eigs: Vec<f64> = SymEig::new(&tbar)
        .unwrap()
        .clamped_nonneg()
        .values
        .iter()
        .cloned()
        .collect();
    let cert = certify_decay(&eigs, 100).unwrap();
    let phi = IndexFunction::holder(0.5, 1.0).unwrap();
    let big_r = 105.0;
    let mut all_ok = true;
    let mut details = Vec::new();
    for &eps in &[0.1, 0.05] {
        let fam = build_hard_family(&op, &sp, &fbar, &phi, big_r, eps, &cert, 33).unwrap();
        let g_ok = fam.g_norms.iter().all(|&g| g <= big_r * (1.0 + 1e-12));
        let sep_ok = fam.min_separation() >= eps * fam.upsilon && fam.upsilon > 0.0;
        let packing_ok = fam.ell > 16 && fam.count() as f64 >= ((fam.ell as f64) / 24.0).exp();
        let (kl1, kl2) = fam.kl_chain_holds();
        all_ok &= g_ok && sep_ok && packing_ok && kl1 && kl2;
        details.push(format!(
            "eps={eps}: ell={} N={} upsilon={:.3} g<=R {} sep {} packing {} KL ({},{})",
            fam.ell,
            fam.count(),
            fam.upsilon,
            g_ok,
            sep_ok,
            packing_ok,
            kl1,
            kl2
        ));
    }
    let elapsed = t0.elapsed();
    verdict(
        9,
        "lower-bound family",
        all_ok && elapsed.as_secs() < 120,
        format!("{} in {elapsed:.1?}", details.join("; ")),
    );
}

/// Criterion 10: the r = 2 study saturates: its fitted slope is not
/// steeper than the r = 1 slope by more than 0.05.
#[test]
fn criterion_10_saturation() {
    let sp = sobolev_space(64, NormMode::WeightedL2);
    let op = study_operator();
    let fbar = DVector::from_element(64, 1.0);
    let b = grid_decay_b(&sp);
    let ms = vec![50, 100, 200, 400, 800, 1600];
    let res1 = run_rate_study(
        study_config(1.0, 0.01, ms.clone(), 10, b),
        &op,
        &sp,
        &fbar,
        || 0.0,
    )
    .unwrap();
    let res2 = run_rate_study(study_config(2.0, 0.01, ms, 10, b), &op, &sp, &fbar, || 0.0).unwrap();
    let pass = res2.fitted_slope_h1 >= res1.fitted_slope_h1 - 0.05;
    verdict(
        10,
        "saturation at qualification one",
        pass,
        format!(
            "slope(r=2) {:.4} vs slope(r=1) {:.4}",
            res2.fitted_slope_h1, res1.fitted_slope_h1
        ),
    );
}

/// Criterion 11: the golden-seed rate study writes byte-identical CSV
/// and summary across two runs of the binary.
#[test]
fn criterion_11_determinism() {
    let bin = env!("CARGO_BIN_EXE_invlearn");
    let config: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join("rate_study_smoke.json");
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let status = std::process::Command::new(bin)
            .args(["rate-study", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(d.path())
            .args(["--workers", "3"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let rows1 = std::fs::read(d1.path().join("rows.csv")).unwrap();
    let rows2 = std::fs::read(d2.path().join("rows.csv")).unwrap();
    let sum1 = std::fs::read(d1.path().join("summary.json")).unwrap();
    let sum2 = std::fs::read(d2.path().join("summary.json")).unwrap();
    verdict(
        11,
        "byte-identical golden runs",
        rows1 == rows2 && sum1 == sum2,
        format!("rows {} bytes, summary {} bytes", rows1.len(), sum1.len()),
    );
}
