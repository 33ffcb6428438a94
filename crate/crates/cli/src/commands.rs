//! The five CLI commands: solve, rate-study, effdim, lower-bound, check.
//!
//! Every command is a pure function of (config, seed): outputs land only
//! under the declared output directory and are byte-identical across
//! repeated runs (wall-clock timing is off by default).

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use invlearn_core::experiments::{
    build_source_truth, pinelis_tail_check, simulate, ConcentrationContext, ConcentrationQuantity,
    NoiseModel, RateRow, RateStudy,
};
use invlearn_core::hilbert::{
    decay_bound_constant, effective_dimension, effective_dimension_with_bound, Grid, NormMode,
    RkhsBasis, Space,
};
use invlearn_core::kernels::{certify_decay, estimate_decay, Kernel};
use invlearn_core::linalg::SymEig;
use invlearn_core::lowerbound::{
    build_hard_family, hs_operator_lipschitz_check, hs_sqrt_perturbation_check, pack_signs,
};
use invlearn_core::operators::{ForwardOp, Theta};
use invlearn_core::tikhonov::{tikhonov_solve, IndexFunction};

use crate::config::{
    covariance_spectrum, load_config, EffdimFileConfig, LowerBoundFileConfig, Problem,
    RateStudyFileConfig, SolveFileConfig,
};
use crate::error::{CliError, Result};
use crate::io;

fn config_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))
}

/// `solve --config <path>`: one Tikhonov fit, one CSV row.
/// Exit codes: 0 converged, 2 not converged, 1 bad config.
pub fn cmd_solve(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    verbose: bool,
) -> Result<()> {
    let cfg: SolveFileConfig = load_config(config_path)?;
    ensure_out_dir(out)?;
    let dir = config_dir(config_path);
    let Problem { space, op, fbar } = cfg.problem.build(&dir)?;
    if !(cfg.lambda > 0.0) {
        return Err(CliError::config("lambda must be positive"));
    }
    let (data, truth) = match (&cfg.data.csv, &cfg.data.simulate) {
        (Some(path), None) => (io::read_sample_set_from(&dir.join(path))?, None),
        (None, Some(sim)) => {
            let seed = seed_override.unwrap_or(sim.seed);
            let noise = sim.noise.build()?;
            let truth_values = match (&sim.truth.source, &sim.truth.constant) {
                (Some(source), None) => {
                    let spec = source.build()?;
                    build_source_truth(&op, &space, &fbar, &spec)?.f_rho
                }
                (None, Some(c)) => DVector::from_element(space.len(), *c),
                _ => {
                    return Err(CliError::config(
                        "data.simulate.truth needs exactly one of source | constant",
                    ))
                }
            };
            let data = simulate(&op, &space, &truth_values, sim.m, noise, seed)?;
            (data, Some(truth_values))
        }
        _ => return Err(CliError::config("data needs exactly one of csv | simulate")),
    };
    let fit = tikhonov_solve(&op, &space, &data, &fbar, cfg.lambda, &cfg.gn.build()?)?;
    let (err_h1, err_pred) = match &truth {
        Some(t) => {
            let dh = space.h1_norm(&(&fit.solution - t))?;
            let dp = op.apply_nodes(&space, &fit.solution)? - op.apply_nodes(&space, t)?;
            (Some(dh), Some(space.grid().l2_norm(&dp)))
        }
        None => (None, None),
    };
    io::write_fit_csv(&out.join(&cfg.out_csv), data.len(), &fit, err_h1, err_pred)?;
    if verbose {
        eprintln!(
            "solve: m={} lambda={} iters={} converged={} misfit={:.3e}",
            data.len(),
            fit.lambda,
            fit.gn_iters,
            fit.converged,
            fit.residual_norm
        );
    }
    if !fit.converged {
        return Err(CliError::numerical(
            "solver did not converge; diagnostics written to the fit CSV",
        ));
    }
    Ok(())
}

/// `rate-study --config <path>`: Monte Carlo rate study; rows CSV plus a
/// summary JSON with fitted vs theoretical exponents.
pub fn cmd_rate_study(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    workers: Option<usize>,
    verbose: bool,
) -> Result<()> {
    let cfg: RateStudyFileConfig = load_config(config_path)?;
    ensure_out_dir(out)?;
    let dir = config_dir(config_path);
    let Problem { space, op, fbar } = cfg.problem.build(&dir)?;
    let b = match cfg.b {
        Some(b) => b,
        None => {
            let fit = estimate_decay(space.basis().gram(), space.grid().weights())?;
            if !fit.satisfies_decay_assumption() {
                return Err(CliError::numerical(format!(
                    "estimated decay exponent {} does not satisfy b > 1",
                    fit.fitted_b
                )));
            }
            fit.fitted_b
        }
    };
    let seed = seed_override.unwrap_or(cfg.seed);
    let study_cfg = cfg.build_study_config(b, seed)?;
    let study = RateStudy::prepare(study_cfg, &op, &space, &fbar)?;
    if verbose {
        eprintln!(
            "rate-study: b={b:.4} lambdas={:?} truth halvings={}",
            study.lambdas, study.truth.halvings
        );
    }

    let cells: Vec<(usize, usize)> = (0..study.config.ms.len())
        .flat_map(|mi| (0..study.config.replicates).map(move |rep| (mi, rep)))
        .collect();
    let run_cell = |&(mi, rep): &(usize, usize)| -> Result<RateRow> {
        let t0 = cfg.record_seconds.then(Instant::now);
        let mut row = study.cell(&op, &space, &fbar, mi, rep)?;
        if let Some(t0) = t0 {
            row.seconds = t0.elapsed().as_secs_f64();
        }
        Ok(row)
    };
    let rows: Vec<RateRow> = match workers {
        Some(1) | None => cells.iter().map(run_cell).collect::<Result<_>>()?,
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::config(format!("worker pool: {e}")))?;
            pool.install(|| cells.par_iter().map(run_cell).collect::<Result<_>>())?
        }
    };
    let result = study.assemble(rows)?;
    io::write_rate_rows_csv(&out.join(&cfg.out_rows), &result.rows)?;

    let tol = cfg.slope_tolerance;
    let h1_ok = result
        .theoretical_h1
        .map(|t| (result.fitted_slope_h1 - t).abs() <= tol);
    let pred_ok = result
        .theoretical_pred
        .map(|t| (result.fitted_slope_pred - t).abs() <= tol);
    let summary = json!({
        "b": b,
        "lambdas": study.lambdas,
        "fitted_slope_h1": result.fitted_slope_h1,
        "fitted_slope_pred": result.fitted_slope_pred,
        "slope_stderr": result.slope_stderr,
        "theoretical_h1": result.theoretical_h1,
        "theoretical_pred": result.theoretical_pred,
        "restricted_slope_h1": result.restricted_slope_h1,
        "restricted_slope_pred": result.restricted_slope_pred,
        "medians_h1": result.medians_h1,
        "medians_pred": result.medians_pred,
        "failed_cells": result.failed_cells,
        "truth": {
            "g_norm_used": study.truth.g_norm_used,
            "halvings": study.truth.halvings,
            "fixedpoint_iterations": study.truth.iterations,
            "fixedpoint_residual": study.truth.residual,
        },
        "criteria": {
            "slope_tolerance": tol,
            "h1_slope_within_tolerance": h1_ok,
            "pred_slope_within_tolerance": pred_ok,
        },
    });
    std::fs::write(
        out.join(&cfg.out_summary),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    if verbose {
        eprintln!(
            "rate-study: slope_h1={:.4} slope_pred={:.4} (theory {:?}/{:?})",
            result.fitted_slope_h1,
            result.fitted_slope_pred,
            result.theoretical_h1,
            result.theoretical_pred
        );
    }
    Ok(())
}

/// `effdim --config <path>`: effective-dimension table of the kernel
/// spectrum over a lambda grid, with the trivial and decay bounds.
pub fn cmd_effdim(config_path: &Path, out: &Path) -> Result<()> {
    let cfg: EffdimFileConfig = load_config(config_path)?;
    ensure_out_dir(out)?;
    let kernel = cfg.kernel.build()?;
    let grid = cfg.grid.build()?;
    let basis = RkhsBasis::new(kernel, grid)?;
    let spectrum = covariance_spectrum(&basis)?;
    let lambdas = cfg.lambda_grid.build()?;
    let decay = estimate_decay(basis.gram(), basis.grid().weights()).ok();
    let decay_c = decay
        .as_ref()
        .filter(|d| d.satisfies_decay_assumption())
        .map(|d| decay_bound_constant(&spectrum, d.fitted_b, &lambdas).map(|c| (d.fitted_b, c)))
        .transpose()?;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let e = match decay_c {
            Some((b, c)) => effective_dimension_with_bound(&spectrum, lambda, b, c)?,
            None => effective_dimension(&spectrum, lambda)?,
        };
        rows.push((lambda, e.value, e.trivial_bound, e.decay_bound));
    }
    io::write_effdim_csv(&out.join(&cfg.out_csv), &rows)?;
    Ok(())
}

/// `lower-bound --config <path>`: construct the hard family per epsilon;
/// JSON manifest plus a pairwise CSV.
pub fn cmd_lower_bound(config_path: &Path, out: &Path, seed_override: Option<u64>) -> Result<()> {
    let cfg: LowerBoundFileConfig = load_config(config_path)?;
    ensure_out_dir(out)?;
    let dir = config_dir(config_path);
    let Problem { space, op, fbar } = cfg.problem.build(&dir)?;
    let phi = cfg.phi.build()?;
    let seed = seed_override.unwrap_or(cfg.seed);

    let tbar = op.population_t(&space, &fbar)?;
    let eigs: Vec<f64> = SymEig::new(&tbar)?
        .clamped_nonneg()
        .values
        .iter()
        .cloned()
        .collect();
    let cert = certify_decay(&eigs, cfg.decay_modes)?;

    let mut manifests = Vec::new();
    let mut pair_rows = Vec::new();
    for &epsilon in &cfg.epsilons {
        let fam = build_hard_family(&op, &space, &fbar, &phi, cfg.big_r, epsilon, &cert, seed)?;
        let (kl_first, kl_second) = fam.kl_chain_holds();
        let packing_ok = {
            // re-derive the packing invariants from the built family size
            fam.count() as f64 >= ((fam.ell as f64) / 24.0).exp()
        };
        manifests.push(json!({
            "epsilon": epsilon,
            "ell": fam.ell,
            "count": fam.count(),
            "upsilon": fam.upsilon,
            "zeta": fam.zeta,
            "c_tilde": fam.c_tilde,
            "j": fam.j,
            "b": fam.decay.b,
            "alpha": fam.decay.alpha,
            "beta": fam.decay.beta,
            "g_norm_max": fam.g_norms.iter().cloned().fold(0.0_f64, f64::max),
            "min_separation": fam.min_separation(),
            "separation_ok": fam.min_separation() >= epsilon * fam.upsilon,
            "packing_ok": packing_ok,
            "kl_chain_first": kl_first,
            "kl_chain_second": kl_second,
        }));
        for i in 0..fam.count() {
            for j in 0..i {
                pair_rows.push((
                    epsilon,
                    i,
                    j,
                    fam.pairwise_h1_gaps[(i, j)],
                    fam.pairwise_pred_gap_sq[(i, j)],
                    fam.kl_matrix[(i, j)],
                ));
            }
        }
    }
    std::fs::write(
        out.join(&cfg.out_manifest),
        serde_json::to_string_pretty(&json!({
            "R": cfg.big_r,
            "decay_modes": cfg.decay_modes,
            "families": manifests,
        }))? + "\n",
    )?;
    io::write_pairs_csv(&out.join(&cfg.out_pairs), &pair_rows)?;
    Ok(())
}

// ---------------------------------------------------------------------
// check suites
// ---------------------------------------------------------------------

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl std::fmt::Display) -> Check {
    Check {
        name,
        passed,
        detail: detail.to_string(),
    }
}

fn default_space(n: usize, mode: NormMode) -> Result<Space> {
    let kernel = Kernel::sobolev1d(1, 0.0, 1.0)?;
    let grid = Grid::trapezoid(0.0, 1.0, n, false)?;
    Ok(Space::new(RkhsBasis::new(kernel, grid)?, mode))
}

fn suite_effdim() -> Result<Vec<Check>> {
    let space = default_space(128, NormMode::WeightedL2)?;
    let spectrum = covariance_spectrum(space.basis())?;
    let kappa2 = space.basis().kappa().powi(2);
    let lambdas: Vec<f64> = (0..30)
        .map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 29.0))
        .collect();
    let mut trivial_ok = true;
    let mut monotone_ok = true;
    let mut prev = f64::INFINITY;
    for &lam in &lambdas {
        let e = effective_dimension(&spectrum, lam)?;
        if e.value > kappa2 / lam {
            trivial_ok = false;
        }
        if e.value > prev * (1.0 + 1e-12) {
            monotone_ok = false;
        }
        prev = e.value;
    }
    // synthetic n^{-2} spectrum against the decay bound with C fitted once
    let syn: Vec<f64> = (1..=300).map(|n| (n as f64).powf(-2.0)).collect();
    let fit_grid: Vec<f64> = (0..400)
        .map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 399.0))
        .collect();
    let c = decay_bound_constant(&syn, 2.0, &fit_grid)?;
    let mut decay_ok = true;
    for &lam in &lambdas {
        let e = effective_dimension_with_bound(&syn, lam, 2.0, c)?;
        if e.value > e.decay_bound.unwrap() * (1.0 + 1e-6) {
            decay_ok = false;
        }
    }
    Ok(vec![
        check(
            "effdim.trivial-bound",
            trivial_ok,
            "N(lambda) <= kappa^2/lambda on 30-point grid",
        ),
        check(
            "effdim.monotone",
            monotone_ok,
            "N(lambda) non-increasing in lambda",
        ),
        check(
            "effdim.decay-bound",
            decay_ok,
            "N(lambda) <= C lambda^{-1/2} on synthetic n^{-2} spectrum",
        ),
    ])
}

fn suite_hs() -> Result<Vec<Check>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut lipschitz_ok = true;
    let mut sqrt_ok = true;
    let mut max_ratio = 0.0_f64;
    for _ in 0..100 {
        let fa = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let fb = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let sa = (&fa + fa.transpose()) * 0.5;
        let sb = (&fb + fb.transpose()) * 0.5;
        let chk = hs_operator_lipschitz_check(|t| t.abs(), 1.0, &sa, &sb)?;
        lipschitz_ok &= chk.holds;
        let ba = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let bb = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let chk = hs_sqrt_perturbation_check(&ba, &bb)?;
        sqrt_ok &= chk.holds;
        max_ratio = max_ratio.max(chk.ratio);
    }
    let ratio_ok = max_ratio <= 2.0_f64.sqrt() + 1e-9;
    Ok(vec![
        check(
            "hs.operator-lipschitz",
            lipschitz_ok,
            "100 random symmetric pairs",
        ),
        check(
            "hs.sqrt-perturbation",
            sqrt_ok,
            "100 random rectangular pairs",
        ),
        check(
            "hs.sqrt-ratio",
            ratio_ok,
            format!("max observed ratio {max_ratio:.6} <= sqrt(2)"),
        ),
    ])
}

fn suite_concentration() -> Result<Vec<Check>> {
    let space = default_space(64, NormMode::WeightedL2)?;
    let ctx = ConcentrationContext::new(space.basis_arc())?;
    let noise = NoiseModel::Gaussian { sigma: 0.5 };
    let etas = [0.3, 0.1, 0.03];
    let mut checks = Vec::new();
    for (name, quantity) in [
        (
            "concentration.noise-section",
            ConcentrationQuantity::NoiseSection,
        ),
        (
            "concentration.whitened-noise",
            ConcentrationQuantity::WhitenedNoiseSection { lambda: 0.01 },
        ),
        (
            "concentration.covariance-hs",
            ConcentrationQuantity::CovarianceDeviation,
        ),
    ] {
        let report = pinelis_tail_check(&ctx, quantity, noise, 2000, 50, &etas, 7)?;
        checks.push(check(
            name,
            report.within_slack(),
            format!("tail frequencies {:?}", report.empirical_tail_freq),
        ));
    }
    Ok(checks)
}

fn suite_lowerbound() -> Result<Vec<Check>> {
    let space = default_space(120, NormMode::Rkhs)?;
    let op = ForwardOp::quadratic_integral(Theta::pointwise(0.05, space.grid().weights()));
    let fbar = DVector::from_element(space.len(), 1.0);
    let packing = pack_signs(24, 31)?;
    let mut checks = vec![check(
        "lowerbound.packing",
        packing.verify(),
        format!("ell=24, N={}", packing.count()),
    )];
    let tbar = op.population_t(&space, &fbar)?;
    let eigs: Vec<f64> = SymEig::new(&tbar)?
        .clamped_nonneg()
        .values
        .iter()
        .cloned()
        .collect();
    let cert = certify_decay(&eigs, 60)?;
    let phi = IndexFunction::holder(0.5, 1.0)?;
    let big_r = 0.1 * (36.0_f64.powf(cert.b) / cert.alpha).sqrt() * 1.05;
    let fam = build_hard_family(&op, &space, &fbar, &phi, big_r, 0.1, &cert, 5)?;
    let (kl1, kl2) = fam.kl_chain_holds();
    checks.push(check(
        "lowerbound.g-norms",
        fam.g_norms.iter().all(|&g| g <= big_r * (1.0 + 1e-12)),
        format!(
            "max ||g|| = {:.4} <= R = {big_r:.4}",
            fam.g_norms.iter().cloned().fold(0.0_f64, f64::max)
        ),
    ));
    checks.push(check(
        "lowerbound.separation",
        fam.min_separation() >= fam.epsilon * fam.upsilon,
        format!(
            "min gap {:.5} vs eps*upsilon {:.5}",
            fam.min_separation(),
            fam.epsilon * fam.upsilon
        ),
    ));
    checks.push(check(
        "lowerbound.kl-chain",
        kl1 && kl2,
        format!("links: {kl1}, {kl2}"),
    ));
    Ok(checks)
}

/// `check <suite>`: run a property suite; exit 0 iff everything passes,
/// 3 with the failing invariant named otherwise.
pub fn cmd_check(suite: &str) -> Result<()> {
    let checks: Vec<Check> = match suite {
        "effdim" => suite_effdim()?,
        "hs" => suite_hs()?,
        "concentration" => suite_concentration()?,
        "lowerbound" => suite_lowerbound()?,
        "all" => {
            let mut all = suite_effdim()?;
            all.extend(suite_hs()?);
            all.extend(suite_concentration()?);
            all.extend(suite_lowerbound()?);
            all
        }
        other => {
            return Err(CliError::config(format!(
                "unknown suite \"{other}\"; expected effdim | hs | concentration | lowerbound | all"
            )))
        }
    };
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "[{}] {}: {}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.detail
        );
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Property(format!(
            "failing invariants: {}",
            failed.join(", ")
        )))
    }
}
