use invlearn_core::hilbert::{Grid, NormMode, RkhsBasis, Space};
use invlearn_core::kernels::{certify_decay, Kernel};
use invlearn_core::linalg::SymEig;
use invlearn_core::lowerbound::{
    build_hard_family, build_hard_instance, discrete_kl, hs_operator_lipschitz_check,
    hs_sqrt_perturbation_check, pack_signs, HardInstance,
};
use invlearn_core::operators::{ForwardOp, Theta};
use invlearn_core::tikhonov::IndexFunction;
use invlearn_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RKHS-normed space over the Sobolev kernel: the setting in which the
/// linearization at the flat base point inherits the covariance spectrum.
fn rkhs_space(n: usize) -> Space {
    let k = Kernel::sobolev1d(1, 0.0, 1.0).unwrap();
    let grid = Grid::trapezoid(0.0, 1.0, n, false).unwrap();
    Space::new(RkhsBasis::new(k, grid).unwrap(), NormMode::Rkhs)
}

/// Pointwise-square operator `A(f) = c f^2` as a diagonal matrix kernel.
fn pointwise_quadratic(space: &Space, c: f64) -> ForwardOp {
    ForwardOp::quadratic_integral(Theta::pointwise(c, space.grid().weights()))
}

#[test]
fn packing_small_cases() {
    let p = pack_signs(24, 5).unwrap();
    assert!(p.count() >= 3); // ceil(e) = 3
    assert!(p.verify());
    for i in 0..p.count() {
        for j in 0..i {
            let d2: i64 = p.vectors[i]
                .iter()
                .zip(p.vectors[j].iter())
                .map(|(&a, &b)| ((a - b) as i64).pow(2))
                .sum();
            assert!(d2 >= 24);
        }
    }
    let p = pack_signs(48, 5).unwrap();
    assert!(p.count() >= 8); // ceil(e^2) = 8
    assert!(p.verify());
}

#[test]
fn packing_requires_ell_beyond_sixteen() {
    assert!(matches!(pack_signs(16, 0), Err(Error::InvalidArgument(_))));
    assert!(pack_signs(17, 0).is_ok());
}

fn two_atom_instance(u: Vec<f64>, j: f64) -> HardInstance {
    let n = u.len();
    HardInstance {
        f: DVector::zeros(n),
        forward: DVector::from_vec(u),
        j,
        d: 1,
        m_cert: j + j / 4.0,
        sigma_cert: 2.0 * j,
    }
}

#[test]
fn discrete_kl_matches_hand_computation() {
    // single design point, p = (0.6, 0.4) vs q = (0.5, 0.5):
    // KL = 0.6 ln 1.2 + 0.4 ln 0.8
    let k = Kernel::gaussian(1.0, 0.0, 1.0).unwrap();
    let grid = Grid::from_parts(vec![0.5], vec![1.0], true).unwrap();
    let sp = Space::new(RkhsBasis::new(k, grid).unwrap(), NormMode::WeightedL2);
    let p = two_atom_instance(vec![0.2], 1.0); // plus prob (1 + 0.2) / 2 = 0.6
    let q = two_atom_instance(vec![0.0], 1.0);
    let kl = discrete_kl(&p, &q, &sp).unwrap();
    let expect = 0.6 * (1.2_f64).ln() + 0.4 * (0.8_f64).ln();
    assert!((kl - expect).abs() < 1e-12, "{kl} vs {expect}");
    assert!((expect - 0.020136).abs() < 1e-6);
    // identical instances have zero divergence
    assert_eq!(discrete_kl(&p, &p, &sp).unwrap(), 0.0);
}

#[test]
fn discrete_kl_is_nonnegative_on_random_pairs() {
    let k = Kernel::gaussian(1.0, 0.0, 1.0).unwrap();
    let grid = Grid::trapezoid(0.0, 1.0, 9, true).unwrap();
    let sp = Space::new(RkhsBasis::new(k, grid).unwrap(), NormMode::WeightedL2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let j = 1.0 + rng.random::<f64>();
        let u1: Vec<f64> = (0..9)
            .map(|_| (rng.random::<f64>() - 0.5) * j / 2.0)
            .collect();
        let u2: Vec<f64> = (0..9)
            .map(|_| (rng.random::<f64>() - 0.5) * j / 2.0)
            .collect();
        let p = two_atom_instance(u1, j);
        let q = two_atom_instance(u2, j);
        assert!(discrete_kl(&p, &q, &sp).unwrap() >= 0.0);
    }
}

#[test]
fn discrete_kl_flags_vanishing_atoms() {
    let k = Kernel::gaussian(1.0, 0.0, 1.0).unwrap();
    let grid = Grid::from_parts(vec![0.5], vec![1.0], true).unwrap();
    let sp = Space::new(RkhsBasis::new(k, grid).unwrap(), NormMode::WeightedL2);
    // q's plus atom has zero mass (u = -J) while p's is positive
    let p = two_atom_instance(vec![0.2], 1.0);
    let q = two_atom_instance(vec![-1.0], 1.0);
    assert!(matches!(discrete_kl(&p, &q, &sp), Err(Error::InfiniteKl)));
    // mismatched J values cannot share atoms
    let q2 = two_atom_instance(vec![0.0], 2.0);
    assert!(matches!(
        discrete_kl(&p, &q2, &sp),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn hard_instance_with_too_small_j_names_the_offending_node() {
    use invlearn_core::lowerbound::build_hard_instance_with_j;
    let sp = rkhs_space(32);
    let op = pointwise_quadratic(&sp, 0.05);
    let f = DVector::from_element(32, 1.0);
    // A(f) = 0.05 everywhere; J below that makes a(x) = J - A(f)(x) < 0
    match build_hard_instance_with_j(&op, &sp, &f, 1, 0.01) {
        Err(Error::NegativeWeight { x, value }) => {
            assert!((0.0..=1.0).contains(&x));
            assert!(value < 0.0);
        }
        other => panic!("expected NegativeWeight, got {other:?}"),
    }
}

#[test]
fn hard_instance_rejects_zero_image() {
    let sp = rkhs_space(32);
    let op = pointwise_quadratic(&sp, 0.05);
    let zero = DVector::zeros(32);
    assert!(matches!(
        build_hard_instance(&op, &sp, &zero, 1),
        Err(Error::ZeroImage)
    ));
    let one = DVector::from_element(32, 1.0);
    assert!(matches!(
        build_hard_instance(&op, &sp, &one, 2),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn hard_instance_weights_and_conditional_mean() {
    let sp = rkhs_space(48);
    let op = pointwise_quadratic(&sp, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = DVector::from_fn(48, |_, _| 0.8 + 0.4 * rng.random::<f64>());
    let inst = build_hard_instance(&op, &sp, &f, 1).unwrap();
    // the forward image is pointwise dominated: |A(f)(x)| <= J/4
    for i in 0..48 {
        assert!(inst.forward[i].abs() <= inst.j / 4.0 + 1e-12);
        // conditional mean reproduces the forward image in closed form
        assert!((inst.conditional_mean(i) - inst.forward[i]).abs() < 1e-12);
    }
    // certificate arithmetic
    assert!((inst.m_cert - (inst.j + inst.j / 4.0)).abs() < 1e-15);
    assert!((inst.sigma_cert - 2.0 * inst.j).abs() < 1e-15);
    // Monte Carlo conditional mean at two nodes
    let trials = 100_000;
    for &node in &[7usize, 31] {
        let mut acc = 0.0;
        for _ in 0..trials {
            acc += inst.sample_y(node, &mut rng);
        }
        let mean = acc / trials as f64;
        let tol = 4.0 * inst.j / (trials as f64).sqrt();
        assert!(
            (mean - inst.forward[node]).abs() < tol,
            "node {node}: {mean} vs {}",
            inst.forward[node]
        );
    }
}

#[test]
fn hs_operator_lipschitz_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rand_sym = |n: usize| {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        (&m + m.transpose()) * 0.5
    };
    // identity function: equality within rounding
    let f = rand_sym(8);
    let chk = hs_operator_lipschitz_check(|t| t, 1.0, &f, &f).unwrap();
    assert!(chk.holds && chk.lhs <= 1e-12);
    let g = rand_sym(8);
    let chk = hs_operator_lipschitz_check(|t| t, 1.0, &f, &g).unwrap();
    assert!(chk.holds);
    assert!(
        (chk.ratio - 1.0).abs() < 1e-10,
        "identity ratio {}",
        chk.ratio
    );
    // |t| is 1-Lipschitz; clipped variants stay 1-Lipschitz
    for _ in 0..100 {
        let a = rand_sym(8);
        let b = rand_sym(8);
        let chk = hs_operator_lipschitz_check(|t| t.abs(), 1.0, &a, &b).unwrap();
        assert!(chk.holds, "abs: {} > {}", chk.lhs, chk.rhs);
        let chk = hs_operator_lipschitz_check(|t| t.abs().min(0.5), 1.0, &a, &b).unwrap();
        assert!(chk.holds, "clipped abs: {} > {}", chk.lhs, chk.rhs);
    }
}

#[test]
fn hs_sqrt_perturbation_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rand_mat =
        |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let b = rand_mat(6, 4);
    let chk = hs_sqrt_perturbation_check(&b, &b).unwrap();
    assert!(chk.holds && chk.lhs <= 1e-12);
    // sign flip leaves T unchanged
    let neg = -&b;
    let chk = hs_sqrt_perturbation_check(&b, &neg).unwrap();
    assert!(chk.holds && chk.lhs <= 1e-10);
    let mut max_ratio = 0.0_f64;
    for _ in 0..100 {
        let a = rand_mat(6, 4);
        let c = rand_mat(6, 4);
        let chk = hs_sqrt_perturbation_check(&a, &c).unwrap();
        assert!(chk.holds, "{} > {}", chk.lhs, chk.rhs);
        max_ratio = max_ratio.max(chk.ratio);
    }
    assert!(max_ratio <= 2.0_f64.sqrt() + 1e-9, "max ratio {max_ratio}");
}

#[test]
fn family_construction_quadratic_operator() {
    let sp = rkhs_space(120);
    let op = pointwise_quadratic(&sp, 0.05);
    let fbar = DVector::from_element(120, 1.0);
    let tbar = op.population_t(&sp, &fbar).unwrap();
    let eigs: Vec<f64> = SymEig::new(&tbar)
        .unwrap()
        .clamped_nonneg()
        .values
        .iter()
        .cloned()
        .collect();
    let cert = certify_decay(&eigs, 60).unwrap();
    assert!(cert.b > 1.0 && cert.alpha > 0.0);
    let phi = IndexFunction::holder(0.5, 1.0).unwrap();
    // R chosen so ell lands in (16, 30] for eps = 0.1
    let big_r = 0.1 * (36.0_f64.powf(cert.b) / cert.alpha).sqrt() * 1.05;
    let fam = build_hard_family(&op, &sp, &fbar, &phi, big_r, 0.1, &cert, 33).unwrap();
    assert!(fam.ell > 16);
    assert!(fam.count() >= 2);
    for &g in &fam.g_norms {
        assert!(g <= big_r * (1.0 + 1e-12));
    }
    // separation with the measured upsilon
    assert!(fam.upsilon > 0.0, "upsilon {}", fam.upsilon);
    assert!(
        fam.min_separation() >= 0.1 * fam.upsilon,
        "separation {} vs {}",
        fam.min_separation(),
        0.1 * fam.upsilon
    );
    let (kl_first, kl_second) = fam.kl_chain_holds();
    assert!(kl_first, "KL exceeds the prediction-gap bound");
    assert!(kl_second, "prediction gap exceeds the Ctilde bound");
}

#[test]
fn family_construction_linear_operator_has_unit_upsilon() {
    let sp = rkhs_space(120);
    let op = ForwardOp::linear_integral(Theta::pointwise(0.05, sp.grid().weights()));
    let fbar = DVector::from_element(120, 1.0);
    let tbar = op.population_t(&sp, &fbar).unwrap();
    let eigs: Vec<f64> = SymEig::new(&tbar)
        .unwrap()
        .clamped_nonneg()
        .values
        .iter()
        .cloned()
        .collect();
    let cert = certify_decay(&eigs, 60).unwrap();
    let phi = IndexFunction::holder(0.5, 1.0).unwrap();
    let big_r = 0.1 * (36.0_f64.powf(cert.b) / cert.alpha).sqrt() * 1.05;
    let fam = build_hard_family(&op, &sp, &fbar, &phi, big_r, 0.1, &cert, 12).unwrap();
    assert_eq!(fam.upsilon, 1.0);
    assert_eq!(fam.zeta, 0.0);
    // in the linear case the separation bound is exactly eps
    assert!(fam.min_separation() >= 0.1 * (1.0 - 1e-9));
    let (a, b) = fam.kl_chain_holds();
    assert!(a && b);
}

#[test]
fn family_rejects_epsilon_too_large_for_the_certificate() {
    let sp = rkhs_space(64);
    let op = pointwise_quadratic(&sp, 0.05);
    let fbar = DVector::from_element(64, 1.0);
    let tbar = op.population_t(&sp, &fbar).unwrap();
    let eigs: Vec<f64> = SymEig::new(&tbar)
        .unwrap()
        .clamped_nonneg()
        .values
        .iter()
        .cloned()
        .collect();
    let cert = certify_decay(&eigs, 40).unwrap();
    let phi = IndexFunction::holder(0.5, 1.0).unwrap();
    // tiny R forces ell <= 16
    let err = build_hard_family(&op, &sp, &fbar, &phi, 0.5, 0.1, &cert, 1);
    assert!(matches!(err, Err(Error::ConstructionFailure(_))));
}

#[test]
fn kl_chain_holds_across_epsilon_scales() {
    // the chain inequality at eps in {0.1, 0.05, 0.02}; R scales with eps
    // at the smallest scale so the populated modes stay inside the
    // certified spectrum range
    let sp = rkhs_space(160);
    let op = pointwise_quadratic(&sp, 0.05);
    let fbar = DVector::from_element(160, 1.0);
    let tbar = op.population_t(&sp, &fbar).unwrap();
    let eigs: Vec<f64> = SymEig::new(&tbar)
        .unwrap()
        .clamped_nonneg()
        .values
        .iter()
        .cloned()
        .collect();
    let cert = certify_decay(&eigs, 80).unwrap();
    let phi = IndexFunction::holder(0.5, 1.0).unwrap();
    let r_for = |eps: f64| eps * (36.0_f64.powf(cert.b) / cert.alpha).sqrt() * 1.05;
    for eps in [0.1, 0.05, 0.02] {
        let big_r = if eps > 0.04 {
            r_for(0.1)
        } else {
            r_for(0.02 * 2.0)
        };
        let fam = build_hard_family(&op, &sp, &fbar, &phi, big_r, eps, &cert, 17).unwrap();
        let (kl1, kl2) = fam.kl_chain_holds();
        assert!(kl1 && kl2, "eps={eps}: chain links ({kl1}, {kl2})");
        assert!(fam.min_separation() >= eps * fam.upsilon);
    }
}
