//! Desk-scale instantiation of the minimax lower-bound machinery: the
//! hard-instance probability family, sign-vector packing, Kullback-Leibler
//! bounds, and the Hilbert-Schmidt perturbation lemmas.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experiments::build_source_truth_with_g;
use crate::hilbert::Space;
use crate::kernels::DecayCertificate;
use crate::linalg::{hs_norm, SymEig};
use crate::operators::ForwardOp;
use crate::tikhonov::IndexFunction;

/// A packing of sign vectors: pairwise squared distance at least `ell`,
/// with at least `ceil(exp(ell / 24))` vectors.
#[derive(Debug, Clone)]
pub struct SignPacking {
    pub ell: usize,
    pub vectors: Vec<Vec<i8>>,
}

impl SignPacking {
    pub fn count(&self) -> usize {
        self.vectors.len()
    }

    /// Exhaustive pairwise verification of both packing invariants.
    pub fn verify(&self) -> bool {
        let n = self.vectors.len();
        let min_count = (self.ell as f64 / 24.0).exp().ceil() as usize;
        if n < min_count {
            return false;
        }
        for i in 0..n {
            if self.vectors[i].len() != self.ell {
                return false;
            }
            for j in 0..i {
                let d2: i64 = self.vectors[i]
                    .iter()
                    .zip(self.vectors[j].iter())
                    .map(|(&a, &b)| {
                        let d = (a - b) as i64;
                        d * d
                    })
                    .sum();
                if (d2 as f64) < self.ell as f64 {
                    return false;
                }
            }
        }
        true
    }
}

/// Randomized packing construction: draw sign vectors and keep those at
/// squared distance at least `ell` from everything kept so far, until
/// `ceil(exp(ell / 24))` vectors are collected.
pub fn pack_signs(ell: usize, seed: u64) -> Result<SignPacking> {
    if ell <= 16 {
        return Err(Error::invalid("sign packing needs ell > 16"));
    }
    let target = ((ell as f64) / 24.0).exp().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: Vec<Vec<i8>> = Vec::with_capacity(target);
    let max_draws = 1_000_000usize;
    for draw in 0..max_draws {
        let cand: Vec<i8> = (0..ell)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        let ok = kept.iter().all(|v| {
            let d2: i64 = v
                .iter()
                .zip(cand.iter())
                .map(|(&a, &b)| {
                    let d = (a - b) as i64;
                    d * d
                })
                .sum();
            d2 as f64 >= ell as f64
        });
        if ok {
            kept.push(cand);
            if kept.len() == target {
                let packing = SignPacking { ell, vectors: kept };
                debug_assert!(packing.verify());
                return Ok(packing);
            }
        }
        let _ = draw;
    }
    Err(Error::PackingFailure {
        draws: max_draws,
        target,
        kept: kept.len(),
    })
}

/// A hard instance: a parameter `f` together with the two-atom conditional
/// law `y | x in {+dJ, -dJ}` whose conditional mean is `A(f)(x)`.
#[derive(Debug, Clone)]
pub struct HardInstance {
    /// Node values of `f`.
    pub f: DVector<f64>,
    /// Node values of `A(f)`.
    pub forward: DVector<f64>,
    /// Atom scale `J`; for a single instance `J = 4 kappa ||A(f)||_{H2}`,
    /// inside a family the largest such value is shared.
    pub j: f64,
    /// Output-space dimension (only `d = 1` is supported).
    pub d: usize,
    /// Bernstein certificate `M >= dJ + J/4`.
    pub m_cert: f64,
    /// Bernstein certificate `Sigma >= 2dJ`.
    pub sigma_cert: f64,
}

impl HardInstance {
    /// Probability of the `+dJ` atom at the `i`-th grid node.
    pub fn plus_prob(&self, node_index: usize) -> f64 {
        let dj = self.d as f64 * self.j;
        (self.j + self.forward[node_index]) / (2.0 * dj)
    }

    /// Conditional mean of `y` at the `i`-th grid node; equals the forward
    /// image there by construction.
    pub fn conditional_mean(&self, node_index: usize) -> f64 {
        let dj = self.d as f64 * self.j;
        let p = self.plus_prob(node_index);
        dj * p - dj * (1.0 - p)
    }

    /// Draw `y | x = node_i`.
    pub fn sample_y(&self, node_index: usize, rng: &mut ChaCha8Rng) -> f64 {
        let dj = self.d as f64 * self.j;
        if rng.random::<f64>() < self.plus_prob(node_index) {
            dj
        } else {
            -dj
        }
    }
}

/// Build a hard instance at `f`, with `J = 4 kappa ||A(f)||_{H2}`.
pub fn build_hard_instance(
    op: &ForwardOp,
    space: &Space,
    f: &DVector<f64>,
    d: usize,
) -> Result<HardInstance> {
    if d != 1 {
        return Err(Error::invalid(
            "hard instances support dim(Y) = 1 only; larger d is out of scope",
        ));
    }
    let forward = op.apply_nodes(space, f)?;
    let norm = space.basis().h2_norm(&forward)?;
    let j = 4.0 * space.basis().kappa() * norm;
    build_hard_instance_with_j(op, space, f, d, j)
}

/// Build a hard instance with an externally fixed `J` (shared across a
/// family so all instances have the same atoms).
pub fn build_hard_instance_with_j(
    op: &ForwardOp,
    space: &Space,
    f: &DVector<f64>,
    d: usize,
    j: f64,
) -> Result<HardInstance> {
    if d != 1 {
        return Err(Error::invalid(
            "hard instances support dim(Y) = 1 only; larger d is out of scope",
        ));
    }
    let forward = op.apply_nodes(space, f)?;
    if !(j > 0.0) {
        return Err(Error::ZeroImage);
    }
    for (i, &v) in forward.iter().enumerate() {
        let a = j - v;
        let b = j + v;
        if a < 0.0 || b < 0.0 {
            return Err(Error::NegativeWeight {
                x: space.grid().nodes()[i],
                value: a.min(b),
            });
        }
    }
    let dj = d as f64 * j;
    Ok(HardInstance {
        f: f.clone(),
        forward,
        j,
        d,
        m_cert: dj + j / 4.0,
        sigma_cert: 2.0 * dj,
    })
}

/// Discrete Kullback-Leibler divergence between the conditional laws of
/// two hard instances, averaged over the design measure (the grid's
/// probability weights).
pub fn discrete_kl(p: &HardInstance, q: &HardInstance, space: &Space) -> Result<f64> {
    if p.d != q.d || p.f.len() != q.f.len() || p.f.len() != space.len() {
        return Err(Error::shape("discrete_kl: mismatched instances"));
    }
    if (p.j - q.j).abs() > 1e-12 * p.j.abs().max(q.j.abs()) {
        return Err(Error::invalid(
            "discrete_kl needs a family-shared J (atoms must coincide)",
        ));
    }
    let weights = space.grid().prob_weights();
    let mut kl = 0.0;
    for (i, &nu) in weights.iter().enumerate() {
        let pp = p.plus_prob(i);
        let qp = q.plus_prob(i);
        for (pa, qa) in [(pp, qp), (1.0 - pp, 1.0 - qp)] {
            if pa > 0.0 {
                if qa <= 0.0 {
                    return Err(Error::InfiniteKl);
                }
                kl += nu * pa * (pa / qa).ln();
            }
        }
    }
    Ok(kl.max(0.0))
}

/// The constructed hard family with its separation and KL certificates.
#[derive(Debug, Clone)]
pub struct HardFamily {
    pub epsilon: f64,
    /// Packing length (number of populated eigenmodes).
    pub ell: usize,
    pub instances: Vec<HardInstance>,
    /// Norms of the source elements `g_i` (all must be `<= R`).
    pub g_norms: Vec<f64>,
    /// Pairwise H1 distances `||f_i - f_j||`.
    pub pairwise_h1_gaps: DMatrix<f64>,
    /// Pairwise squared prediction gaps `||I_K(A(f_i) - A(f_j))||^2`.
    pub pairwise_pred_gap_sq: DMatrix<f64>,
    /// Pairwise Kullback-Leibler divergences.
    pub kl_matrix: DMatrix<f64>,
    /// Separation factor `1 - 2 max_i ||I - R_{f_i}||` from the measured
    /// surrogate; exactly one for linear operators.
    pub upsilon: f64,
    /// Measured surrogate for the basis-rotation constant.
    pub zeta: f64,
    /// Constant of the KL chain bound `Ctilde (eps^2 / ell^b + eps^4)`.
    pub c_tilde: f64,
    /// Shared atom scale.
    pub j: f64,
    /// The decay certificate the construction was built on.
    pub decay: DecayCertificate,
}

impl HardFamily {
    pub fn count(&self) -> usize {
        self.instances.len()
    }

    /// Minimum pairwise H1 distance.
    pub fn min_separation(&self) -> f64 {
        let n = self.count();
        let mut min = f64::INFINITY;
        for i in 0..n {
            for jx in 0..i {
                min = min.min(self.pairwise_h1_gaps[(i, jx)]);
            }
        }
        min
    }

    /// Both links of the KL chain, checked pairwise:
    /// `KL <= 16/(15 d J^2) ||I_K(A_i - A_j)||^2 <= Ctilde (eps^2/ell^b + eps^4)`.
    pub fn kl_chain_holds(&self) -> (bool, bool) {
        let n = self.count();
        let d = 1.0;
        let lead = 16.0 / (15.0 * d * self.j * self.j);
        let rhs2 = self.c_tilde
            * (self.epsilon * self.epsilon / (self.ell as f64).powf(self.decay.b)
                + self.epsilon.powi(4));
        let mut first = true;
        let mut second = true;
        for i in 0..n {
            for jx in 0..i {
                let mid = lead * self.pairwise_pred_gap_sq[(i, jx)];
                if self.kl_matrix[(i, jx)] > mid {
                    first = false;
                }
                if mid > rhs2 {
                    second = false;
                }
            }
        }
        (first, second)
    }
}

/// Build the hard family at separation scale `epsilon`.
///
/// The source elements are
/// `g_i = sum_{n=ell+1}^{2 ell} eps pi_i^{n-ell} e_n / (sqrt(ell) phi(t_n))`
/// in the eigenbasis of the folded covariance of the linearization at
/// `fbar`, with `(alpha, b)` a certified lower decay bound of that
/// spectrum (so `||g_i|| <= R` holds by construction). Each `g_i` is
/// turned into a truth `f_i` by the source fixed point; fixed-point
/// failures propagate.
#[allow(clippy::too_many_arguments)]
pub fn build_hard_family(
    op: &ForwardOp,
    space: &Space,
    fbar: &DVector<f64>,
    phi: &IndexFunction,
    big_r: f64,
    epsilon: f64,
    decay: &DecayCertificate,
    seed: u64,
) -> Result<HardFamily> {
    let r = phi.holder_exponent().ok_or_else(|| {
        Error::invalid("the family construction supports Holder index functions only")
    })?;
    if !(r > 0.0) {
        return Err(Error::invalid("family needs a Holder exponent r > 0"));
    }
    if !(epsilon > 0.0 && big_r > 0.0) {
        return Err(Error::invalid("family needs epsilon > 0 and R > 0"));
    }
    if !(decay.b > 1.0 && decay.alpha > 0.0) {
        return Err(Error::invalid(
            "family needs a certified decay with b > 1, alpha > 0",
        ));
    }
    // ell = floor( (1/2) (alpha / phi^{-1}(eps/R))^{1/b} ),
    // phi^{-1}(u) = u^{1/r} for the Holder family.
    let phi_inv = (epsilon / big_r).powf(1.0 / r);
    let ell_f = 0.5 * (decay.alpha / phi_inv).powf(1.0 / decay.b);
    let ell = ell_f.floor() as usize;
    if ell <= 16 {
        return Err(Error::ConstructionFailure(alloc::format!(
            "ell = {ell} <= 16; epsilon too large for (alpha, b, R) = ({}, {}, {big_r})",
            decay.alpha,
            decay.b
        )));
    }
    if 2 * ell > decay.count {
        return Err(Error::ConstructionFailure(alloc::format!(
            "modes up to {} needed but the decay certificate covers only {}",
            2 * ell,
            decay.count
        )));
    }

    let tbar = op.population_t(space, fbar)?;
    let eig = SymEig::new(&tbar)?.clamped_nonneg();
    let packing = pack_signs(ell, seed)?;
    let count = packing.count();

    // Source elements in the eigenbasis, modes ell+1 ..= 2 ell (1-based).
    let sqrt_ell = (ell as f64).sqrt();
    let mut gs: Vec<DVector<f64>> = Vec::with_capacity(count);
    let mut g_norms = Vec::with_capacity(count);
    for pi in &packing.vectors {
        let mut g = DVector::zeros(space.len());
        for (k, &sign) in pi.iter().enumerate() {
            let mode = ell + k; // zero-based index of 1-based mode ell+1+k
            let t = eig.values[mode];
            let coeff = epsilon * sign as f64 / (sqrt_ell * phi.eval(t));
            g.axpy(
                coeff,
                &DVector::from_column_slice(eig.vectors.column(mode).as_slice()),
                1.0,
            );
        }
        let norm = g.norm();
        if norm > big_r * (1.0 + 1e-12) {
            return Err(Error::ConstructionFailure(alloc::format!(
                "||g_i|| = {norm} exceeds R = {big_r}; reduce epsilon below {}",
                epsilon * big_r / norm
            )));
        }
        g_norms.push(norm);
        gs.push(g);
    }

    // Fixed points f_i = fbar + phi(T_{f_i}) g_i (no halving: the family
    // requires the exact g_i).
    let mut spec = crate::experiments::SourceSpec::new(
        phi.clone(),
        big_r,
        g_norms.iter().cloned().fold(f64::MIN_POSITIVE, f64::max),
        seed,
    )?;
    spec.g_modes = 0;
    let mut fs: Vec<DVector<f64>> = Vec::with_capacity(count);
    for g in &gs {
        let truth = build_source_truth_with_g(op, space, fbar, &spec, g)?;
        fs.push(truth.f_rho);
    }

    // Shared J over the family.
    let kappa = space.basis().kappa();
    let mut j = 0.0_f64;
    for f in &fs {
        let fwd = op.apply_nodes(space, f)?;
        j = j.max(4.0 * kappa * space.basis().h2_norm(&fwd)?);
    }
    if !(j > 0.0) {
        return Err(Error::ZeroImage);
    }
    let mut instances = Vec::with_capacity(count);
    for f in &fs {
        instances.push(build_hard_instance_with_j(op, space, f, 1, j)?);
    }

    // Rotation surrogate zeta and the separation factor upsilon, measured
    // on the subspace the certificate covers. Linear operators have
    // R_f = I exactly.
    let (zeta, max_dev) = if op.is_linear() {
        (0.0, 0.0)
    } else {
        measure_rotation_surrogate(op, space, fbar, &fs, phi, &eig, decay.count)?
    };
    let upsilon = 1.0 - 2.0 * max_dev;

    // Pairwise gaps and KL.
    let mut gaps = DMatrix::zeros(count, count);
    let mut pred_sq = DMatrix::zeros(count, count);
    let mut kl = DMatrix::zeros(count, count);
    for i in 0..count {
        for jx in 0..count {
            if i == jx {
                continue;
            }
            let dfi = &fs[i] - &fs[jx];
            gaps[(i, jx)] = space.h1_norm(&dfi)?;
            let dpred = &instances[i].forward - &instances[jx].forward;
            let l2 = space.grid().l2_norm(&dpred);
            pred_sq[(i, jx)] = l2 * l2;
            kl[(i, jx)] = discrete_kl(&instances[i], &instances[jx], space)?;
        }
    }

    // Chain constant Ctilde = 16 c'' / (15 d J^2) from measured constants.
    let lipschitz = op.operator_norm(space, fbar)?;
    let gamma = if op.is_linear() {
        0.0
    } else {
        op.estimate_gamma(space, fbar, &fs)?
    };
    let c_prime = (4.0 * decay.beta / (decay.b - 1.0) * (1.0 - 2.0_f64.powf(1.0 - decay.b))).sqrt();
    let c_small = kappa * lipschitz * zeta * (2.0 + 2.0 * max_dev);
    let c_pp = 4.0 * c_small * c_small
        + 4.0 * c_prime * c_prime
        + gamma * gamma * 2.0 * (1.0 + max_dev).powi(4);
    let c_tilde = 16.0 * c_pp / (15.0 * j * j);

    Ok(HardFamily {
        epsilon,
        ell,
        instances,
        g_norms,
        pairwise_h1_gaps: gaps,
        pairwise_pred_gap_sq: pred_sq,
        kl_matrix: kl,
        upsilon,
        zeta,
        c_tilde,
        j,
        decay: *decay,
    })
}

/// Measured surrogate for the basis-rotation bound: on the certified
/// subspace, `R_f := phi(T_f) phi(Tbar)^+`; returns
/// `(zeta, max_i ||I - R_{f_i}||)` with `zeta = max ||I - R_f|| / ||f - fbar||`.
fn measure_rotation_surrogate(
    op: &ForwardOp,
    space: &Space,
    fbar: &DVector<f64>,
    fs: &[DVector<f64>],
    phi: &IndexFunction,
    tbar_eig: &SymEig,
    count: usize,
) -> Result<(f64, f64)> {
    let n = space.len();
    let k = count.min(n);
    // projector onto the leading certified subspace and phi(Tbar)^+ on it
    let u = tbar_eig.vectors.columns(0, k).into_owned();
    let mut phi_pinv = DMatrix::zeros(k, k);
    for i in 0..k {
        let t = tbar_eig.values[i];
        let p = phi.eval(t);
        phi_pinv[(i, i)] = if p > 0.0 { 1.0 / p } else { 0.0 };
    }
    let mut zeta = 0.0_f64;
    let mut max_dev = 0.0_f64;
    for f in fs {
        let t = op.population_t(space, f)?;
        let eig = SymEig::new(&t)?.clamped_nonneg();
        let phi_t = eig.spectral_fn(|s| phi.eval(s));
        // P (R_f - I) P restricted to the subspace: U^T phi(T_f) U phi_pinv - I
        let restricted = u.transpose() * &phi_t * &u * &phi_pinv;
        let mut dev = restricted.clone();
        for i in 0..k {
            dev[(i, i)] -= 1.0;
        }
        let sym = &dev * dev.transpose();
        let norm = crate::linalg::sym_operator_norm(&sym)?.sqrt();
        let dist = space.h1_norm(&(f - fbar))?;
        if dist > 0.0 {
            zeta = zeta.max(norm / dist);
        }
        max_dev = max_dev.max(norm);
    }
    Ok((zeta, max_dev))
}

/// Outcome of a Hilbert-Schmidt operator inequality check.
#[derive(Debug, Clone, Copy)]
pub struct HsCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `lhs / bound-without-constant` where applicable.
    pub ratio: f64,
}

/// Operator Lipschitz property of a scalar function in Hilbert-Schmidt
/// norm: `||theta(F) - theta(Ftilde)||_HS <= L_theta ||F - Ftilde||_HS`
/// for symmetric `F`, `Ftilde`.
pub fn hs_operator_lipschitz_check(
    theta: impl Fn(f64) -> f64,
    l_theta: f64,
    f: &DMatrix<f64>,
    f_tilde: &DMatrix<f64>,
) -> Result<HsCheck> {
    if f.nrows() != f_tilde.nrows() || f.ncols() != f_tilde.ncols() {
        return Err(Error::shape("hs_operator_lipschitz_check shapes differ"));
    }
    let ef = SymEig::new(f)?;
    let eg = SymEig::new(f_tilde)?;
    let theta_f = ef.spectral_fn(&theta);
    let theta_g = eg.spectral_fn(&theta);
    let lhs = hs_norm(&(theta_f - theta_g));
    let diff = hs_norm(&(f - f_tilde));
    let rhs = l_theta * diff;
    Ok(HsCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9 * (1.0 + rhs),
        ratio: if diff > 0.0 { lhs / diff } else { 0.0 },
    })
}

/// Square-root perturbation bound:
/// `||T^{1/2} - Ttilde^{1/2}||_HS <= sqrt(2) ||B - Btilde||_HS` with
/// `T = B^T B`.
pub fn hs_sqrt_perturbation_check(b: &DMatrix<f64>, b_tilde: &DMatrix<f64>) -> Result<HsCheck> {
    if b.nrows() != b_tilde.nrows() || b.ncols() != b_tilde.ncols() {
        return Err(Error::shape("hs_sqrt_perturbation_check shapes differ"));
    }
    let t = b.transpose() * b;
    let tt = b_tilde.transpose() * b_tilde;
    let st = SymEig::new(&t)?.clamped_nonneg().sqrt_matrix();
    let stt = SymEig::new(&tt)?.clamped_nonneg().sqrt_matrix();
    let lhs = hs_norm(&(st - stt));
    let diff = hs_norm(&(b - b_tilde));
    let rhs = 2.0_f64.sqrt() * diff;
    Ok(HsCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9 * (1.0 + rhs),
        ratio: if diff > 0.0 { lhs / diff } else { 0.0 },
    })
}
