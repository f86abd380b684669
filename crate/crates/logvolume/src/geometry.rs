//! Fisher information geometry at capacity: the information matrix and its
//! support restrictions, the constrained pseudo-inverse, the variance
//! gradient vectors, the quadratic game saddlepoint, and the square-root-n
//! correction distributions.
//!
//! The pseudo-inverse is built operationally: with `B` an orthonormal basis
//! of the feasible subspace (zero-sum vectors supported on the dispersion
//! support, orthogonal to the kernel), `Jplus = B (B^T J B)^{-1} B^T`. The
//! closed form through the full matrix inverse is kept as a test oracle for
//! the invertible case.

use crate::capacity::CapacityAnalysis;
use crate::channel::{output_distribution, reverse_channel, Dmc, Pmf};
use crate::error::{Error, Result};
use crate::info::{divergence_moments, zeta_n};
use crate::normal::q_inv;
use crate::numerics::{csum, KahanSum};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Relative eigenvalue cut below which a direction counts as kernel.
pub const EIGEN_CUT: f64 = 1e-9;

/// Raw Fisher information matrix `J_{xx'} = sum_y W(y|x) W(y|x') / (PW)(y)`
/// at an arbitrary nonnegative weight vector. Outputs with zero marginal
/// mass contribute infinity when some involved channel entry is positive.
pub(crate) fn fisher_raw(weights: &[f64], w: &Dmc) -> DMatrix<f64> {
    let nx = w.num_inputs();
    let ny = w.num_outputs();
    let marg: Vec<f64> = (0..ny)
        .map(|y| csum((0..nx).map(|x| weights[x] * w.prob(x, y))))
        .collect();
    let mut j = DMatrix::zeros(nx, nx);
    for x in 0..nx {
        for xp in x..nx {
            let mut acc = KahanSum::new();
            let mut infinite = false;
            for y in 0..ny {
                let num = w.prob(x, y) * w.prob(xp, y);
                if num > 0.0 {
                    if marg[y] <= 0.0 {
                        infinite = true;
                        break;
                    }
                    acc.add(num / marg[y]);
                }
            }
            let val = if infinite { f64::INFINITY } else { acc.value() };
            j[(x, xp)] = val;
            j[(xp, x)] = val;
        }
    }
    j
}

/// Fisher matrices at a capacity-achieving input, with support restrictions
/// and the constrained pseudo-inverse.
#[derive(Debug, Clone)]
pub struct FisherMatrices {
    /// Full `|X| x |X|` information matrix.
    pub j_full: DMatrix<f64>,
    /// Zeroed outside the capacity support `x_dagger`.
    pub j_dagger: DMatrix<f64>,
    /// Zeroed outside the dispersion support `x_star`.
    pub j_star: DMatrix<f64>,
    /// Constrained pseudo-inverse of `j_star`.
    pub j_plus: DMatrix<f64>,
    /// Orthonormal basis (columns) of the feasible subspace: zero-sum
    /// vectors on `x_star` orthogonal to `ker(j_star)`.
    pub h_basis: DMatrix<f64>,
    /// Orthonormal basis of `ker(j_star)` intersected with the zero-sum
    /// subspace on `x_star` (the flat directions of the dispersion face).
    pub ker_basis: DMatrix<f64>,
    pub rank_j_dagger: usize,
    pub rank_j_star: usize,
    /// An eigenvalue sat near the rank cut; ranks are ambiguous.
    pub rank_borderline: bool,
    pub x_dagger: Vec<usize>,
    pub x_star: Vec<usize>,
}

/// Serializable snapshot for CLI output.
#[derive(Debug, Clone, Serialize)]
pub struct FisherSummary {
    pub j_full: Vec<Vec<f64>>,
    pub j_plus: Vec<Vec<f64>>,
    pub rank_j_dagger: usize,
    pub rank_j_star: usize,
    pub dim_h: usize,
    pub rank_borderline: bool,
}

impl FisherMatrices {
    pub fn dim_h(&self) -> usize {
        self.h_basis.ncols()
    }

    pub fn summary(&self) -> FisherSummary {
        FisherSummary {
            j_full: matrix_rows(&self.j_full),
            j_plus: matrix_rows(&self.j_plus),
            rank_j_dagger: self.rank_j_dagger,
            rank_j_star: self.rank_j_star,
            dim_h: self.dim_h(),
            rank_borderline: self.rank_borderline,
        }
    }

    /// `||g||^2_{J+} = g^T J+ g`.
    pub fn j_plus_norm_sq(&self, g: &[f64]) -> f64 {
        let gv = DVector::from_column_slice(g);
        (gv.transpose() * &self.j_plus * &gv)[(0, 0)]
    }

    /// `J+ g`.
    pub fn apply_j_plus(&self, g: &[f64]) -> Vec<f64> {
        let gv = DVector::from_column_slice(g);
        (&self.j_plus * gv).iter().cloned().collect()
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn restrict(m: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for &x in keep {
        for &xp in keep {
            out[(x, xp)] = m[(x, xp)];
        }
    }
    out
}

fn block(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Orthonormal basis of the null space of the single linear functional
/// `c^T z = 0` in R^k, as columns of a `k x (k-1)` matrix.
fn orth_complement_of_vector(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let nrm = c.norm();
    if nrm <= 0.0 {
        return DMatrix::identity(k, k);
    }
    let proj = DMatrix::identity(k, k) - c * c.transpose() / (nrm * nrm);
    let svd = proj.svd(true, false);
    let u = svd.u.unwrap();
    let mut cols = Vec::new();
    for j in 0..k {
        if svd.singular_values[j] > 0.5 {
            cols.push(u.column(j).into_owned());
        }
    }
    let mut out = DMatrix::zeros(k, cols.len());
    for (j, col) in cols.iter().enumerate() {
        out.set_column(j, col);
    }
    out
}

/// Builds all Fisher objects at `p` (which should be capacity-achieving for
/// the restrictions to be meaningful).
pub fn fisher_matrix(p: &Pmf, w: &Dmc, analysis: &CapacityAnalysis) -> Result<FisherMatrices> {
    let j_full = fisher_raw(&p.probs, w);
    if j_full.iter().any(|v| !v.is_finite()) {
        return Err(Error::SupportViolation(
            "zero output mass on a reachable output".into(),
        ));
    }
    let j_dagger = restrict(&j_full, &analysis.x_dagger);
    let j_star = restrict(&j_full, &analysis.x_star);

    let star_block = block(&j_full, &analysis.x_star);
    let eig = star_block.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if lmax <= 0.0 {
        return Err(Error::RankDeficient("Fisher matrix is zero".into()));
    }
    let cut = EIGEN_CUT * lmax;
    let mut range_cols = Vec::new();
    let mut ker_cols = Vec::new();
    let mut borderline = false;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let rel = l / lmax;
        if (rel - EIGEN_CUT).abs() <= 1e-8 {
            borderline = true;
        }
        if l > cut {
            range_cols.push(i);
        } else {
            ker_cols.push(i);
        }
    }
    let rank_star = range_cols.len();
    if rank_star < 2 {
        return Err(Error::RankDeficient(format!(
            "rank(J) = {rank_star} < 2 on the dispersion support"
        )));
    }

    let ks = analysis.x_star.len();
    // U: orthonormal eigenvectors spanning range(J_block).
    let mut u = DMatrix::zeros(ks, rank_star);
    for (j, &i) in range_cols.iter().enumerate() {
        u.set_column(j, &eig.eigenvectors.column(i).into_owned());
    }
    // The feasible subspace is { U z : 1^T U z = 0 }.
    let ones = DVector::from_element(ks, 1.0);
    let c = u.transpose() * &ones;
    let n_basis = orth_complement_of_vector(&c);
    let b_block = &u * &n_basis; // ks x (rank-1), orthonormal columns

    let core = b_block.transpose() * &star_block * &b_block;
    let core_inv = core
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("feasible-space core not invertible".into()))?;
    let jp_block = &b_block * core_inv * b_block.transpose();

    let nx = w.num_inputs();
    let mut j_plus = DMatrix::zeros(nx, nx);
    let mut h_basis = DMatrix::zeros(nx, b_block.ncols());
    for (a, &x) in analysis.x_star.iter().enumerate() {
        for (b, &xp) in analysis.x_star.iter().enumerate() {
            j_plus[(x, xp)] = jp_block[(a, b)];
        }
        for jcol in 0..b_block.ncols() {
            h_basis[(x, jcol)] = b_block[(a, jcol)];
        }
    }

    // Kernel directions within the zero-sum subspace on x_star.
    let ker_basis = if ker_cols.is_empty() {
        DMatrix::zeros(nx, 0)
    } else {
        let mut kmat = DMatrix::zeros(ks, ker_cols.len());
        for (j, &i) in ker_cols.iter().enumerate() {
            kmat.set_column(j, &eig.eigenvectors.column(i).into_owned());
        }
        let ck = kmat.transpose() * &ones;
        let nk = if ck.norm() <= 1e-12 {
            DMatrix::identity(ker_cols.len(), ker_cols.len())
        } else {
            orth_complement_of_vector(&ck)
        };
        let kb = &kmat * &nk;
        let mut out = DMatrix::zeros(nx, kb.ncols());
        for (a, &x) in analysis.x_star.iter().enumerate() {
            for j in 0..kb.ncols() {
                out[(x, j)] = kb[(a, j)];
            }
        }
        out
    };

    let dagger_block = block(&j_full, &analysis.x_dagger);
    let eig_d = dagger_block.symmetric_eigen();
    let lmax_d = eig_d.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let rank_j_dagger = eig_d
        .eigenvalues
        .iter()
        .filter(|&&l| l > EIGEN_CUT * lmax_d)
        .count();

    Ok(FisherMatrices {
        j_full,
        j_dagger,
        j_star,
        j_plus,
        h_basis,
        ker_basis,
        rank_j_dagger,
        rank_j_star: rank_star,
        rank_borderline: borderline,
        x_dagger: analysis.x_dagger.clone(),
        x_star: analysis.x_star.clone(),
    })
}

/// Closed-form pseudo-inverse for the invertible case:
/// `J^{-1} - (J^{-1} 1)(J^{-1} 1)^T / (1^T J^{-1} 1)` on the support block.
/// Used as a cross-check of the basis construction.
pub fn pseudo_inverse_closed_form(
    j: &DMatrix<f64>,
    x_star: &[usize],
    nx: usize,
) -> Result<DMatrix<f64>> {
    let blk = block(j, x_star);
    let inv = blk
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("J block not invertible".into()))?;
    let ones = DVector::from_element(x_star.len(), 1.0);
    let ji = &inv * &ones;
    let denom = (ones.transpose() * &ji)[(0, 0)];
    let jp_block = inv - &ji * ji.transpose() / denom;
    let mut out = DMatrix::zeros(nx, nx);
    for (a, &x) in x_star.iter().enumerate() {
        for (b, &xp) in x_star.iter().enumerate() {
            out[(x, xp)] = jp_block[(a, b)];
        }
    }
    Ok(out)
}

/// The variance gradient vectors at a dispersion-achieving input, with
/// their scaled `g` counterparts.
#[derive(Debug, Clone, Serialize)]
pub struct GradientVectors {
    /// Gradient of the conditional information variance on the face.
    pub v: Vec<f64>,
    /// `V(W_x || Q*)` per input.
    pub v_tilde: Vec<f64>,
    /// Covariance path for the correction term.
    pub v_breve: Vec<f64>,
    /// Reverse-channel path for the same vector.
    pub v_breve_alt: Vec<f64>,
    /// Max entrywise disagreement between the two paths.
    pub two_path_residual: f64,
    pub g: Vec<f64>,
    pub g_tilde: Vec<f64>,
    pub g_breve: Vec<f64>,
    pub t_eps: f64,
    pub v_eps: f64,
}

/// Computes the gradient vectors at `p_prime` (must sit on the dispersion
/// face). The correction vector is computed along two independent routes
/// which are required to agree to 1e-9.
pub fn gradient_vectors(
    p_prime: &Pmf,
    w: &Dmc,
    analysis: &CapacityAnalysis,
    eps: f64,
) -> Result<GradientVectors> {
    if !(analysis.v_eps > 0.0) {
        return Err(Error::DegenerateVariance(
            "V_eps = 0: gradient scaling undefined".into(),
        ));
    }
    let nx = w.num_inputs();
    let ny = w.num_outputs();
    let q_star = &analysis.q_star;

    let v_tilde: Vec<f64> = (0..nx)
        .map(|x| divergence_moments(&w.row_pmf(x), q_star).map(|m| m.v))
        .collect::<Result<Vec<_>>>()?;

    // Covariance route: average over x' ~ P' of the per-row covariance of
    // the likelihood ratio W_x(Y)/Q*(Y) with the log-likelihood ratio.
    let mut v_breve = vec![0.0; nx];
    for x in 0..nx {
        let mut acc = KahanSum::new();
        for xp in 0..nx {
            if p_prime.probs[xp] <= 0.0 {
                continue;
            }
            let mut e_ab = KahanSum::new();
            let mut e_a = KahanSum::new();
            let mut e_b = KahanSum::new();
            for y in 0..ny {
                let wy = w.prob(xp, y);
                if wy > 0.0 {
                    let a = w.prob(x, y) / q_star.probs[y];
                    let b = (wy / q_star.probs[y]).ln();
                    e_ab.add(wy * a * b);
                    e_a.add(wy * a);
                    e_b.add(wy * b);
                }
            }
            let cov = e_ab.value() - e_a.value() * e_b.value();
            acc.add(p_prime.probs[xp] * (-2.0) * cov);
        }
        v_breve[x] = acc.value();
    }

    // Reverse-channel route: -2 [ E_{W_x} D(rev_Y || P') - C ].
    let rev = reverse_channel(p_prime, w, true)?;
    let q_marg = output_distribution(p_prime, w)?;
    let reachable: Vec<usize> = (0..ny).filter(|&y| q_marg.probs[y] > 0.0).collect();
    let d_rev: Vec<f64> = (0..rev.num_inputs())
        .map(|yi| divergence_moments(&rev.row_pmf(yi), p_prime).map(|m| m.d))
        .collect::<Result<Vec<_>>>()?;
    let mut v_breve_alt = vec![0.0; nx];
    for x in 0..nx {
        let mut acc = KahanSum::new();
        for (yi, &y) in reachable.iter().enumerate() {
            if w.prob(x, y) > 0.0 {
                acc.add(w.prob(x, y) * d_rev[yi]);
            }
        }
        v_breve_alt[x] = -2.0 * (acc.value() - analysis.c);
    }

    let two_path_residual = v_breve
        .iter()
        .zip(&v_breve_alt)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let v: Vec<f64> = (0..nx).map(|x| v_tilde[x] + v_breve[x]).collect();

    let t_eps = q_inv(eps);
    let scale = -t_eps / (2.0 * analysis.v_eps.sqrt());
    let g: Vec<f64> = v.iter().map(|x| scale * x).collect();
    let g_tilde: Vec<f64> = v_tilde.iter().map(|x| scale * x).collect();
    let g_breve: Vec<f64> = v_breve.iter().map(|x| scale * x).collect();

    Ok(GradientVectors {
        v,
        v_tilde,
        v_breve,
        v_breve_alt,
        two_path_residual,
        g,
        g_tilde,
        g_breve,
        t_eps,
        v_eps: analysis.v_eps,
    })
}

/// Saddlepoint of the quadratic game between the achievability direction
/// `h` and the converse direction `h_tilde`.
#[derive(Debug, Clone, Serialize)]
pub struct GameSaddlepoint {
    pub h_star: Vec<f64>,
    pub h_tilde_star: Vec<f64>,
    /// Value of the game in nats.
    pub gamma_star: f64,
    /// `max |Gamma(h, h_tilde*) - Gamma*|` over random feasible `h`.
    pub equalizer_residual: f64,
    /// Disagreement between the two algebraic routes to the value.
    pub value_two_path_residual: f64,
}

/// Solves the game: `h* = J+ g`, `h_tilde* = J+ g_tilde`, value
/// `Gamma* = (1/2)||g||^2_{J+} - (1/2)||g_breve||^2_{J+}`, and verifies the
/// equalizer property over random feasible directions.
pub fn game_saddlepoint(
    gv: &GradientVectors,
    fm: &FisherMatrices,
    seed: u64,
) -> Result<GameSaddlepoint> {
    let h_star = fm.apply_j_plus(&gv.g);
    let h_tilde_star = fm.apply_j_plus(&gv.g_tilde);

    // Route 1: value from the saddle itself.
    let ht = DVector::from_column_slice(&h_tilde_star);
    let gb = DVector::from_column_slice(&gv.g_breve);
    let gamma_1 = 0.5 * (ht.transpose() * &fm.j_dagger * &ht)[(0, 0)]
        + (ht.transpose() * &gb)[(0, 0)];
    // Route 2: difference of pseudo-inverse norms.
    let gamma_2 = 0.5 * fm.j_plus_norm_sq(&gv.g) - 0.5 * fm.j_plus_norm_sq(&gv.g_breve);
    let value_two_path_residual = (gamma_1 - gamma_2).abs();

    // Equalizer: Gamma(h, h_tilde*) is constant over feasible h.
    let gt = DVector::from_column_slice(&gv.g_tilde);
    let slope = &fm.j_dagger * &ht - &gt; // must be orthogonal to feasible h
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residual: f64 = 0.0;
    let star_is_dagger = fm.x_star == fm.x_dagger;
    let mut tried = 0;
    while tried < 50 {
        let h = random_feasible_h(&mut rng, fm, star_is_dagger);
        if let Some(h) = h {
            let hv = DVector::from_column_slice(&h);
            let gamma_h = gamma_1 - (hv.transpose() * &slope)[(0, 0)];
            residual = residual.max((gamma_h - gamma_1).abs());
            tried += 1;
        }
    }

    Ok(GameSaddlepoint {
        h_star,
        h_tilde_star,
        gamma_star: gamma_2,
        equalizer_residual: residual,
        value_two_path_residual,
    })
}

/// Draws a random unit-norm feasible direction: zero-sum on `x_dagger`,
/// and nonnegative off `x_star` when the supports differ.
fn random_feasible_h(
    rng: &mut ChaCha8Rng,
    fm: &FisherMatrices,
    star_is_dagger: bool,
) -> Option<Vec<f64>> {
    let nx = fm.j_full.nrows();
    let mut h = vec![0.0; nx];
    let k = fm.x_dagger.len();
    let mut mean = 0.0;
    for &x in &fm.x_dagger {
        let v: f64 = rng.gen::<f64>() * 2.0 - 1.0;
        h[x] = v;
        mean += v / k as f64;
    }
    for &x in &fm.x_dagger {
        h[x] -= mean;
    }
    if !star_is_dagger {
        // Rejection step: off the dispersion support the direction must
        // point into the simplex.
        for &x in &fm.x_dagger {
            if !fm.x_star.contains(&x) && h[x] < 0.0 {
                return None;
            }
        }
    }
    let norm: f64 = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return None;
    }
    for v in h.iter_mut() {
        *v /= norm;
    }
    Some(h)
}

/// The perturbed input/output pair used by the converse at blocklength `n`.
#[derive(Debug, Clone, Serialize)]
pub struct CorrectionDistributions {
    pub p_n_prime: Pmf,
    pub q_n_star: Pmf,
    pub h_prime: Vec<f64>,
    pub h_tilde_star: Vec<f64>,
}

/// `P_n' = P' + J+ g / sqrt(n)` and `Q_n* = Q* + (h_tilde* W) / sqrt(n)`.
///
/// Fails with the minimal feasible blocklength when either vector leaves
/// its simplex at this `n`.
pub fn correction_distributions(
    p_prime: &Pmf,
    gv: &GradientVectors,
    fm: &FisherMatrices,
    analysis: &CapacityAnalysis,
    w: &Dmc,
    n: u64,
) -> Result<CorrectionDistributions> {
    let h_prime = fm.apply_j_plus(&gv.g);
    let h_tilde_star = fm.apply_j_plus(&gv.g_tilde);
    let root_n = (n as f64).sqrt();

    let mut min_n: u64 = 1;
    let mut feasible = true;
    let p_probs: Vec<f64> = (0..p_prime.len())
        .map(|x| p_prime.probs[x] + h_prime[x] / root_n)
        .collect();
    for x in 0..p_prime.len() {
        if h_prime[x] < -1e-15 {
            if p_prime.probs[x] <= 0.0 {
                return Err(Error::SimplexViolation { n, min_n: u64::MAX });
            }
            let need = (h_prime[x] / p_prime.probs[x]).powi(2).ceil() as u64;
            min_n = min_n.max(need);
            if p_probs[x] < 0.0 {
                feasible = false;
            }
        }
    }

    let htw: Vec<f64> = (0..w.num_outputs())
        .map(|y| csum((0..w.num_inputs()).map(|x| h_tilde_star[x] * w.prob(x, y))))
        .collect();
    let q_probs: Vec<f64> = (0..w.num_outputs())
        .map(|y| analysis.q_star.probs[y] + htw[y] / root_n)
        .collect();
    for y in 0..w.num_outputs() {
        if htw[y] < -1e-15 {
            if analysis.q_star.probs[y] <= 0.0 {
                return Err(Error::SimplexViolation { n, min_n: u64::MAX });
            }
            let need = (htw[y] / analysis.q_star.probs[y]).powi(2).ceil() as u64;
            min_n = min_n.max(need);
            if q_probs[y] < 0.0 {
                feasible = false;
            }
        }
    }
    if !feasible {
        return Err(Error::SimplexViolation { n, min_n });
    }

    Ok(CorrectionDistributions {
        p_n_prime: Pmf::new_normalized(p_probs.iter().map(|p| p.max(0.0)).collect(), 1e-9)?,
        q_n_star: Pmf::new_normalized(q_probs.iter().map(|p| p.max(0.0)).collect(), 1e-9)?,
        h_prime,
        h_tilde_star,
    })
}

/// Report of the local-optimality audit of the payoff around the corrected
/// input distribution.
#[derive(Debug, Clone, Serialize)]
pub struct LocalOptReport {
    pub zeta_p_prime: f64,
    pub zeta_p_n_prime: f64,
    /// `max zeta_n(P) - zeta_n(P_n')` over sampled P in the ball (the
    /// claimed optimality slack; small positive values are sampling noise
    /// plus the vanishing remainder).
    pub slack: f64,
    /// `zeta_n(P_n') - zeta_n(P')`, predicted `(1/2)||g||^2_{J+}`.
    pub taylor_gap: f64,
    pub half_g_norm_sq: f64,
    pub samples: usize,
    /// Whether the simplex over the capacity support decomposes as the
    /// polytope plus the dispersion-face directions; when false the
    /// quadratic-program direction is also reported.
    pub dimensionality_condition: bool,
    pub qp_direction: Option<Vec<f64>>,
    pub qp_value: Option<f64>,
}

/// Samples the payoff over the delta-ball around `p_prime` and compares
/// with its value at the corrected distribution.
#[allow(clippy::too_many_arguments)]
pub fn local_optimality_audit(
    p_prime: &Pmf,
    w: &Dmc,
    analysis: &CapacityAnalysis,
    fm: &FisherMatrices,
    gv: &GradientVectors,
    eps: f64,
    n: u64,
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<LocalOptReport> {
    let corr = correction_distributions(p_prime, gv, fm, analysis, w, n)?;
    let zeta_p_prime = zeta_n(p_prime, None, w, eps, n)?;
    let zeta_p_n_prime = zeta_n(&corr.p_n_prime, None, w, eps, n)?;

    let nx = w.num_inputs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    let mut kept = 0;
    while kept < samples {
        let mut h: Vec<f64> = (0..nx)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * delta)
            .collect();
        let mean: f64 = h.iter().sum::<f64>() / nx as f64;
        for v in h.iter_mut() {
            *v -= mean;
        }
        let maxabs = h.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if maxabs > delta {
            for v in h.iter_mut() {
                *v *= delta / maxabs;
            }
        }
        let probs: Vec<f64> = (0..nx).map(|x| p_prime.probs[x] + h[x]).collect();
        if probs.iter().any(|&p| p < 0.0) {
            continue;
        }
        let p = Pmf::new_normalized(probs, 1e-9)?;
        best = best.max(zeta_n(&p, None, w, eps, n)?);
        kept += 1;
    }

    let half_g_norm_sq = 0.5 * fm.j_plus_norm_sq(&gv.g);
    let dim_condition = analysis.dim_pi.saturating_sub(analysis.dim_pi_star)
        == analysis.x_dagger.len() - analysis.x_star.len();

    let (qp_direction, qp_value) = if dim_condition {
        (None, None)
    } else {
        let (dir, val) = quadratic_program_direction(w, analysis, fm, gv, n, delta)?;
        (Some(dir), Some(val))
    };

    Ok(LocalOptReport {
        zeta_p_prime,
        zeta_p_n_prime,
        slack: best - zeta_p_n_prime,
        taylor_gap: zeta_p_n_prime - zeta_p_prime,
        half_g_norm_sq,
        samples,
        dimensionality_condition: dim_condition,
        qp_direction,
        qp_value,
    })
}

/// Projected-gradient ascent on
/// `-(n/2)||u||^2_{J_dagger} + sqrt(n) g^T u` over directions keeping
/// `P' + u` inside the simplex on the capacity support and the ball.
fn quadratic_program_direction(
    w: &Dmc,
    analysis: &CapacityAnalysis,
    fm: &FisherMatrices,
    gv: &GradientVectors,
    n: u64,
    delta: f64,
) -> Result<(Vec<f64>, f64)> {
    let nx = w.num_inputs();
    let p_ref = &analysis.pi_star_vertices[0];
    let nf = n as f64;
    let mut u = vec![0.0; nx];
    let lmax = fm
        .j_dagger
        .iter()
        .cloned()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        * nx as f64;
    let step = 1.0 / (nf * lmax.max(1.0));
    let objective = |u: &DVector<f64>| -> f64 {
        let quad = (u.transpose() * &fm.j_dagger * u)[(0, 0)];
        let lin = csum((0..nx).map(|x| gv.g[x] * u[x]));
        -0.5 * nf * quad + nf.sqrt() * lin
    };
    let mut uv = DVector::from_column_slice(&u);
    for _ in 0..2000 {
        let grad = -nf * (&fm.j_dagger * &uv)
            + nf.sqrt() * DVector::from_column_slice(&gv.g);
        uv += step * grad;
        // Project: support, zero-sum, ball, and simplex feasibility.
        for x in 0..nx {
            if !analysis.x_dagger.contains(&x) {
                uv[x] = 0.0;
            }
        }
        let mean: f64 = analysis.x_dagger.iter().map(|&x| uv[x]).sum::<f64>()
            / analysis.x_dagger.len() as f64;
        for &x in &analysis.x_dagger {
            uv[x] -= mean;
            uv[x] = uv[x].clamp(-p_ref.probs[x], delta).min(delta).max(-delta);
        }
    }
    for x in 0..nx {
        u[x] = uv[x];
    }
    let val = objective(&uv);
    Ok((u, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::capacity_sets;
    use crate::channel::{make_named_channel, Family};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn setup(w: &Dmc, eps: f64) -> (CapacityAnalysis, FisherMatrices, GradientVectors) {
        let a = capacity_sets(w, eps, 1e-12).unwrap();
        let p = a.pi_star_vertices[0].clone();
        let fm = fisher_matrix(&p, w, &a).unwrap();
        let gv = gradient_vectors(&p, w, &a, eps).unwrap();
        (a, fm, gv)
    }

    #[test]
    fn z_channel_fisher_matrix_values() {
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let a = capacity_sets(&w, 1e-3, 1e-12).unwrap();
        let fm = fisher_matrix(&a.pi_star_vertices[0].clone(), &w, &a).unwrap();
        let expect = [[1.25, 0.625], [0.625, 1.5625]];
        for x in 0..2 {
            for xp in 0..2 {
                assert_close(fm.j_full[(x, xp)], expect[x][xp], 1e-9);
            }
        }
        // Row identity: sum_x' J_{xx'} P(x') = 1 for every x.
        let p = &a.pi_star_vertices[0];
        for x in 0..2 {
            let s = (0..2).map(|xp| fm.j_full[(x, xp)] * p.probs[xp]).sum::<f64>();
            assert_close(s, 1.0, 1e-10);
        }
    }

    #[test]
    fn l_factorization() {
        let w = make_named_channel(Family::Bito, &[0.2]).unwrap();
        let (a, fm, _) = setup(&w, 1e-3);
        let p = &a.pi_star_vertices[0];
        let q = output_distribution(p, &w).unwrap();
        let l = DMatrix::from_fn(2, 3, |x, y| w.prob(x, y) / q.probs[y].sqrt());
        let jj = &l * l.transpose();
        for x in 0..2 {
            for xp in 0..2 {
                assert_close(fm.j_full[(x, xp)], jj[(x, xp)], 1e-10);
            }
        }
    }

    #[test]
    fn pseudo_inverse_matches_closed_form() {
        for w in [
            make_named_channel(Family::Z, &[0.5]).unwrap(),
            make_named_channel(Family::Bsc, &[0.11]).unwrap(),
        ] {
            let (a, fm, _) = setup(&w, 1e-3);
            let closed = pseudo_inverse_closed_form(&fm.j_full, &a.x_star, 2).unwrap();
            for x in 0..2 {
                for xp in 0..2 {
                    assert_close(fm.j_plus[(x, xp)], closed[(x, xp)], 1e-9);
                }
            }
        }
    }

    #[test]
    fn pseudo_inverse_identities() {
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let (_, fm, _) = setup(&w, 1e-3);
        // J J+ g = J+ J g = g for g in the feasible subspace.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z: Vec<f64> = (0..fm.dim_h()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let g = &fm.h_basis * DVector::from_column_slice(&z);
            let jjp = &fm.j_star * (&fm.j_plus * &g);
            let jpj = &fm.j_plus * (&fm.j_star * &g);
            assert!((jjp - &g).amax() < 1e-9);
            assert!((jpj - &g).amax() < 1e-9);
        }
        // J+ of a constant vector over x_star is zero.
        let ones = vec![1.0; 2];
        let jp1 = fm.apply_j_plus(&ones);
        assert!(jp1.iter().all(|v| v.abs() < 1e-10));
        // Symmetric nonnegative definite.
        for x in 0..2 {
            for xp in 0..2 {
                assert_close(fm.j_plus[(x, xp)], fm.j_plus[(xp, x)], 1e-12);
            }
        }
        let eig = fm.j_plus.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn z_channel_j_inverse_ones_is_capacity_achiever() {
        // J P* = 1 exactly, so J^{-1} 1 recovers the capacity-achieving
        // input distribution.
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let (a, fm, _) = setup(&w, 1e-3);
        let inv = fm.j_full.clone().try_inverse().unwrap();
        let ji = inv * DVector::from_element(2, 1.0);
        assert_close(ji[0], a.pi_star_vertices[0].probs[0], 1e-8);
        assert_close(ji[1], a.pi_star_vertices[0].probs[1], 1e-8);
        // And the pseudo-inverse has rank one here (dim H = 1).
        assert_eq!(fm.dim_h(), 1);
    }

    #[test]
    fn supremum_matches_projected_gradient_oracle() {
        let w = make_named_channel(Family::Z, &[0.35]).unwrap();
        let (_, fm, _) = setup(&w, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g: Vec<f64> = (0..2).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let predicted = 0.5 * fm.j_plus_norm_sq(&g);
            // Gradient ascent on g.h - 0.5 h^T J h within the feasible span.
            let gb = fm.h_basis.transpose() * DVector::from_column_slice(&g);
            let core = fm.h_basis.transpose() * &fm.j_star * &fm.h_basis;
            let lmax = core.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut z = DVector::zeros(fm.dim_h());
            for _ in 0..20000 {
                let grad = &gb - &core * &z;
                z += grad / (2.0 * lmax);
            }
            let h = &fm.h_basis * &z;
            let val = (DVector::from_column_slice(&g).transpose() * &h)[(0, 0)]
                - 0.5 * (h.transpose() * &fm.j_star * &h)[(0, 0)];
            assert_close(val, predicted, 1e-8);
        }
    }

    #[test]
    fn gradient_vectors_two_paths_agree() {
        for w in [
            make_named_channel(Family::Z, &[0.5]).unwrap(),
            make_named_channel(Family::Bito, &[0.2]).unwrap(),
            make_named_channel(Family::Bsc, &[0.11]).unwrap(),
        ] {
            let (_, _, gv) = setup(&w, 1e-3);
            assert!(
                gv.two_path_residual < 1e-9,
                "paths disagree by {}",
                gv.two_path_residual
            );
        }
    }

    #[test]
    fn gradient_vector_centering() {
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let (a, _, gv) = setup(&w, 1e-3);
        let p = &a.pi_star_vertices[0];
        let mean_breve = csum((0..2).map(|x| p.probs[x] * gv.v_breve[x]));
        let mean_tilde = csum((0..2).map(|x| p.probs[x] * gv.v_tilde[x]));
        let mean_v = csum((0..2).map(|x| p.probs[x] * gv.v[x]));
        assert!(mean_breve.abs() < 1e-9);
        assert_close(mean_tilde, a.v_eps, 1e-9);
        assert_close(mean_v, a.v_eps, 1e-9);
    }

    #[test]
    fn z_channel_v_breve_reverse_formula() {
        // Hand evaluation of the reverse-channel route at theta = 0.5.
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let (a, _, gv) = setup(&w, 1e-3);
        // D(rev_0 || P*) with rev_0 = (0.75, 0.25), P* = (0.6, 0.4).
        let rev0 = Pmf::new(vec![0.75, 0.25]).unwrap();
        let d0 = divergence_moments(&rev0, &a.pi_star_vertices[0]).unwrap().d;
        assert_close(gv.v_breve_alt[0], -2.0 * (d0 - a.c), 1e-9);
    }

    #[test]
    fn symmetric_channel_gradients_vanish_under_j_plus() {
        let w = make_named_channel(Family::AdditiveModK, &[0.7, 0.2, 0.1]).unwrap();
        let (_, fm, gv) = setup(&w, 1e-3);
        // v and v_tilde have identical components, so their images under
        // the pseudo-inverse vanish.
        let jv = fm.apply_j_plus(&gv.v);
        let jvt = fm.apply_j_plus(&gv.v_tilde);
        assert!(jv.iter().all(|x| x.abs() < 1e-9));
        assert!(jvt.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn finite_difference_gradient_oracle() {
        // Central difference of V(P;W) along e0 - e1 at P* matches
        // v(0) - v(1).
        for w in [
            make_named_channel(Family::Z, &[0.5]).unwrap(),
            make_named_channel(Family::Bito, &[0.2]).unwrap(),
        ] {
            let (a, _, gv) = setup(&w, 1e-3);
            let p = &a.pi_star_vertices[0];
            let h = 1e-5;
            let eval = |probs: Vec<f64>| {
                crate::info::channel_moments_weighted(&probs, &w).unwrap().v_cond
            };
            let mut up = p.probs.clone();
            up[0] += h;
            up[1] -= h;
            let mut dn = p.probs.clone();
            dn[0] -= h;
            dn[1] += h;
            let fd = (eval(up) - eval(dn)) / (2.0 * h);
            assert_close(fd, gv.v[0] - gv.v[1], 1e-5);
        }
    }

    #[test]
    fn game_saddlepoint_symmetric_zero() {
        let w = make_named_channel(Family::AdditiveModK, &[0.7, 0.2, 0.1]).unwrap();
        let (_, fm, gv) = setup(&w, 1e-3);
        let game = game_saddlepoint(&gv, &fm, 5).unwrap();
        assert!(game.gamma_star.abs() < 1e-10);
        assert!(game.h_star.iter().all(|x| x.abs() < 1e-9));
        assert!(game.h_tilde_star.iter().all(|x| x.abs() < 1e-9));
        assert!(game.equalizer_residual < 1e-8);
    }

    #[test]
    fn game_value_two_paths() {
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let (_, fm, gv) = setup(&w, 1e-3);
        let game = game_saddlepoint(&gv, &fm, 5).unwrap();
        assert!(game.value_two_path_residual < 1e-10);
        assert!(game.equalizer_residual < 1e-8);
    }

    #[test]
    fn game_grid_minimax_oracle() {
        // One-dimensional feasible space: scan h_tilde = tau * b and find
        // the tau whose slope vector is constant over the support, which is
        // where the inner supremum stops being +infinity.
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let (_, fm, gv) = setup(&w, 1e-3);
        let game = game_saddlepoint(&gv, &fm, 5).unwrap();

        let b: Vec<f64> = (0..2).map(|x| fm.h_basis[(x, 0)]).collect();
        let bv = DVector::from_column_slice(&b);
        let gt = DVector::from_column_slice(&gv.g_tilde);
        let gb = DVector::from_column_slice(&gv.g_breve);
        let mut best_tau = f64::NAN;
        let mut best_spread = f64::INFINITY;
        let mut tau = -50.0;
        while tau <= 50.0 {
            let ht = &bv * tau;
            let slope = &fm.j_dagger * &ht - &gt;
            let spread: f64 = slope[0] - slope[1];
            if spread.abs() < best_spread {
                best_spread = spread.abs();
                best_tau = tau;
            }
            tau += 1e-4;
        }
        let ht = bv * best_tau;
        let value =
            0.5 * (ht.transpose() * &fm.j_dagger * &ht)[(0, 0)] + (ht.transpose() * &gb)[(0, 0)];
        assert_close(value, game.gamma_star, 1e-4);
    }

    #[test]
    fn correction_distributions_properties() {
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let (a, fm, gv) = setup(&w, 1e-3);
        let p = a.pi_star_vertices[0].clone();
        let corr = correction_distributions(&p, &gv, &fm, &a, &w, 1_000_000).unwrap();
        // Scaling n^{-1/2} = 1e-3 bounds the displacement.
        assert!(corr.p_n_prime.linf_distance(&p) <= 1e-3 * (1.0 + gv.g.len() as f64));
        let mass: f64 = corr.p_n_prime.probs.iter().sum();
        assert_close(mass, 1.0, 1e-12);

        // Symmetric channel: zero correction at any n.
        let ws = make_named_channel(Family::AdditiveModK, &[0.7, 0.2, 0.1]).unwrap();
        let (a2, fm2, gv2) = setup(&ws, 1e-3);
        let p2 = a2.pi_star_vertices[0].clone();
        let corr2 = correction_distributions(&p2, &gv2, &fm2, &a2, &ws, 100).unwrap();
        assert!(corr2.p_n_prime.linf_distance(&p2) < 1e-9);
        assert!(corr2.q_n_star.linf_distance(&a2.q_star) < 1e-9);
    }

    #[test]
    fn local_optimality_smoke() {
        let w = make_named_channel(Family::Bsc, &[0.11]).unwrap();
        let (a, fm, gv) = setup(&w, 1e-3);
        let p = a.pi_star_vertices[0].clone();
        let rep =
            local_optimality_audit(&p, &w, &a, &fm, &gv, 1e-3, 1_000_000, 1e-3, 2000, 9).unwrap();
        assert!(rep.slack <= 0.05, "slack {}", rep.slack);
        // Symmetric: correction is null, Taylor gap vanishes.
        assert!(rep.taylor_gap.abs() < 1e-9);
        assert!(rep.half_g_norm_sq < 1e-12);
        assert!(rep.dimensionality_condition);
    }
}
