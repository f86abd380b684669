//! Capacity, the capacity-achieving output distribution, and the polytopes
//! of capacity- and dispersion-achieving input distributions.
//!
//! `solve_capacity` runs Blahut-Arimoto to localize the solution and then
//! polishes it with a Newton solve of the equalization conditions on the
//! detected support. The fourth-order constants need `Q*` to near machine
//! precision, which plain Blahut-Arimoto cannot deliver: a duality gap of
//! `g` only pins `Q*` to about `sqrt(g)`.

use crate::channel::{output_distribution, Dmc, Pmf};
use crate::error::{Error, Result};
use crate::geometry::fisher_raw;
use crate::info::{conditional_divergence_moments, divergence_moments};
use crate::numerics::{csum, nelder_mead_max, KahanSum};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Iteration cap for Blahut-Arimoto.
pub const BA_MAX_ITERS: usize = 1_000_000;
/// Default duality-gap tolerance.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Relative singular-value cut used for numerical ranks.
pub const RANK_CUT: f64 = 1e-9;
/// Vertex-enumeration cap.
pub const MAX_VERTICES: usize = 10_000;
const MAX_COMBINATIONS: u128 = 200_000;

/// Everything the rest of the crate needs to know about the capacity
/// geometry of a channel at a given error probability `eps`.
#[derive(Debug, Clone, Serialize)]
pub struct CapacityAnalysis {
    /// Capacity in nats.
    pub c: f64,
    /// The unique capacity-achieving output distribution.
    pub q_star: Pmf,
    /// One capacity-achieving input distribution.
    pub p_opt: Pmf,
    /// `Delta(x) = D(W_x||Q*) - C` per input.
    pub delta: Vec<f64>,
    /// Inputs with `Delta(x) = 0` (within tolerance).
    pub x_dagger: Vec<usize>,
    /// Vertices of the polytope of capacity-achieving inputs.
    pub pi_vertices: Vec<Pmf>,
    /// Vertices of the dispersion-achieving face.
    pub pi_star_vertices: Vec<Pmf>,
    /// Union of supports of the dispersion-achieving vertices.
    pub x_star: Vec<usize>,
    /// `V(W_x||Q*)` per input.
    pub v_tilde: Vec<f64>,
    pub v_min: f64,
    pub v_max: f64,
    /// `V_min` for `eps <= 1/2`, else `V_max`.
    pub v_eps: f64,
    pub eps: f64,
    pub dim_pi: usize,
    pub dim_pi_star: usize,
    /// Set when the dispersion face is not a singleton; downstream maxima
    /// then iterate its vertices with a local refinement on the face.
    pub pi_star_degenerate: bool,
    /// Set when vertex enumeration overflowed and `pi_vertices` holds only
    /// an interior point (the polytope is then described by `dim_pi`).
    pub vertex_overflow: bool,
    /// Solver tolerance the analysis was computed with.
    pub tol: f64,
}

impl CapacityAnalysis {
    /// `min_{P0 in Pi} ||p - P0||_inf`.
    pub fn linf_to_pi(&self, p: &Pmf) -> f64 {
        self.min_over_pi(|p0| p.linf_distance(p0))
    }

    /// `min_{P0 in Pi} max(||p - P0||_inf, ||p_tilde - P0||_inf)`: the joint
    /// proximity test of the converse payoff branch.
    pub fn joint_linf_to_pi(&self, p: &Pmf, p_tilde: &Pmf) -> f64 {
        self.min_over_pi(|p0| p.linf_distance(p0).max(p_tilde.linf_distance(p0)))
    }

    fn min_over_pi<F: Fn(&Pmf) -> f64>(&self, obj: F) -> f64 {
        let mut best = f64::INFINITY;
        for v in &self.pi_vertices {
            best = best.min(obj(v));
        }
        if self.pi_vertices.len() > 1 {
            // Search the interior of the polytope through a softmax
            // parameterization of vertex weights.
            let k = self.pi_vertices.len();
            let nx = self.pi_vertices[0].len();
            let eval = |coords: &[f64]| -> f64 {
                let mx = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ws: Vec<f64> = coords.iter().map(|c| (c - mx).exp()).collect();
                let tot: f64 = ws.iter().sum();
                let mut probs = vec![0.0; nx];
                for (i, v) in self.pi_vertices.iter().enumerate() {
                    for x in 0..nx {
                        probs[x] += ws[i] / tot * v.probs[x];
                    }
                }
                let p0 = Pmf { probs, labels: None };
                -obj(&p0)
            };
            let (_, neg) = nelder_mead_max(eval, &vec![0.0; k], 1.0, 300);
            best = best.min(-neg);
        }
        best
    }

    /// True iff the dispersion face is a single distribution.
    pub fn pi_star_singleton(&self) -> bool {
        self.pi_star_vertices.len() == 1
    }
}

/// Shannon capacity with the capacity-achieving output distribution and one
/// maximizing input, to duality gap below `tol`.
pub fn solve_capacity(w: &Dmc, tol: f64) -> Result<(f64, Pmf, Pmf)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let nx = w.num_inputs();

    let mut log_p = vec![-(nx as f64).ln(); nx];
    let mut best: Option<(f64, Vec<f64>, f64)> = None; // (gap, p, capacity)

    let eval = |log_p: &[f64]| -> (Vec<f64>, f64, f64) {
        let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        let q = marginal(&p, w);
        let dx: Vec<f64> = (0..nx).map(|x| row_divergence(w, x, &q)).collect();
        let i = csum((0..nx).map(|x| p[x] * dx[x]));
        let gap = dx.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - i;
        (dx, i, gap)
    };

    let mut iters = 0usize;
    loop {
        let (dx, i, gap) = eval(&log_p);
        if best.as_ref().map_or(true, |(g, _, _)| gap < *g) {
            best = Some((gap, log_p.iter().map(|l| l.exp()).collect(), i));
        }
        if gap < tol.max(1e-14) || iters >= BA_MAX_ITERS {
            break;
        }
        // Hand over to Newton once Blahut-Arimoto has localized the support.
        if iters > 256 && gap < 1e-6 {
            break;
        }
        // Multiplicative update in log domain.
        for x in 0..nx {
            log_p[x] += dx[x];
        }
        let norm = crate::numerics::log_sum_exp(&log_p);
        for l in log_p.iter_mut() {
            *l -= norm;
        }
        iters += 1;
    }

    let (ba_gap, ba_p, _) = best.clone().unwrap();
    if ba_gap.is_nan() {
        return Err(Error::NonConvergence(iters));
    }

    // Newton polish on the equalization conditions over the active support.
    let polished = newton_polish(w, &ba_p).and_then(|p| {
        let q = marginal(&p, w);
        let dx: Vec<f64> = (0..nx).map(|x| row_divergence(w, x, &q)).collect();
        let i = csum((0..nx).map(|x| p[x] * dx[x]));
        let gap = dx.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - i;
        if gap.is_finite() && gap < ba_gap.max(tol) {
            Some((gap, p, i))
        } else {
            None
        }
    });

    let (mut gap, mut p, mut c) = polished.unwrap_or_else(|| best.unwrap());

    if gap > tol {
        // Newton failed to reach the requested gap; resume Blahut-Arimoto.
        let mut log_p: Vec<f64> = p.iter().map(|v| v.max(1e-300).ln()).collect();
        while gap > tol && iters < BA_MAX_ITERS {
            for _ in 0..512 {
                let (dx, _, _) = eval(&log_p);
                for x in 0..nx {
                    log_p[x] += dx[x];
                }
                let norm = crate::numerics::log_sum_exp(&log_p);
                for l in log_p.iter_mut() {
                    *l -= norm;
                }
                iters += 1;
            }
            let (_, i, g) = eval(&log_p);
            gap = g;
            c = i;
            p = log_p.iter().map(|l| l.exp()).collect();
        }
        if gap > tol {
            return Err(Error::NonConvergence(BA_MAX_ITERS));
        }
    }

    let p_opt = Pmf::new_normalized(p, 1e-9)?;
    let q_star = output_distribution(&p_opt, w)?;
    Ok((c, q_star, p_opt))
}

fn marginal(p: &[f64], w: &Dmc) -> Vec<f64> {
    (0..w.num_outputs())
        .map(|y| csum((0..p.len()).map(|x| p[x] * w.prob(x, y))))
        .collect()
}

/// `D(W_x || q)` against a raw probability vector.
fn row_divergence(w: &Dmc, x: usize, q: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for y in 0..w.num_outputs() {
        let wxy = w.prob(x, y);
        if wxy > 0.0 {
            if q[y] <= 0.0 {
                return f64::INFINITY;
            }
            acc.add(wxy * (wxy / q[y]).ln());
        }
    }
    acc.value()
}

/// Newton iteration on `D(W_x||(PW))` equalization over the active support.
/// Returns `None` when the iteration fails; callers fall back to the
/// Blahut-Arimoto iterate.
fn newton_polish(w: &Dmc, p_init: &[f64]) -> Option<Vec<f64>> {
    let nx = w.num_inputs();
    let q = marginal(p_init, w);
    let c_est = csum((0..nx).map(|x| p_init[x] * row_divergence(w, x, &q)));

    let mut support: Vec<usize> = (0..nx)
        .filter(|&x| p_init[x] > 1e-9 || row_divergence(w, x, &q) - c_est >= -1e-7)
        .collect();

    'outer: for _attempt in 0..nx {
        if support.len() < 2 {
            return None;
        }
        let k = support.len();
        let mut p = vec![0.0; nx];
        let init_mass: f64 = support.iter().map(|&x| p_init[x].max(1e-6)).sum();
        for &x in &support {
            p[x] = p_init[x].max(1e-6) / init_mass;
        }

        for _iter in 0..80 {
            let q = marginal(&p, w);
            let dx: Vec<f64> = support.iter().map(|&x| row_divergence(w, x, &q)).collect();
            if dx.iter().any(|d| !d.is_finite()) {
                return None;
            }
            let mut f = DVector::zeros(k);
            for j in 1..k {
                f[j - 1] = dx[j] - dx[0];
            }
            f[k - 1] = csum(support.iter().map(|&x| p[x])) - 1.0;
            let resid = f.amax();
            if resid < 1e-13 {
                return Some(p);
            }

            // Jacobian rows: -(J_{x_j,.} - J_{x_0,.}); last row all ones.
            let jmat = fisher_block(w, &p, &support);
            let mut jac = DMatrix::zeros(k, k);
            for j in 1..k {
                for l in 0..k {
                    jac[(j - 1, l)] = -(jmat[(j, l)] - jmat[(0, l)]);
                }
            }
            for l in 0..k {
                jac[(k - 1, l)] = 1.0;
            }

            let svd = jac.svd(true, true);
            let step = svd.solve(&f, 1e-12).ok()?;
            // Backtrack to stay strictly positive on the support; drop a
            // coordinate pinned at the boundary and restart.
            let mut scale: f64 = 1.0;
            for (j, &x) in support.iter().enumerate() {
                if p[x] - step[j] <= 0.0 {
                    if step[j] > 10.0 * p[x] {
                        let gone = x;
                        support.retain(|&s| s != gone);
                        continue 'outer;
                    }
                    scale = scale.min(0.5 * p[x] / step[j]);
                }
            }
            for (j, &x) in support.iter().enumerate() {
                p[x] -= scale * step[j];
            }
        }
        return None;
    }
    None
}

/// The Fisher matrix block over `support` at weights `p`.
fn fisher_block(w: &Dmc, p: &[f64], support: &[usize]) -> DMatrix<f64> {
    let q = marginal(p, w);
    let k = support.len();
    let mut m = DMatrix::zeros(k, k);
    for (a, &x) in support.iter().enumerate() {
        for (b, &xp) in support.iter().enumerate().skip(a) {
            let mut acc = KahanSum::new();
            for y in 0..w.num_outputs() {
                if q[y] > 0.0 {
                    acc.add(w.prob(x, y) * w.prob(xp, y) / q[y]);
                }
            }
            m[(a, b)] = acc.value();
            m[(b, a)] = acc.value();
        }
    }
    m
}

/// Full capacity geometry: support sets, polytope vertices, dispersion face,
/// and dimension bookkeeping.
pub fn capacity_sets(w: &Dmc, eps: f64, tol: f64) -> Result<CapacityAnalysis> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument("eps must lie in (0,1)".into()));
    }
    let (c, q_star, p_opt) = solve_capacity(w, tol)?;
    let nx = w.num_inputs();

    let delta: Vec<f64> = (0..nx)
        .map(|x| divergence_moments(&w.row_pmf(x), &q_star).map(|m| m.d - c))
        .collect::<Result<Vec<_>>>()?;
    // Support detection scales with the solver tolerance.
    let support_tol = (10.0 * tol).max(1e-11);
    let x_dagger: Vec<usize> = (0..nx).filter(|&x| delta[x] >= -support_tol).collect();

    let v_tilde: Vec<f64> = (0..nx)
        .map(|x| divergence_moments(&w.row_pmf(x), &q_star).map(|m| m.v))
        .collect::<Result<Vec<_>>>()?;

    let (pi_vertices, vertex_overflow) = enumerate_pi_vertices(w, &q_star, &x_dagger, &p_opt)?;

    // V is linear over Pi, so its extremes sit at vertices.
    let vertex_v: Vec<f64> = pi_vertices
        .iter()
        .map(|p| csum((0..nx).map(|x| p.probs[x] * v_tilde[x])))
        .collect();
    let v_min = vertex_v.iter().cloned().fold(f64::INFINITY, f64::min);
    let v_max = vertex_v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let v_eps = if eps <= 0.5 { v_min } else { v_max };

    let face_tol = 1e-10 * v_max.abs().max(1.0);
    let pi_star_vertices: Vec<Pmf> = if (eps - 0.5).abs() < f64::EPSILON {
        pi_vertices.clone()
    } else {
        pi_vertices
            .iter()
            .zip(&vertex_v)
            .filter(|&(_, &v)| (v - v_eps).abs() <= face_tol)
            .map(|(p, _)| p.clone())
            .collect()
    };

    let mut x_star: Vec<usize> = Vec::new();
    for p in &pi_star_vertices {
        for x in p.support() {
            if !x_star.contains(&x) {
                x_star.push(x);
            }
        }
    }
    x_star.sort_unstable();

    // Dimension bookkeeping from Fisher ranks on the support blocks.
    let p_ref = pi_star_vertices.first().unwrap_or(&p_opt).probs.clone();
    let j_full = fisher_raw(&p_ref, w);
    let rank_dagger = block_rank(&j_full, &x_dagger);
    let rank_star = block_rank(&j_full, &x_star);
    let dim_pi = x_dagger.len().saturating_sub(rank_dagger);
    let dim_pi_star = x_star.len().saturating_sub(rank_star);

    Ok(CapacityAnalysis {
        c,
        q_star,
        p_opt,
        delta,
        x_dagger,
        pi_star_degenerate: pi_star_vertices.len() > 1,
        pi_vertices,
        pi_star_vertices,
        x_star,
        v_tilde,
        v_min,
        v_max,
        v_eps,
        eps,
        dim_pi,
        dim_pi_star,
        vertex_overflow,
        tol,
    })
}

fn block_rank(j: &DMatrix<f64>, idx: &[usize]) -> usize {
    if idx.is_empty() {
        return 0;
    }
    let k = idx.len();
    let mut block = DMatrix::zeros(k, k);
    for (a, &x) in idx.iter().enumerate() {
        for (b, &xp) in idx.iter().enumerate() {
            block[(a, b)] = j[(x, xp)];
        }
    }
    let svd = block.svd(false, false);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_CUT * smax)
        .count()
}

/// Vertices of `{P : supp(P) in x_dagger, (PW) = Q*}` by basic-solution
/// enumeration. Falls back to the interior point when the combination count
/// explodes.
fn enumerate_pi_vertices(
    w: &Dmc,
    q_star: &Pmf,
    x_dagger: &[usize],
    p_opt: &Pmf,
) -> Result<(Vec<Pmf>, bool)> {
    let ny = w.num_outputs();
    let k = x_dagger.len();
    let a = DMatrix::from_fn(ny, k, |y, j| w.prob(x_dagger[j], y));
    let b = DVector::from_fn(ny, |y, _| q_star.probs[y]);

    let svd_full = a.clone().svd(false, false);
    let smax = svd_full.singular_values.max();
    let rank_a = svd_full
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-11 * smax)
        .count();

    if rank_a == 0 {
        return Err(Error::RankDeficient("channel matrix has rank 0".into()));
    }
    if n_choose_k(k as u128, rank_a as u128) > MAX_COMBINATIONS {
        return Ok((vec![project_to_support(p_opt, x_dagger)], true));
    }

    let mut vertices: Vec<Pmf> = Vec::new();
    let mut overflow = false;
    let mut subset: Vec<usize> = (0..rank_a).collect();
    loop {
        if let Some(p) = try_basic_solution(&a, &b, &subset, x_dagger, w.num_inputs()) {
            if !vertices.iter().any(|v| v.linf_distance(&p) <= 1e-8) {
                vertices.push(p);
                if vertices.len() > MAX_VERTICES {
                    overflow = true;
                    break;
                }
            }
        }
        if !next_combination(&mut subset, k) {
            break;
        }
    }

    if overflow || vertices.is_empty() {
        return Ok((vec![project_to_support(p_opt, x_dagger)], true));
    }
    Ok((vertices, false))
}

fn project_to_support(p: &Pmf, support: &[usize]) -> Pmf {
    let mut probs = vec![0.0; p.len()];
    for &x in support {
        probs[x] = p.probs[x];
    }
    let s: f64 = probs.iter().sum();
    for v in probs.iter_mut() {
        *v /= s;
    }
    Pmf { probs, labels: None }
}

fn try_basic_solution(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    subset: &[usize],
    x_dagger: &[usize],
    nx: usize,
) -> Option<Pmf> {
    let ny = a.nrows();
    let cols = DMatrix::from_fn(ny, subset.len(), |y, j| a[(y, subset[j])]);
    let svd = cols.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return None;
    }
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count();
    if rank < subset.len() {
        return None; // not a basis; the vertex will appear under another subset
    }
    let sol = svd.solve(b, 1e-12).ok()?;
    let mut probs = vec![0.0; nx];
    for (j, &cj) in subset.iter().enumerate() {
        if sol[j] < -1e-10 {
            return None;
        }
        probs[x_dagger[cj]] = sol[j].max(0.0);
    }
    // Verify the full system, not just the selected columns.
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return None;
    }
    let resid = (&cols * &sol - b).amax();
    if resid > 1e-8 {
        return None;
    }
    let s: f64 = probs.iter().sum();
    for v in probs.iter_mut() {
        *v /= s;
    }
    Some(Pmf { probs, labels: None })
}

fn n_choose_k(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut num: u128 = 1;
    for i in 0..k {
        num = num.saturating_mul(n - i) / (i + 1);
        if num > 10 * MAX_COMBINATIONS {
            return num;
        }
    }
    num
}

fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - (k - i) {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Residuals of the conditional-divergence saddlepoint at `(p0, Q*)`.
#[derive(Debug, Clone, Serialize)]
pub struct SaddlepointReport {
    /// `max_P D(W||Q*|P) - C` over random `P` (must be <= 1e-8).
    pub max_p_residual: f64,
    /// `min_Q D(W||Q|P0) - C` over random `Q` (must be >= -1e-8).
    pub min_q_residual: f64,
    /// `max |D(W||Q*|P) - C|` over random `P` supported inside `x_dagger`.
    pub equality_residual: f64,
    pub pass: bool,
}

/// Randomized audit of the divergence saddlepoint at `p0 in Pi`.
pub fn saddlepoint_check(
    p0: &Pmf,
    analysis: &CapacityAnalysis,
    w: &Dmc,
    seed: u64,
) -> Result<SaddlepointReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = w.num_inputs();
    let ny = w.num_outputs();
    let mut max_p_residual = f64::NEG_INFINITY;
    let mut equality_residual: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_simplex(&mut rng, nx);
        let d = conditional_divergence_moments(&p, w, &analysis.q_star)?.d;
        max_p_residual = max_p_residual.max(d - analysis.c);

        let p_in = random_simplex_on(&mut rng, nx, &analysis.x_dagger);
        let d_in = conditional_divergence_moments(&p_in, w, &analysis.q_star)?.d;
        equality_residual = equality_residual.max((d_in - analysis.c).abs());
    }
    let mut min_q_residual = f64::INFINITY;
    for _ in 0..1000 {
        let q = random_simplex(&mut rng, ny);
        let d = conditional_divergence_moments(p0, w, &q)?.d;
        min_q_residual = min_q_residual.min(d - analysis.c);
    }
    let pass =
        max_p_residual <= 1e-8 && min_q_residual >= -1e-8 && equality_residual <= 1e-10;
    Ok(SaddlepointReport {
        max_p_residual,
        min_q_residual,
        equality_residual,
        pass,
    })
}

pub(crate) fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Pmf {
    let mut v: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    Pmf { probs: v, labels: None }
}

fn random_simplex_on(rng: &mut ChaCha8Rng, nx: usize, support: &[usize]) -> Pmf {
    let inner = random_simplex(rng, support.len());
    let mut probs = vec![0.0; nx];
    for (j, &x) in support.iter().enumerate() {
        probs[x] = inner.probs[j];
    }
    Pmf { probs, labels: None }
}

/// Pass/fail record of the dimension identities.
#[derive(Debug, Clone, Serialize)]
pub struct DimsReport {
    pub dim_pi: usize,
    pub dim_pi_star: usize,
    pub rank_j_dagger: usize,
    pub rank_j_star: usize,
    pub x_star_size: usize,
    /// dim(Pi) measured from the enumerated vertices agrees with
    /// `|x_dagger| - rank(J_dagger)`.
    pub nullity_dagger_ok: bool,
    /// The dispersion face equals the capacity polytope restricted to
    /// `x_star`.
    pub face_restriction_ok: bool,
    /// `dim(Pi*) = |x_star| - rank(J_star)`.
    pub nullity_star_ok: bool,
    /// `|x_star| <= rank(J_dagger) + dim(Pi*)`.
    pub size_bound_ok: bool,
    /// Singular values within 1e-8 of the rank cut were seen; ranks are
    /// then ambiguous at double precision.
    pub rank_ambiguous: bool,
    pub pass: bool,
}

/// Verifies the dimension identities tying the polytopes to Fisher ranks.
pub fn dimensionality(
    analysis: &CapacityAnalysis,
    fisher: &crate::geometry::FisherMatrices,
) -> DimsReport {
    let rank_j_dagger = fisher.rank_j_dagger;
    let rank_j_star = fisher.rank_j_star;

    let measured_dim_pi = affine_dimension(&analysis.pi_vertices);
    let nullity_dagger_ok = analysis.vertex_overflow
        || measured_dim_pi == analysis.x_dagger.len().saturating_sub(rank_j_dagger);

    // Pi* should be exactly the Pi vertices supported inside x_star.
    let face_restriction_ok = analysis.vertex_overflow
        || analysis.pi_vertices.iter().all(|v| {
            let inside = v.support().iter().all(|x| analysis.x_star.contains(x));
            let in_face = analysis
                .pi_star_vertices
                .iter()
                .any(|f| f.linf_distance(v) <= 1e-8);
            in_face == inside
        });

    let nullity_star_ok =
        analysis.dim_pi_star == analysis.x_star.len().saturating_sub(rank_j_star);
    let size_bound_ok = analysis.x_star.len() <= rank_j_dagger + analysis.dim_pi_star;

    let rank_ambiguous = fisher.rank_borderline;
    let pass = nullity_dagger_ok && face_restriction_ok && nullity_star_ok && size_bound_ok;
    DimsReport {
        dim_pi: analysis.dim_pi,
        dim_pi_star: analysis.dim_pi_star,
        rank_j_dagger,
        rank_j_star,
        x_star_size: analysis.x_star.len(),
        nullity_dagger_ok,
        face_restriction_ok,
        nullity_star_ok,
        size_bound_ok,
        rank_ambiguous,
        pass,
    }
}

fn affine_dimension(vertices: &[Pmf]) -> usize {
    if vertices.len() <= 1 {
        return 0;
    }
    let nx = vertices[0].len();
    let m = DMatrix::from_fn(vertices.len() - 1, nx, |i, x| {
        vertices[i + 1].probs[x] - vertices[0].probs[x]
    });
    let svd = m.svd(false, false);
    let smax = svd.singular_values.max();
    if smax <= 1e-12 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-7 * smax)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{make_named_channel, Family};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn noiseless_identity_channel() {
        let w = Dmc::new(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let (c, q, _) = solve_capacity(&w, 1e-12).unwrap();
        assert_close(c, 3f64.ln(), 1e-12);
        for y in 0..3 {
            assert_close(q.probs[y], 1.0 / 3.0, 1e-10);
        }
    }

    #[test]
    fn bsc_capacity_closed_form() {
        let lambda: f64 = 0.11;
        let w = make_named_channel(Family::Bsc, &[lambda]).unwrap();
        let (c, q, p) = solve_capacity(&w, 1e-12).unwrap();
        let h2 = -lambda * lambda.ln() - (1.0 - lambda) * (1.0 - lambda).ln();
        assert_close(c, 2f64.ln() - h2, 1e-12);
        assert_close(q.probs[0], 0.5, 1e-10);
        assert_close(p.probs[0], 0.5, 1e-9);
    }

    #[test]
    fn z_channel_closed_form() {
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let (c, q, p) = solve_capacity(&w, 1e-12).unwrap();
        assert_close(c, (1.25f64).ln(), 1e-10);
        assert_close(p.probs[0], 0.6, 1e-8);
        assert_close(q.probs[0], 0.8, 1e-8);
    }

    #[test]
    fn capacity_duality_sandwich() {
        let w = make_named_channel(Family::Bito, &[0.2]).unwrap();
        let tol = 1e-12;
        let (c, q, p) = solve_capacity(&w, tol).unwrap();
        let i = conditional_divergence_moments(&p, &w, &q).unwrap().d;
        assert!(i >= c - tol);
        let max_d = (0..2)
            .map(|x| divergence_moments(&w.row_pmf(x), &q).unwrap().d)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max_d <= c + tol);
    }

    #[test]
    fn bsc_sets_are_singletons() {
        let w = make_named_channel(Family::Bsc, &[0.11]).unwrap();
        let a = capacity_sets(&w, 1e-3, 1e-12).unwrap();
        assert_eq!(a.pi_vertices.len(), 1);
        assert_eq!(a.pi_star_vertices.len(), 1);
        assert!(a.pi_star_singleton());
        assert_close(a.pi_vertices[0].probs[0], 0.5, 1e-9);
        assert_close(a.v_eps, 0.42790, 5e-5);
        assert_eq!(a.x_dagger, vec![0, 1]);
        assert_eq!(a.x_star, vec![0, 1]);
        assert_eq!(a.dim_pi, 0);
    }

    #[test]
    fn z_sets_and_dispersion() {
        let w = make_named_channel(Family::Z, &[0.5]).unwrap();
        let a = capacity_sets(&w, 1e-3, 1e-12).unwrap();
        assert_eq!(a.pi_star_vertices.len(), 1);
        assert_close(a.pi_star_vertices[0].probs[0], 0.6, 1e-8);
        // V_eps = 0.4 * v(0.5 || 0.8).
        let be = |p: f64| Pmf::new(vec![p, 1.0 - p]).unwrap();
        let v = divergence_moments(&be(0.5), &be(0.8)).unwrap().v;
        assert_close(a.v_eps, 0.4 * v, 1e-9);
        assert_eq!(a.dim_pi, 0);
    }

    #[test]
    fn pi_star_equals_pi_at_half() {
        let w = make_named_channel(Family::Bito, &[0.2]).unwrap();
        let a = capacity_sets(&w, 0.5, 1e-12).unwrap();
        assert_eq!(a.pi_vertices.len(), a.pi_star_vertices.len());
    }

    #[test]
    fn vertices_reproduce_q_star() {
        let w = make_named_channel(Family::AdditiveModK, &[0.7, 0.2, 0.1]).unwrap();
        let a = capacity_sets(&w, 1e-3, 1e-12).unwrap();
        for v in &a.pi_vertices {
            let q = output_distribution(v, &w).unwrap();
            assert!(q.linf_distance(&a.q_star) <= 1e-8);
            assert!(v.support().iter().all(|x| a.x_dagger.contains(x)));
        }
    }

    #[test]
    fn v_eps_switches_at_half() {
        let w = make_named_channel(Family::Z, &[0.3]).unwrap();
        let lo = capacity_sets(&w, 0.25, 1e-12).unwrap();
        let hi = capacity_sets(&w, 0.75, 1e-12).unwrap();
        assert_eq!(lo.v_eps, lo.v_min);
        assert_eq!(hi.v_eps, hi.v_max);
    }

    #[test]
    fn saddlepoint_audit_bsc() {
        let w = make_named_channel(Family::Bsc, &[0.11]).unwrap();
        let a = capacity_sets(&w, 1e-3, 1e-12).unwrap();
        let p0 = a.pi_vertices[0].clone();
        let rep = saddlepoint_check(&p0, &a, &w, 7).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn degenerate_pi_two_identical_rows() {
        // Inputs 1 and 2 are clones: Pi is a segment, V constant on it.
        let w = Dmc::new(vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.2, 0.8]]).unwrap();
        let a = capacity_sets(&w, 1e-3, 1e-12).unwrap();
        assert_eq!(a.dim_pi, 1);
        assert!(a.pi_vertices.len() >= 2);
        assert!(a.pi_star_degenerate);
        for v in &a.pi_vertices {
            let q = output_distribution(v, &w).unwrap();
            assert!(q.linf_distance(&a.q_star) <= 1e-8);
        }
    }

    #[test]
    fn random_channels_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| random_simplex(&mut rng, 4).probs)
                .collect();
            let w = Dmc::new(rows).unwrap();
            let tol = 1e-12;
            let (c, q, p) = solve_capacity(&w, tol).unwrap();
            let i = conditional_divergence_moments(&p, &w, &q).unwrap().d;
            assert!(i >= c - tol * 10.0);
            for x in 0..3 {
                let d = divergence_moments(&w.row_pmf(x), &q).unwrap().d;
                assert!(d <= c + tol.max(1e-12) * 10.0, "duality violated: {d} > {c}");
            }
        }
    }
}
