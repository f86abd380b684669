//! Scalar information functionals: divergence moments, channel moments,
//! Rényi divergence, the quantile correction `F_eps`, and the `zeta_n`
//! payoff functions.
//!
//! All expectations are exact finite sums in double precision with
//! compensated accumulation. Quantities are in nats.

use crate::capacity::CapacityAnalysis;
use crate::channel::{output_distribution, Dmc, Pmf};
use crate::error::{Error, Result};
use crate::normal::q_inv;
use crate::numerics::{csum, KahanSum};
use serde::Serialize;

/// KL divergence together with its variance, third central moment, and
/// skewness. Skewness is an explicit flagged state (`None`) when the
/// variance vanishes, never a NaN.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DivergenceMoments {
    /// `D(P||Q)` in nats.
    pub d: f64,
    /// Divergence variance in nats^2.
    pub v: f64,
    /// Third central moment in nats^3.
    pub t: f64,
    /// `t / v^{3/2}`, defined iff `v > 0`.
    pub s: Option<f64>,
}

/// Moments of the information density `i(X,Y) = log(W(Y|X)/(PW)(Y))`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChannelMoments {
    /// Mutual information `I(P;W)`.
    pub i: f64,
    /// Conditional information variance `V(P;W)`.
    pub v_cond: f64,
    /// Unconditional information variance.
    pub v_uncond: f64,
    /// Reverse dispersion: expected conditional variance given `Y`.
    pub v_rev: f64,
    /// Conditional third central moment `T(P;W)`.
    pub t_cond: f64,
    /// Unconditional third central moment.
    pub t_uncond: f64,
    pub s_cond: Option<f64>,
    pub s_uncond: Option<f64>,
    /// `1 - v_rev / v_uncond`, in \[0, 1\]; undefined for exotic channels
    /// with zero unconditional variance.
    pub rho: Option<f64>,
}

fn skewness(t: f64, v: f64) -> Option<f64> {
    if v > 0.0 {
        Some(t / v.powf(1.5))
    } else {
        None
    }
}

/// Divergence mean, variance, and third central moment of `log(dP/dQ)`
/// under `P`. Requires `P << Q`.
pub fn divergence_moments(p: &Pmf, q: &Pmf) -> Result<DivergenceMoments> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "pmfs of length {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut llrs = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        if p.probs[i] > 0.0 {
            if q.probs[i] <= 0.0 {
                return Err(Error::SupportViolation(format!(
                    "P({i}) > 0 but Q({i}) = 0"
                )));
            }
            llrs.push((i, (p.probs[i] / q.probs[i]).ln()));
        }
    }
    let d = csum(llrs.iter().map(|&(i, l)| p.probs[i] * l));
    let v = csum(llrs.iter().map(|&(i, l)| p.probs[i] * (l - d) * (l - d)));
    let t = csum(llrs.iter().map(|&(i, l)| p.probs[i] * (l - d).powi(3)));
    let v = v.max(0.0);
    Ok(DivergenceMoments {
        d,
        v,
        t,
        s: skewness(t, v),
    })
}

/// Rényi divergence of order `alpha != 1`:
/// `(1/(alpha-1)) log sum_x Q(x) (P(x)/Q(x))^alpha`.
pub fn renyi_divergence(p: &Pmf, q: &Pmf, alpha: f64) -> Result<f64> {
    if (alpha - 1.0).abs() < 1e-12 {
        return Err(Error::InvalidArgument("alpha must differ from 1".into()));
    }
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch("pmf lengths differ".into()));
    }
    let mut acc = KahanSum::new();
    for i in 0..p.len() {
        let (pi, qi) = (p.probs[i], q.probs[i]);
        if pi > 0.0 && qi <= 0.0 {
            return Err(Error::SupportViolation(format!(
                "P({i}) > 0 but Q({i}) = 0"
            )));
        }
        if qi > 0.0 && pi > 0.0 {
            // q * (p/q)^alpha = exp(alpha log p + (1-alpha) log q)
            acc.add((alpha * pi.ln() + (1.0 - alpha) * qi.ln()).exp());
        }
        // p = 0: contributes 0 for alpha > 0; q = 0 with p = 0 skipped.
    }
    Ok(acc.value().ln() / (alpha - 1.0))
}

/// Conditional Rényi divergence `D_alpha(W||Q|P) = E_P[D_alpha(W_X||Q)]`.
pub fn conditional_renyi_divergence(p: &Pmf, w: &Dmc, q: &Pmf, alpha: f64) -> Result<f64> {
    let mut acc = KahanSum::new();
    for x in 0..p.len() {
        if p.probs[x] > 0.0 {
            acc.add(p.probs[x] * renyi_divergence(&w.row_pmf(x), q, alpha)?);
        }
    }
    Ok(acc.value())
}

/// Conditional divergence moments `D/V/T(W||Q|P) = E_P[·(W_X||Q)]`.
pub fn conditional_divergence_moments(p: &Pmf, w: &Dmc, q: &Pmf) -> Result<DivergenceMoments> {
    if p.len() != w.num_inputs() {
        return Err(Error::DimensionMismatch(
            "input pmf does not match channel".into(),
        ));
    }
    let mut d = KahanSum::new();
    let mut v = KahanSum::new();
    let mut t = KahanSum::new();
    for x in 0..p.len() {
        if p.probs[x] > 0.0 {
            let m = divergence_moments(&w.row_pmf(x), q)?;
            d.add(p.probs[x] * m.d);
            v.add(p.probs[x] * m.v);
            t.add(p.probs[x] * m.t);
        }
    }
    let (d, v, t) = (d.value(), v.value(), t.value());
    Ok(DivergenceMoments {
        d,
        v,
        t,
        s: skewness(t, v),
    })
}

/// Weighted information-density moments for a not-necessarily-normalized
/// nonnegative weight vector. Used by finite-difference audits that perturb
/// a single coordinate off the simplex.
pub fn channel_moments_weighted(weights: &[f64], w: &Dmc) -> Result<ChannelMoments> {
    if weights.len() != w.num_inputs() {
        return Err(Error::DimensionMismatch(
            "weight vector does not match channel".into(),
        ));
    }
    let ny = w.num_outputs();
    let marg: Vec<f64> = (0..ny)
        .map(|y| csum((0..weights.len()).map(|x| weights[x] * w.prob(x, y))))
        .collect();

    // Joint weights weights[x] * W(y|x) and density log(W(y|x)/marg(y)).
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for x in 0..weights.len() {
        if weights[x] <= 0.0 {
            continue;
        }
        for y in 0..ny {
            let wxy = w.prob(x, y);
            if wxy > 0.0 {
                if marg[y] <= 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "output {y} unreachable yet weighted"
                    )));
                }
                pairs.push((weights[x] * wxy, (wxy / marg[y]).ln()));
            }
        }
    }
    let mass = csum(pairs.iter().map(|&(m, _)| m));
    let i = csum(pairs.iter().map(|&(m, l)| m * l)) / mass;
    let vu = csum(pairs.iter().map(|&(m, l)| m * (l - i) * (l - i))) / mass;
    let tu = csum(pairs.iter().map(|&(m, l)| m * (l - i).powi(3))) / mass;

    // Conditional variance/third moment: centered per input row.
    let mut v_acc = KahanSum::new();
    let mut t_acc = KahanSum::new();
    for x in 0..weights.len() {
        if weights[x] <= 0.0 {
            continue;
        }
        let row: Vec<(f64, f64)> = (0..ny)
            .filter(|&y| w.prob(x, y) > 0.0)
            .map(|y| (w.prob(x, y), (w.prob(x, y) / marg[y]).ln()))
            .collect();
        let dx = csum(row.iter().map(|&(py, l)| py * l));
        let vx = csum(row.iter().map(|&(py, l)| py * (l - dx) * (l - dx)));
        let tx = csum(row.iter().map(|&(py, l)| py * (l - dx).powi(3)));
        v_acc.add(weights[x] / mass * vx);
        t_acc.add(weights[x] / mass * tx);
    }
    let v = v_acc.value();
    let t = t_acc.value();

    // Reverse dispersion: expected conditional variance of the density
    // given Y, with X ~ reverse channel.
    let mut vr_acc = KahanSum::new();
    for y in 0..ny {
        if marg[y] <= 0.0 {
            continue;
        }
        let col: Vec<(f64, f64)> = (0..weights.len())
            .filter(|&x| weights[x] > 0.0 && w.prob(x, y) > 0.0)
            .map(|x| {
                (
                    weights[x] * w.prob(x, y) / marg[y],
                    (w.prob(x, y) / marg[y]).ln(),
                )
            })
            .collect();
        let mean_y = csum(col.iter().map(|&(px, l)| px * l));
        let var_y = csum(col.iter().map(|&(px, l)| px * (l - mean_y) * (l - mean_y)));
        vr_acc.add(marg[y] / mass * var_y);
    }
    let v_rev = vr_acc.value();

    let vu = vu.max(0.0);
    let rho = if vu > 0.0 {
        Some((1.0 - v_rev / vu).clamp(0.0, 1.0))
    } else {
        None
    };
    Ok(ChannelMoments {
        i,
        v_cond: v.max(0.0),
        v_uncond: vu,
        v_rev,
        t_cond: t,
        t_uncond: tu,
        s_cond: skewness(t, v),
        s_uncond: skewness(tu, vu),
        rho,
    })
}

/// All nine information-density scalars at `(P, W)`.
pub fn channel_moments(p: &Pmf, w: &Dmc) -> Result<ChannelMoments> {
    channel_moments_weighted(&p.probs, w)
}

/// The quantile correction
/// `F_eps = t^2/2 - (T/(6V))(t^2 - 1) + (1/2) log(2 pi V)` with
/// `t = Qinv(eps)`.
pub fn f_eps(v: f64, t3: f64, eps: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::DegenerateVariance(format!(
            "F_eps needs positive variance, got {v}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument("eps must lie in (0,1)".into()));
    }
    let t = q_inv(eps);
    Ok(0.5 * t * t - t3 / (6.0 * v) * (t * t - 1.0)
        + 0.5 * (2.0 * std::f64::consts::PI * v).ln())
}

/// The payoff
/// `zeta_n(P,Q) = n D(W||Q|P) - sqrt(n V(W||Q|P)) t_eps + F_eps(W||Q|P)`.
///
/// With `q = None` the output marginal `(PW)` is used, which reproduces the
/// single-argument form `zeta_n(P;W)`.
pub fn zeta_n(p: &Pmf, q: Option<&Pmf>, w: &Dmc, eps: f64, n: u64) -> Result<f64> {
    let marg;
    let q = match q {
        Some(q) => q,
        None => {
            marg = output_distribution(p, w)?;
            &marg
        }
    };
    let m = conditional_divergence_moments(p, w, q)?;
    if !(m.v > 0.0) {
        return Err(Error::DegenerateVariance(
            "conditional divergence variance vanishes".into(),
        ));
    }
    let t_eps = q_inv(eps);
    Ok(n as f64 * m.d - (n as f64 * m.v).sqrt() * t_eps + f_eps(m.v, m.t, eps)?)
}

/// Which branch [`zeta_hat_n`] selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ZetaHatBranch {
    /// Both `P` and the generator of `Q` sit within `delta_n` of a common
    /// capacity-achieving distribution; the payoff is `zeta_n(P,Q)`.
    Near,
    /// Far branch: `n D + sqrt(2 n V / (1-eps)) - log((1-eps)/2)`.
    Far,
}

/// The converse payoff `zeta_hat_n(P, Q; delta_n)` with `Q = (p_tilde W)`.
///
/// The branch test asks for a single `P0` in the capacity-achieving
/// polytope with both `||P - P0||_inf <= delta_n` and
/// `||p_tilde - P0||_inf <= delta_n`.
pub fn zeta_hat_n(
    p: &Pmf,
    p_tilde: &Pmf,
    w: &Dmc,
    eps: f64,
    n: u64,
    delta_n: f64,
    analysis: &CapacityAnalysis,
) -> Result<(f64, ZetaHatBranch)> {
    let q = output_distribution(p_tilde, w)?;
    let near = analysis.joint_linf_to_pi(p, p_tilde) <= delta_n;
    if near {
        Ok((zeta_n(p, Some(&q), w, eps, n)?, ZetaHatBranch::Near))
    } else {
        let m = conditional_divergence_moments(p, w, &q)?;
        if !(m.v > 0.0) {
            return Err(Error::DegenerateVariance(
                "conditional divergence variance vanishes".into(),
            ));
        }
        let val = n as f64 * m.d + (2.0 * n as f64 * m.v / (1.0 - eps)).sqrt()
            - ((1.0 - eps) / 2.0).ln();
        Ok((val, ZetaHatBranch::Far))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{make_named_channel, reverse_channel, Family};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn be(p: f64) -> Pmf {
        Pmf::new(vec![p, 1.0 - p]).unwrap()
    }

    #[test]
    fn divergence_of_self_is_zero() {
        let p = Pmf::new(vec![0.2, 0.5, 0.3]).unwrap();
        let m = divergence_moments(&p, &p).unwrap();
        assert_eq!(m.d, 0.0);
        assert_eq!(m.v, 0.0);
        assert_eq!(m.t, 0.0);
        assert!(m.s.is_none());
    }

    #[test]
    fn bernoulli_divergence_hand_sum() {
        // Two-term hand sum: 0.7 ln 1.4 + 0.3 ln 0.6.
        let m = divergence_moments(&be(0.7), &be(0.5)).unwrap();
        let expect = 0.7 * (1.4f64).ln() + 0.3 * (0.6f64).ln();
        assert_close(m.d, expect, 1e-15);
        assert_close(m.d, 0.08228287850505178, 1e-12);
    }

    #[test]
    fn z_channel_row_divergence_variance() {
        // Row W_1 of z(0.5) against Q* = (0.8, 0.2) is a Bernoulli pair
        // with parameters (0.5, 0.8).
        let z = make_named_channel(Family::Z, &[0.5]).unwrap();
        let qstar = Pmf::new(vec![0.8, 0.2]).unwrap();
        let m = divergence_moments(&z.row_pmf(1), &qstar).unwrap();
        let hand = divergence_moments(&be(0.5), &be(0.8)).unwrap();
        assert_close(m.v, hand.v, 1e-15);
    }

    #[test]
    fn divergence_support_violation() {
        assert!(divergence_moments(&be(0.5), &Pmf::point_mass(2, 0)).is_err());
    }

    #[test]
    fn renyi_examples() {
        let p = Pmf::new(vec![0.25, 0.35, 0.4]).unwrap();
        assert_close(renyi_divergence(&p, &p, 2.0).unwrap(), 0.0, 1e-14);
        assert_close(renyi_divergence(&p, &p, 0.5).unwrap(), 0.0, 1e-14);

        // alpha -> 1 continuity probe.
        let d = divergence_moments(&be(0.7), &be(0.5)).unwrap().d;
        for a in [1.0 - 1e-4, 1.0 + 1e-4] {
            assert_close(renyi_divergence(&be(0.7), &be(0.5), a).unwrap(), d, 1e-6);
        }

        // Point mass vs fair coin at alpha = 2: log(0.5 * 2^2) = log 2.
        let point = Pmf::point_mass(2, 0);
        assert_close(
            renyi_divergence(&point, &be(0.5), 2.0).unwrap(),
            2f64.ln(),
            1e-14,
        );
    }

    #[test]
    fn bsc_channel_moments_closed_form() {
        let lambda: f64 = 0.11;
        let bsc = make_named_channel(Family::Bsc, &[lambda]).unwrap();
        let m = channel_moments(&Pmf::uniform(2), &bsc).unwrap();
        let h2 = -lambda * lambda.ln() - (1.0 - lambda) * (1.0 - lambda).ln();
        let c = 2f64.ln() - h2;
        let d = ((1.0 - lambda) / lambda).ln();
        let v = lambda * (1.0 - lambda) * d * d;
        let t = lambda * (1.0 - lambda) * (2.0 * lambda - 1.0) * d.powi(3);
        assert_close(m.i, c, 1e-14);
        assert_close(m.v_cond, v, 1e-14);
        assert_close(m.t_cond, t, 1e-13);
        // Weakly symmetric channel at the uniform input: rho = 0.
        assert!(m.rho.unwrap().abs() < 1e-12);
    }

    #[test]
    fn law_of_total_variance() {
        // Vu = Vr + Var_{(PW)}[D(rev_y || P)] over assorted channels.
        let cases = [
            (make_named_channel(Family::Bito, &[0.23]).unwrap(), vec![0.3, 0.7]),
            (make_named_channel(Family::Z, &[0.4]).unwrap(), vec![0.55, 0.45]),
            (
                make_named_channel(Family::AdditiveModK, &[0.6, 0.3, 0.1]).unwrap(),
                vec![0.2, 0.5, 0.3],
            ),
        ];
        for (w, pv) in cases {
            let p = Pmf::new(pv).unwrap();
            let m = channel_moments(&p, &w).unwrap();
            let q = output_distribution(&p, &w).unwrap();
            let rev = reverse_channel(&p, &w, false).unwrap();
            let dvals: Vec<f64> = (0..q.len())
                .map(|y| divergence_moments(&rev.row_pmf(y), &p).unwrap().d)
                .collect();
            let mean = csum((0..q.len()).map(|y| q.probs[y] * dvals[y]));
            let var = csum(
                (0..q.len()).map(|y| q.probs[y] * (dvals[y] - mean) * (dvals[y] - mean)),
            );
            assert_close(m.v_uncond, m.v_rev + var, 1e-10);
            // The conditional mean of i given Y=y is exactly D(rev_y || P),
            // so the mean above is the mutual information.
            assert_close(mean, m.i, 1e-12);
        }
    }

    #[test]
    fn f_eps_examples() {
        let inv_2pi = 1.0 / (2.0 * std::f64::consts::PI);
        assert_close(f_eps(inv_2pi, 0.0, 0.5).unwrap(), 0.0, 1e-13);
        assert_close(
            f_eps(1.0, 0.0, 0.5).unwrap(),
            0.5 * (2.0 * std::f64::consts::PI).ln(),
            1e-13,
        );
        assert!(f_eps(0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn zeta_n_bsc_plug_in() {
        let bsc = make_named_channel(Family::Bsc, &[0.11]).unwrap();
        let p = Pmf::uniform(2);
        let eps = 1e-3;
        let n = 1000;
        let m = channel_moments(&p, &bsc).unwrap();
        let t_eps = q_inv(eps);
        let expect = n as f64 * m.i - (n as f64 * m.v_cond).sqrt() * t_eps
            + f_eps(m.v_cond, m.t_cond, eps).unwrap();
        assert_close(zeta_n(&p, None, &bsc, eps, n).unwrap(), expect, 1e-10);
    }

    #[test]
    fn zeta_n_at_zero_blocklength_is_f_eps() {
        let bito = make_named_channel(Family::Bito, &[0.2]).unwrap();
        let p = Pmf::uniform(2);
        let m = channel_moments(&p, &bito).unwrap();
        assert_close(
            zeta_n(&p, None, &bito, 0.01, 0).unwrap(),
            f_eps(m.v_cond, m.t_cond, 0.01).unwrap(),
            1e-13,
        );
    }
}
