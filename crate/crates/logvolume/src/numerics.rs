//! Small numeric helpers shared across modules.

/// Neumaier compensated summation. The third-moment sums cancel heavily,
/// so plain accumulation loses digits that the O(1) constants need.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn csum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::new();
    for x in it {
        acc.add(x);
    }
    acc.value()
}

/// log(sum exp(v)) with max-shift.
pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s = csum(vals.iter().map(|&v| (v - m).exp()));
    m + s.ln()
}

/// Greatest common divisor of a set of positive reals, by the Euclidean
/// algorithm with an absolute stopping tolerance.
///
/// Returns `None` when no common divisor explains the set at double
/// precision: either some multiplier would exceed `max_mult` (the bounded-
/// denominator test) or a residual exceeds `tol`. Without the multiplier
/// bound every ratio would pass, since any real is within 1e-9 of a
/// rational with denominator below 1e6.
pub fn real_gcd(diffs: &[f64], tol: f64, max_mult: f64) -> Option<f64> {
    let mut g: f64 = 0.0;
    let stop = tol * 1e-2;
    for &d in diffs {
        let d = d.abs();
        if d <= tol {
            continue;
        }
        if g == 0.0 {
            g = d;
            continue;
        }
        let (mut a, mut b) = if g >= d { (g, d) } else { (d, g) };
        let mut iter = 0;
        while b > stop && iter < 200 {
            let r = a - (a / b).floor() * b;
            // Fold near-multiples to exact ones.
            let r = if r > b - stop { r - b } else { r };
            a = b;
            b = r.abs();
            iter += 1;
        }
        g = a;
    }
    if g <= tol {
        // All differences negligible: degenerate single-point set.
        return Some(0.0);
    }
    for &d in diffs {
        let k = (d / g).round();
        if k.abs() > max_mult || (d - k * g).abs() > tol {
            return None;
        }
    }
    Some(g)
}

/// Linspace-style inclusive grid `start, start+step, ..` up to `end`
/// (tolerating floating-point endpoint fuzz).
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0);
    let mut out = Vec::new();
    let n = ((end - start) / step + 0.5).floor() as usize;
    for i in 0..=n {
        let v = start + step * i as f64;
        if v <= end + step * 1e-9 {
            out.push(v);
        }
    }
    out
}

/// Nelder-Mead maximization of `f` over R^d, returning (argmax, max).
///
/// Plain textbook simplex method; the faces it is used on are smooth and
/// low-dimensional, so defaults are fine.
pub fn nelder_mead_max<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: f64,
    iters: usize,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    if d == 0 {
        let v = f(x0);
        return (x0.to_vec(), v);
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.to_vec());
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += scale;
        simplex.push(p);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();

    for _ in 0..iters {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
        let best = idx[0];
        let worst = idx[d];
        let second_worst = idx[d - 1];

        let mut centroid = vec![0.0; d];
        for &i in idx.iter().take(d) {
            for j in 0..d {
                centroid[j] += simplex[i][j] / d as f64;
            }
        }

        let refl: Vec<f64> = (0..d)
            .map(|j| centroid[j] + (centroid[j] - simplex[worst][j]))
            .collect();
        let f_refl = f(&refl);

        if f_refl > vals[best] {
            let exp: Vec<f64> = (0..d)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - simplex[worst][j]))
                .collect();
            let f_exp = f(&exp);
            if f_exp > f_refl {
                simplex[worst] = exp;
                vals[worst] = f_exp;
            } else {
                simplex[worst] = refl;
                vals[worst] = f_refl;
            }
        } else if f_refl > vals[second_worst] {
            simplex[worst] = refl;
            vals[worst] = f_refl;
        } else {
            let con: Vec<f64> = (0..d)
                .map(|j| centroid[j] - 0.5 * (centroid[j] - simplex[worst][j]))
                .collect();
            let f_con = f(&con);
            if f_con > vals[worst] {
                simplex[worst] = con;
                vals[worst] = f_con;
            } else {
                // Shrink toward the best vertex.
                let bestp = simplex[best].clone();
                for i in 0..=d {
                    if i == best {
                        continue;
                    }
                    for j in 0..d {
                        simplex[i][j] = bestp[j] + 0.5 * (simplex[i][j] - bestp[j]);
                    }
                    vals[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut bi = 0;
    for i in 1..=d {
        if vals[i] > vals[bi] {
            bi = i;
        }
    }
    (simplex[bi].clone(), vals[bi])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcd_exact_multiples() {
        let g = real_gcd(&[0.6931471805599453, 1.3862943611198906], 1e-9, 1e6).unwrap();
        assert!((g - 0.6931471805599453).abs() < 1e-12);
    }

    #[test]
    fn gcd_rejects_irrational_ratio() {
        // ln 2 and ln 3 admit no common divisor with bounded multipliers.
        assert!(real_gcd(&[2f64.ln(), 3f64.ln()], 1e-9, 1e6).is_none());
    }

    #[test]
    fn gcd_degenerate() {
        assert_eq!(real_gcd(&[0.0, 0.0], 1e-9, 1e6), Some(0.0));
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = vec![1e16, 1.0, -1e16, 1.0];
        assert_eq!(csum(xs), 2.0);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let (x, v) = nelder_mead_max(
            |p| -(p[0] - 1.5) * (p[0] - 1.5) - (p[1] + 0.5) * (p[1] + 0.5),
            &[0.0, 0.0],
            0.5,
            200,
        );
        assert!(v > -1e-10);
        assert!((x[0] - 1.5).abs() < 1e-4 && (x[1] + 0.5).abs() < 1e-4);
    }
}
