//! Discrete memoryless channels and probability vectors.
//!
//! Alphabets are index-based; labels are presentation-only. Zero channel
//! entries are legal (the Z channel requires them); log-likelihood-ratio
//! value sets only include pairs with positive channel probability.

use crate::error::{Error, Result};
use crate::numerics::{csum, real_gcd};
use serde::{Deserialize, Serialize};

/// Sum-to-one tolerance enforced on construction.
pub const PMF_SUM_TOL: f64 = 1e-12;
/// Looser tolerance accepted when loading external channel files; rows are
/// renormalized exactly after the check.
pub const LOAD_SUM_TOL: f64 = 1e-9;
/// Two log-likelihood values closer than this are treated as one atom.
pub const VALUE_MERGE_TOL: f64 = 1e-11;
/// Lattice membership tolerance.
pub const LATTICE_TOL: f64 = 1e-9;
/// Bounded-denominator cap of the commensurability test.
pub const LATTICE_MAX_MULT: f64 = 1e6;

/// A probability mass function over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    pub probs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub labels: Option<Vec<String>>,
}

impl Pmf {
    /// Validates nonnegativity and unit mass (within `PMF_SUM_TOL`).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("empty vector".into()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(Error::InvalidPmf(format!("entry {i} = {p} is negative")));
            }
        }
        let s = csum(probs.iter().cloned());
        if (s - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidPmf(format!("mass sums to {s}, not 1")));
        }
        Ok(Self { probs, labels: None })
    }

    /// Accepts a vector whose mass is within `tol` of 1 and renormalizes it.
    pub fn new_normalized(probs: Vec<f64>, tol: f64) -> Result<Self> {
        let s = csum(probs.iter().cloned());
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidPmf(format!(
                "mass sums to {s}, outside tolerance {tol}"
            )));
        }
        let probs = probs.into_iter().map(|p| p / s).collect::<Vec<_>>();
        Self::new(probs)
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
            labels: None,
        }
    }

    pub fn point_mass(k: usize, at: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[at] = 1.0;
        Self { probs, labels: None }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Indices with strictly positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.probs[i] > 0.0).collect()
    }

    pub fn linf_distance(&self, other: &Pmf) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A discrete memoryless channel: a row-stochastic `|X| x |Y|` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dmc {
    matrix: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub input_labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub output_labels: Option<Vec<String>>,
}

impl Dmc {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        if matrix.len() < 2 {
            return Err(Error::InvalidChannel("need at least 2 inputs".into()));
        }
        let ny = matrix[0].len();
        if ny < 2 {
            return Err(Error::InvalidChannel("need at least 2 outputs".into()));
        }
        for (x, row) in matrix.iter().enumerate() {
            if row.len() != ny {
                return Err(Error::InvalidChannel(format!(
                    "row {x} has {} entries, expected {ny}",
                    row.len()
                )));
            }
            Pmf::new(row.clone())
                .map_err(|e| Error::InvalidChannel(format!("row {x}: {e}")))?;
        }
        Ok(Self {
            matrix,
            input_labels: None,
            output_labels: None,
        })
    }

    /// As [`Dmc::new`] but with the looser load tolerance, renormalizing rows.
    pub fn new_normalized(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let rows = matrix
            .into_iter()
            .enumerate()
            .map(|(x, row)| {
                Pmf::new_normalized(row, LOAD_SUM_TOL)
                    .map(|p| p.probs)
                    .map_err(|e| Error::InvalidChannel(format!("row {x}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn num_inputs(&self) -> usize {
        self.matrix.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.matrix[x]
    }

    pub fn row_pmf(&self, x: usize) -> Pmf {
        Pmf {
            probs: self.matrix[x].clone(),
            labels: self.output_labels.clone(),
        }
    }

    /// `W(y|x)`.
    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.matrix[x][y]
    }
}

/// Named parametric channel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Bsc,
    Z,
    Bito,
    AdditiveModK,
    Custom,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bsc" => Ok(Family::Bsc),
            "z" => Ok(Family::Z),
            "bito" => Ok(Family::Bito),
            "additive-mod-k" => Ok(Family::AdditiveModK),
            "custom" => Ok(Family::Custom),
            other => Err(Error::UnknownFamily(other.into())),
        }
    }
}

/// Builds a channel from a named family and its parameters.
///
/// - `bsc`: crossover probability `lambda` in (0, 1);
/// - `z`: `W(0|0) = 1`, `W(0|1) = theta` with `theta` in \[0, 1\];
/// - `bito`: the binary-input ternary-output channel with parameter
///   `theta` in (0, 1/3);
/// - `additive-mod-k`: `Y = X + E mod k` with noise pmf given by `params`;
/// - `custom` is only constructible from an explicit matrix (see
///   [`make_custom_channel`]).
pub fn make_named_channel(family: Family, params: &[f64]) -> Result<Dmc> {
    match family {
        Family::Bsc => {
            let [lambda] = expect_params(family, params, 1)?;
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(range_err(family, "lambda must lie in (0,1)"));
            }
            Dmc::new(vec![vec![1.0 - lambda, lambda], vec![lambda, 1.0 - lambda]])
        }
        Family::Z => {
            let [theta] = expect_params(family, params, 1)?;
            if !(0.0..=1.0).contains(&theta) {
                return Err(range_err(family, "theta must lie in [0,1]"));
            }
            Dmc::new(vec![vec![1.0, 0.0], vec![theta, 1.0 - theta]])
        }
        Family::Bito => {
            let [theta] = expect_params(family, params, 1)?;
            if !(theta > 0.0 && theta < 1.0 / 3.0) {
                return Err(range_err(family, "theta must lie in (0, 1/3)"));
            }
            Dmc::new(vec![
                vec![1.0 - 2.0 * theta, theta, theta],
                vec![theta, theta, 1.0 - 2.0 * theta],
            ])
        }
        Family::AdditiveModK => {
            let k = params.len();
            if k < 2 {
                return Err(range_err(family, "need a noise pmf with k >= 2 entries"));
            }
            let noise = Pmf::new_normalized(params.to_vec(), LOAD_SUM_TOL)
                .map_err(|e| range_err(family, &format!("noise pmf invalid: {e}")))?;
            let mut matrix = vec![vec![0.0; k]; k];
            for x in 0..k {
                for y in 0..k {
                    matrix[x][y] = noise.probs[(y + k - x) % k];
                }
            }
            Dmc::new(matrix)
        }
        Family::Custom => Err(Error::InvalidArgument(
            "custom channels require an explicit matrix".into(),
        )),
    }
}

/// Validates a user-provided matrix as a channel (load tolerance).
pub fn make_custom_channel(matrix: Vec<Vec<f64>>) -> Result<Dmc> {
    Dmc::new_normalized(matrix)
}

fn expect_params<const N: usize>(family: Family, params: &[f64], n: usize) -> Result<[f64; N]> {
    debug_assert_eq!(N, n);
    if params.len() != n {
        return Err(range_err(
            family,
            &format!("expected {n} parameter(s), got {}", params.len()),
        ));
    }
    let mut out = [0.0; N];
    out.copy_from_slice(&params[..N]);
    Ok(out)
}

fn range_err(family: Family, reason: &str) -> Error {
    Error::ParameterOutOfRange {
        family: format!("{family:?}").to_lowercase(),
        reason: reason.into(),
    }
}

/// Output marginal `(PW)(y) = sum_x P(x) W(y|x)`.
pub fn output_distribution(p: &Pmf, w: &Dmc) -> Result<Pmf> {
    if p.len() != w.num_inputs() {
        return Err(Error::DimensionMismatch(format!(
            "input pmf has {} entries, channel has {} inputs",
            p.len(),
            w.num_inputs()
        )));
    }
    let ny = w.num_outputs();
    let probs: Vec<f64> = (0..ny)
        .map(|y| csum((0..p.len()).map(|x| p.probs[x] * w.prob(x, y))))
        .collect();
    // Mass is preserved exactly up to rounding in the sums.
    Pmf::new_normalized(probs, 1e-13)
}

/// The reverse channel from outputs to inputs under input distribution `p`:
/// `Wrev(x|y) = W(y|x) P(x) / (PW)(y)`, defined on outputs with positive
/// marginal mass. Outputs with zero mass are an error unless `restrict` is
/// set, in which case they are dropped from the reverse channel's domain.
pub fn reverse_channel(p: &Pmf, w: &Dmc, restrict: bool) -> Result<Dmc> {
    let q = output_distribution(p, w)?;
    let keep: Vec<usize> = (0..q.len()).filter(|&y| q.probs[y] > 0.0).collect();
    if keep.len() != q.len() && !restrict {
        return Err(Error::SupportViolation(
            "zero output mass at some y; pass restrict=true to drop it".into(),
        ));
    }
    if keep.len() < 2 {
        return Err(Error::InvalidChannel(
            "reverse channel needs at least 2 reachable outputs".into(),
        ));
    }
    let rows = keep
        .iter()
        .map(|&y| {
            let row: Vec<f64> = (0..p.len())
                .map(|x| w.prob(x, y) * p.probs[x] / q.probs[y])
                .collect();
            Pmf::new_normalized(row, 1e-12).map(|pm| pm.probs)
        })
        .collect::<Result<Vec<_>>>()?;
    Dmc::new(rows)
}

/// Lattice classification of a finite set of log-likelihood-ratio values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatticeStructure {
    /// All achieved values lie on `{offset + k * span, k integer}`; `span`
    /// is maximal. A constant variable is reported as a degenerate lattice
    /// with span 0.
    Lattice { span: f64, offset: f64 },
    Nonlattice,
}

impl LatticeStructure {
    pub fn is_lattice(&self) -> bool {
        matches!(self, LatticeStructure::Lattice { .. })
    }

    pub fn span(&self) -> Option<f64> {
        match self {
            LatticeStructure::Lattice { span, .. } => Some(*span),
            LatticeStructure::Nonlattice => None,
        }
    }
}

/// Classifies a finite value multiset as lattice or nonlattice.
///
/// Commensurability uses a bounded-multiplier Euclidean test: a common span
/// is accepted only if every difference is within `LATTICE_TOL` of an
/// integer multiple below `LATTICE_MAX_MULT`. At double precision a finer
/// claimed span is indistinguishable from an irrational ratio.
pub fn lattice_of_values(values: &[f64]) -> LatticeStructure {
    let mut vals = values.to_vec();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup_by(|a, b| (*a - *b).abs() <= VALUE_MERGE_TOL);
    if vals.len() <= 1 {
        return LatticeStructure::Lattice {
            span: 0.0,
            offset: vals.first().copied().unwrap_or(0.0),
        };
    }
    let base = vals[0];
    let diffs: Vec<f64> = vals[1..].iter().map(|v| v - base).collect();
    match real_gcd(&diffs, LATTICE_TOL, LATTICE_MAX_MULT) {
        Some(span) if span > 0.0 => LatticeStructure::Lattice { span, offset: base },
        Some(_) => LatticeStructure::Lattice {
            span: 0.0,
            offset: base,
        },
        None => LatticeStructure::Nonlattice,
    }
}

/// Achieved values of `log(W(Y|X)/Q(Y))` over pairs with `W(y|x) > 0`,
/// optionally restricted to a subset of inputs.
pub fn llr_values(w: &Dmc, q: &Pmf, inputs: Option<&[usize]>) -> Result<Vec<f64>> {
    if q.len() != w.num_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "q has {} entries, channel has {} outputs",
            q.len(),
            w.num_outputs()
        )));
    }
    let all: Vec<usize>;
    let xs: &[usize] = match inputs {
        Some(s) => s,
        None => {
            all = (0..w.num_inputs()).collect();
            &all
        }
    };
    let mut out = Vec::new();
    for &x in xs {
        for y in 0..w.num_outputs() {
            let wxy = w.prob(x, y);
            if wxy > 0.0 {
                if q.probs[y] <= 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "q(y={y}) = 0 but W(y|x={x}) > 0"
                    )));
                }
                out.push((wxy / q.probs[y]).ln());
            }
        }
    }
    Ok(out)
}

/// Lattice classification of `log(W(Y|X)/Q(Y))` over all inputs.
pub fn detect_lattice(w: &Dmc, q: &Pmf) -> Result<LatticeStructure> {
    Ok(lattice_of_values(&llr_values(w, q, None)?))
}

/// Witness permutations for weak symmetry: for each input `x`, a column
/// permutation carrying row 0 onto row `x`.
#[derive(Debug, Clone, Serialize)]
pub struct SymmetryWitness {
    pub row_permutations: Vec<Vec<usize>>,
}

/// True iff the rows are permutations of each other and all column sums are
/// equal, each to 1e-12. Returns witness permutations when symmetric.
pub fn is_weakly_symmetric(w: &Dmc) -> (bool, Option<SymmetryWitness>) {
    const TOL: f64 = 1e-12;
    let nx = w.num_inputs();
    let ny = w.num_outputs();

    let argsort = |row: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..ny).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        idx
    };
    let base_order = argsort(w.row(0));

    let mut perms = Vec::with_capacity(nx);
    for x in 0..nx {
        let order = argsort(w.row(x));
        for k in 0..ny {
            if (w.prob(x, order[k]) - w.prob(0, base_order[k])).abs() > TOL {
                return (false, None);
            }
        }
        // perm[j] = column of row x matching column base_order^{-1}(j) of row 0.
        let mut perm = vec![0usize; ny];
        for k in 0..ny {
            perm[base_order[k]] = order[k];
        }
        perms.push(perm);
    }

    let colsum0: f64 = csum((0..nx).map(|x| w.prob(x, 0)));
    for y in 1..ny {
        let s = csum((0..nx).map(|x| w.prob(x, y)));
        if (s - colsum0).abs() > TOL {
            return (false, None);
        }
    }
    (
        true,
        Some(SymmetryWitness {
            row_permutations: perms,
        }),
    )
}

/// JSON channel-spec file: either `{"family":"bsc","params":[0.11]}` or
/// `{"family":"custom","W":[[...],[...]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpecFile {
    pub family: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub params: Option<Vec<f64>>,
    #[serde(rename = "W", skip_serializing_if = "Option::is_none", default)]
    pub w: Option<Vec<Vec<f64>>>,
}

/// Parses the JSON channel-spec document described above.
pub fn channel_from_spec_json(text: &str) -> Result<Dmc> {
    let spec: ChannelSpecFile =
        serde_json::from_str(text).map_err(|e| Error::InvalidChannel(format!("bad JSON: {e}")))?;
    let family: Family = spec.family.parse()?;
    match family {
        Family::Custom => {
            let w = spec.w.ok_or_else(|| {
                Error::InvalidChannel("custom channel file must carry a \"W\" matrix".into())
            })?;
            make_custom_channel(w)
        }
        _ => {
            let params = spec.params.ok_or_else(|| {
                Error::InvalidChannel("named family file must carry \"params\"".into())
            })?;
            make_named_channel(family, &params)
        }
    }
}
