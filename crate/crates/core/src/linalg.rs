//! Dense numeric primitives shared by every solver.
//!
//! The design matrix `X` is `n x p` and the outlyingness vector `γ` has one
//! entry per sample, so most routines here work with the implicit augmented
//! design `[X, I]` without ever materializing the identity block.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Hat matrices above this many rows are kept in factored form.
pub const DENSE_HAT_LIMIT: usize = 4096;

/// Default enumeration budget for exhaustive restricted-norm computations.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1_000_000;

/// Response vector plus design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Option<Vec<String>>,
    sample_ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("design matrix must have n >= 1 and p >= 1"));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "response length vs design rows",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        check_finite("design matrix", x.as_slice())?;
        check_finite("response", y.as_slice())?;
        Ok(Self {
            x,
            y,
            feature_names: None,
            sample_ids: None,
        })
    }

    /// Builds a dataset from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::DimensionMismatch {
                what: "row length",
                expected: p,
                found: rows[i].len().min(r.len()),
            });
        }
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Self::new(x, DVector::from_column_slice(y))
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: self.p(),
                found: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn with_sample_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "sample ids",
                expected: self.n(),
                found: ids.len(),
            });
        }
        self.sample_ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn sample_ids(&self) -> Option<&[String]> {
        self.sample_ids.as_deref()
    }

    /// Linear predictor `Xβ + γ` of the augmented design.
    pub fn linear_predictor(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        &self.x * beta + gamma
    }

    /// Column-standardized copy (zero mean, unit sample standard deviation).
    /// Constant columns are centered but left unscaled.
    pub fn standardized(&self) -> (Dataset, Standardization) {
        let n = self.n() as f64;
        let mut x = self.x.clone();
        let mut means = Vec::with_capacity(self.p());
        let mut scales = Vec::with_capacity(self.p());
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            let ss = col.norm_squared();
            let sd = if n > 1.0 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
            let scale = if sd > 0.0 { sd } else { 1.0 };
            col /= scale;
            means.push(mean);
            scales.push(scale);
        }
        let data = Dataset {
            x,
            y: self.y.clone(),
            feature_names: self.feature_names.clone(),
            sample_ids: self.sample_ids.clone(),
        };
        (data, Standardization { means, scales })
    }

    /// Copy with a leading column of ones.
    pub fn with_intercept(&self) -> Dataset {
        let x = self.x.clone().insert_column(0, 1.0);
        let feature_names = self.feature_names.as_ref().map(|names| {
            std::iter::once("(intercept)".to_string())
                .chain(names.iter().cloned())
                .collect()
        });
        Dataset {
            x,
            y: self.y.clone(),
            feature_names,
            sample_ids: self.sample_ids.clone(),
        }
    }
}

/// Column centering and scaling applied by [`Dataset::standardized`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

/// The augmented design `[X/scale, I]`, kept implicit.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedDesign<'a> {
    base: &'a DMatrix<f64>,
    scale: f64,
}

impl<'a> AugmentedDesign<'a> {
    pub fn new(base: &'a DMatrix<f64>) -> Self {
        Self { base, scale: 1.0 }
    }

    /// Uses `[X/scale, I]`.
    pub fn scaled(base: &'a DMatrix<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("augmented design scale must be positive"));
        }
        Ok(Self { base, scale })
    }

    pub fn nrows(&self) -> usize {
        self.base.nrows()
    }

    /// `X̄ β̄ = Xβ/scale + γ`.
    pub fn apply(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        let mut out = self.base * beta;
        if self.scale != 1.0 {
            out /= self.scale;
        }
        out + gamma
    }

    /// `X̄ᵀ r`, split into its `β` and `γ` blocks.
    pub fn apply_transpose(&self, r: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut b = self.base.tr_mul(r);
        if self.scale != 1.0 {
            b /= self.scale;
        }
        (b, r.clone())
    }

    /// `‖X̄‖₂² = ‖X‖₂²/scale² + 1`.
    pub fn spectral_norm_sq(&self) -> f64 {
        spectral_norm_sq(self.base) / (self.scale * self.scale) + 1.0
    }
}

/// Thin SVD of `X` truncated at the numerical rank, used for minimum-norm
/// least squares and column-space projections.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    inv_singular: DVector<f64>,
    rows: usize,
    cols: usize,
}

impl PseudoInverse {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        check_finite("design matrix", x.as_slice())?;
        let (n, p) = x.shape();
        let svd = x.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let cutoff = sigma_max * n.max(p) as f64 * f64::EPSILON;
        let keep: Vec<usize> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > cutoff && **s > 0.0)
            .map(|(i, _)| i)
            .collect();
        let r = keep.len();
        let u_r = DMatrix::from_fn(n, r, |i, k| u[(i, keep[k])]);
        let v_r = DMatrix::from_fn(p, r, |j, k| v_t[(keep[k], j)]);
        let inv = DVector::from_fn(r, |k, _| 1.0 / svd.singular_values[keep[k]]);
        Ok(Self {
            u: u_r,
            v: v_r,
            inv_singular: inv,
            rows: n,
            cols: p,
        })
    }

    pub fn rank(&self) -> usize {
        self.inv_singular.len()
    }

    /// `(XᵀX)⁺Xᵀv`, the minimum-norm least-squares solution.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("pseudo-inverse input", self.rows, v.len())?;
        check_finite("pseudo-inverse input", v.as_slice())?;
        let coef = self.u.tr_mul(v).component_mul(&self.inv_singular);
        Ok(&self.v * coef)
    }

    /// Orthogonal projection `Hv` onto the column space of `X`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.u * self.u.tr_mul(v)
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub(crate) fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }
}

/// Computes `(XᵀX)⁺Xᵀv`.
pub fn pseudo_inverse_apply(x: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("pseudo-inverse input", x.nrows(), v.len())?;
    PseudoInverse::new(x)?.apply(v)
}

/// Projection onto the column space of `X`.
#[derive(Debug, Clone)]
pub struct HatMatrix {
    basis: DMatrix<f64>,
    dense: Option<DMatrix<f64>>,
}

impl HatMatrix {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// The materialized `n x n` matrix, absent above [`DENSE_HAT_LIMIT`].
    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        self.dense.as_ref()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.dense {
            Some(h) => h * v,
            None => &self.basis * self.basis.tr_mul(v),
        }
    }

    /// Dense copy regardless of size; intended for small oracle computations.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.dense {
            Some(h) => h.clone(),
            None => &self.basis * self.basis.transpose(),
        }
    }
}

pub fn hat_matrix(x: &DMatrix<f64>) -> Result<HatMatrix> {
    let pinv = PseudoInverse::new(x)?;
    Ok(hat_from_pinv(&pinv))
}

pub(crate) fn hat_from_pinv(pinv: &PseudoInverse) -> HatMatrix {
    let basis = pinv.basis().clone();
    let dense = (basis.nrows() <= DENSE_HAT_LIMIT).then(|| &basis * basis.transpose());
    HatMatrix { basis, dense }
}

/// Largest squared singular value `‖X‖₂²`.
pub fn spectral_norm_sq(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let s = x.clone().svd(false, false).singular_values;
    let m = s.iter().cloned().fold(0.0, f64::max);
    m * m
}

/// Lower estimate of `max ‖Xv‖²/‖v‖²` over `k`-sparse `v` by truncated power
/// iteration from a few deterministic starts. Never exceeds `‖X‖₂²`.
pub fn sparse_spectral_estimate(x: &DMatrix<f64>, k: usize) -> f64 {
    let p = x.ncols();
    let full = spectral_norm_sq(x);
    if k == 0 || p == 0 {
        return 0.0;
    }
    if k >= p {
        return full;
    }
    let gram_apply = |v: &DVector<f64>| x.tr_mul(&(x * v));
    let col_norms: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
    let mut starts = Vec::new();
    let jmax = (0..p)
        .max_by(|&a, &b| col_norms[a].total_cmp(&col_norms[b]))
        .unwrap_or(0);
    starts.push(DVector::from_fn(p, |j, _| if j == jmax { 1.0 } else { 0.0 }));
    starts.push(truncate_top(&gram_apply(&DVector::from_element(p, 1.0)), k));
    let mut best = col_norms.iter().cloned().fold(0.0, f64::max);
    for start in starts {
        let mut v = start;
        let nv = v.norm();
        if nv == 0.0 {
            continue;
        }
        v /= nv;
        for _ in 0..100 {
            let w = truncate_top(&gram_apply(&v), k);
            let nw = w.norm();
            if nw == 0.0 {
                break;
            }
            let next = w / nw;
            let delta = (&next - &v).norm();
            v = next;
            if delta < 1e-10 {
                break;
            }
        }
        let rq = (x * &v).norm_squared();
        best = best.max(rq);
    }
    best.min(full)
}

fn truncate_top(v: &DVector<f64>, k: usize) -> DVector<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, |&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
        idx.truncate(k);
    }
    let mut out = DVector::zeros(v.len());
    for i in idx {
        out[i] = v[i];
    }
    out
}

/// `C(n, k)` saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// How [`restricted_sup_norm`] computes its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RestrictedNormMode {
    /// Enumerate every support pair, refusing if more than `budget` pairs.
    Exhaustive { budget: u128 },
    /// Return the global bound `‖X̄‖₂²`.
    UpperBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictedNorm {
    pub value: f64,
    /// `true` when `value` is the exact restricted constant.
    pub exact: bool,
}

/// Restricted operator norm `M_X̄(s, o)`: the maximum of `‖X̄β̄‖²/‖β̄‖²` over
/// `β̄` with at most `s` nonzero coefficients and `o` nonzero outlyingness
/// entries.
pub fn restricted_sup_norm(
    x: &DMatrix<f64>,
    s: usize,
    o: usize,
    mode: RestrictedNormMode,
) -> Result<RestrictedNorm> {
    let (n, p) = x.shape();
    if s > p || o > n {
        return Err(Error::invalid(format!(
            "support sizes (s={s}, o={o}) exceed dimensions (p={p}, n={n})"
        )));
    }
    check_finite("design matrix", x.as_slice())?;
    let budget = match mode {
        RestrictedNormMode::UpperBound => {
            return Ok(RestrictedNorm {
                value: AugmentedDesign::new(x).spectral_norm_sq(),
                exact: false,
            })
        }
        RestrictedNormMode::Exhaustive { budget } => budget,
    };
    let required = binomial(p, s).saturating_mul(binomial(n, o));
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    if s == 0 && o == 0 {
        return Ok(RestrictedNorm {
            value: 0.0,
            exact: true,
        });
    }
    let gram = x.tr_mul(x);
    let mut best = 0.0f64;
    let col_sets: Vec<Vec<usize>> = (0..p).combinations(s).collect();
    for rows in (0..n).combinations(o) {
        for cols in &col_sets {
            let m = s + o;
            let g = DMatrix::from_fn(m, m, |a, b| match (a < s, b < s) {
                (true, true) => gram[(cols[a], cols[b])],
                (true, false) => x[(rows[b - s], cols[a])],
                (false, true) => x[(rows[a - s], cols[b])],
                (false, false) => {
                    if a == b {
                        1.0
                    } else {
                        0.0
                    }
                }
            });
            let top = SymmetricEigen::new(g)
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            best = best.max(top);
        }
    }
    Ok(RestrictedNorm {
        value: best,
        exact: true,
    })
}
