//! Brute-force reference solvers for small instances.
//!
//! Every routine here enumerates supports and is only practical for
//! `n ≲ 20`. Results carry the enumeration count and the optimal supports
//! so that a caller can audit the certificate.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{binomial, check_len, hat_matrix, Dataset, PseudoInverse};
use crate::loss::{gamma_univariate_min, sum_loss, LossModel};

/// Cap on the number of combinatorial evaluations an oracle may perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    pub max_enumerations: u128,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_enumerations: 1_000_000,
        }
    }
}

impl OracleBudget {
    pub fn new(max_enumerations: u128) -> Self {
        Self { max_enumerations }
    }

    fn admit(&self, required: u128) -> Result<()> {
        if required > self.max_enumerations {
            return Err(Error::BudgetExceeded {
                required,
                budget: self.max_enumerations,
            });
        }
        Ok(())
    }
}

/// Finite stand-in for `ν = 0` when a per-sample infimum sits at `±∞`.
pub const INFINITE_STAND_IN_NU: f64 = 1e-12;

/// Relative gap under which two enumerated objective values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

const NEWTON_MAX_ITERS: usize = 500;

/// Exhaustive minimizer of `‖s − ξ‖²/2 + ν‖ξ‖²/2` over `‖ξ‖₀ ≤ q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOracle {
    pub xi: DVector<f64>,
    pub objective: f64,
    pub support: Vec<usize>,
    pub enumerated: u128,
}

/// The objective minimized by `Θ#(s; q, ν)`.
pub fn threshold_objective(s: &DVector<f64>, xi: &DVector<f64>, nu: f64) -> f64 {
    0.5 * (s - xi).norm_squared() + 0.5 * nu * xi.norm_squared()
}

pub fn threshold_exhaustive(s: &DVector<f64>, q: usize, nu: f64, budget: OracleBudget) -> Result<ThresholdOracle> {
    let n = s.len();
    if q > n {
        return Err(Error::CardinalityTooLarge { q, len: n });
    }
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("nu must be finite and >= 0, got {nu}")));
    }
    let required: u128 = (0..=q).map(|k| binomial(n, k)).fold(0u128, |a, b| a.saturating_add(b));
    budget.admit(required)?;
    let mut best: Option<ThresholdOracle> = None;
    for k in 0..=q {
        for support in (0..n).combinations(k) {
            let mut xi = DVector::zeros(n);
            for &i in &support {
                xi[i] = s[i] / (1.0 + nu);
            }
            let objective = threshold_objective(s, &xi, nu);
            if best.as_ref().is_none_or(|b| objective < b.objective) {
                best = Some(ThresholdOracle {
                    xi,
                    objective,
                    support,
                    enumerated: required,
                });
            }
        }
    }
    Ok(best.expect("the empty support is always enumerated"))
}

/// Sum of the `n − q` smallest per-sample losses at `β`.
pub fn trimmed_loss_at(data: &Dataset, loss: &LossModel, beta: &DVector<f64>, q: usize) -> Result<f64> {
    check_len("coefficient vector", data.p(), beta.len())?;
    if q > data.n() {
        return Err(Error::CardinalityTooLarge { q, len: data.n() });
    }
    let eta = data.x() * beta;
    let mut losses: Vec<f64> = eta
        .iter()
        .zip(data.y().iter())
        .map(|(&e, &t)| loss.sample_value(e, t))
        .collect();
    losses.sort_by(f64::total_cmp);
    Ok(losses[..data.n() - q].iter().sum())
}

/// Infimum of `l(Xβ + γ)` over `‖γ‖₀ ≤ q` at fixed `β`, by enumerating
/// supports and minimizing each flagged sample separately.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlyingnessInfimum {
    pub value: f64,
    pub gamma: DVector<f64>,
    pub support: Vec<usize>,
    pub enumerated: u128,
}

pub fn outlyingness_infimum_exhaustive(
    data: &Dataset,
    loss: &LossModel,
    beta: &DVector<f64>,
    q: usize,
    budget: OracleBudget,
) -> Result<OutlyingnessInfimum> {
    check_len("coefficient vector", data.p(), beta.len())?;
    let n = data.n();
    if q > n {
        return Err(Error::CardinalityTooLarge { q, len: n });
    }
    let required = binomial(n, q);
    budget.admit(required)?;
    let eta = data.x() * beta;
    let y = data.y();
    let base: Vec<f64> = eta.iter().zip(y.iter()).map(|(&e, &t)| loss.sample_value(e, t)).collect();
    let mut shift = Vec::with_capacity(n);
    for i in 0..n {
        shift.push(flagged_sample(loss, eta[i], y[i])?);
    }
    let mut best: Option<OutlyingnessInfimum> = None;
    for support in (0..n).combinations(q) {
        let mut value: f64 = base.iter().sum();
        for &i in &support {
            value += shift[i].1 - base[i];
        }
        if best.as_ref().is_none_or(|b| value < b.value) {
            let mut gamma = DVector::zeros(n);
            for &i in &support {
                gamma[i] = shift[i].0;
            }
            best = Some(OutlyingnessInfimum {
                value,
                gamma,
                support,
                enumerated: required,
            });
        }
    }
    Ok(best.expect("at least one support of size q exists"))
}

/// Per-sample shift driving `l₀(a + t; y)` to its infimum, using the
/// finite stand-in when the infimum is only approached.
fn flagged_sample(loss: &LossModel, a: f64, y: f64) -> Result<(f64, f64)> {
    let exact = gamma_univariate_min(loss, a, y, 0.0)?;
    if exact.t.is_finite() {
        return Ok((exact.t, loss.sample_value(a + exact.t, y)));
    }
    let approx = gamma_univariate_min(loss, a, y, INFINITE_STAND_IN_NU)?;
    Ok((approx.t, loss.sample_value(a + approx.t, y)))
}

/// Certified global optimum of a combinatorial problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveOptimum {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub value: f64,
    /// Every support whose value ties the minimum within [`TIE_TOLERANCE`],
    /// in lexicographic order.
    pub optimal_supports: Vec<Vec<usize>>,
    /// Supports whose clean subproblem had a rank-deficient design.
    pub rank_deficient: Vec<Vec<usize>>,
    pub enumerated: u128,
    /// Whether on-support outlyingness used the finite stand-in for `±∞`.
    pub finite_stand_in: bool,
}

struct SupportFit {
    support: Vec<usize>,
    beta: DVector<f64>,
    gamma: DVector<f64>,
    value: f64,
    rank_deficient: bool,
}

fn reduce(fits: Vec<SupportFit>, enumerated: u128, finite_stand_in: bool) -> ExhaustiveOptimum {
    let min = fits.iter().map(|f| f.value).fold(f64::INFINITY, f64::min);
    let tol = TIE_TOLERANCE * (1.0 + min.abs());
    let rank_deficient = fits.iter().filter(|f| f.rank_deficient).map(|f| f.support.clone()).collect();
    let optimal_supports: Vec<Vec<usize>> =
        fits.iter().filter(|f| f.value <= min + tol).map(|f| f.support.clone()).collect();
    let winner = fits
        .into_iter()
        .filter(|f| f.value <= min + tol)
        .min_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.support.cmp(&b.support)))
        .expect("at least one support");
    ExhaustiveOptimum {
        beta: winner.beta,
        gamma: winner.gamma,
        value: winner.value,
        optimal_supports,
        rank_deficient,
        enumerated,
        finite_stand_in,
    }
}

fn supports(n: usize, q: usize) -> Vec<Vec<usize>> {
    (0..n).combinations(q).collect()
}

fn check_problem(data: &Dataset, loss: &LossModel, q: usize, budget: &OracleBudget) -> Result<u128> {
    loss.validate_response(data.y())?;
    if q > data.n() {
        return Err(Error::CardinalityTooLarge { q, len: data.n() });
    }
    let required = binomial(data.n(), q);
    budget.admit(required)?;
    Ok(required)
}

/// Global minimizer of `Σᵢ₌₁^{n−q} l₀⁽ⁱ⁾(β)` by enumerating every deletion
/// set of size `q` and fitting the retained samples exactly.
///
/// Least squares uses the pseudo-inverse (minimum-norm solution on
/// rank-deficient subsets); other losses use damped Newton. The returned
/// `gamma` marks the deleted samples with their per-sample infimum shift.
pub fn trimmed_min_exhaustive(data: &Dataset, loss: &LossModel, q: usize, budget: OracleBudget) -> Result<ExhaustiveOptimum> {
    let enumerated = check_problem(data, loss, q, &budget)?;
    let n = data.n();
    let p = data.p();
    let fits = supports(n, q)
        .into_par_iter()
        .map(|deleted| {
            let keep: Vec<usize> = (0..n).filter(|i| !deleted.contains(i)).collect();
            let xs = data.x().select_rows(&keep);
            let ys = DVector::from_iterator(keep.len(), keep.iter().map(|&i| data.y()[i]));
            let (beta, rank_deficient) = match loss {
                LossModel::Quadratic => {
                    let pinv = PseudoInverse::new(&xs)?;
                    (pinv.apply(&ys)?, pinv.rank() < p)
                }
                _ => {
                    let ridge = DVector::zeros(p);
                    let beta = newton_fit(&xs, &ys, loss, &ridge)?;
                    (beta, rank(&xs) < p)
                }
            };
            let value = sum_loss(loss, &(&xs * &beta), &ys);
            let eta = data.x() * &beta;
            let mut gamma = DVector::zeros(n);
            for &i in &deleted {
                gamma[i] = flagged_sample(loss, eta[i], data.y()[i])?.0;
            }
            Ok(SupportFit {
                support: deleted,
                beta,
                gamma,
                value,
                rank_deficient,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(fits, enumerated, !matches!(loss, LossModel::Quadratic)))
}

/// Global minimizer of the joint problem `l(Xβ + γ)` subject to
/// `‖γ‖₀ ≤ q` with `ν = 0`, by enumerating `γ` supports.
///
/// Least squares minimizes jointly over `β` and the on-support entries of
/// `γ` through the augmented design `[X, E_J]`. For other losses each
/// flagged entry is profiled out at its per-sample minimizer, so `β` is fit
/// on the unflagged rows and `γᵢ` is set afterwards. When that minimizer
/// sits at `±∞` the ridge [`INFINITE_STAND_IN_NU`] supplies a finite value.
pub fn joint_min_exhaustive(data: &Dataset, loss: &LossModel, q: usize, budget: OracleBudget) -> Result<ExhaustiveOptimum> {
    let enumerated = check_problem(data, loss, q, &budget)?;
    let n = data.n();
    let p = data.p();
    let stand_in = matches!(loss, LossModel::Logistic);
    let fits = supports(n, q)
        .into_par_iter()
        .map(|support| {
            let (beta, gamma, rank_deficient) = if matches!(loss, LossModel::Quadratic) {
                let mut aug = DMatrix::zeros(n, p + support.len());
                aug.view_mut((0, 0), (n, p)).copy_from(data.x());
                for (k, &i) in support.iter().enumerate() {
                    aug[(i, p + k)] = 1.0;
                }
                let pinv = PseudoInverse::new(&aug)?;
                let z = pinv.apply(data.y())?;
                let mut gamma = DVector::zeros(n);
                for (k, &i) in support.iter().enumerate() {
                    gamma[i] = z[p + k];
                }
                (z.rows(0, p).into_owned(), gamma, pinv.rank() < p + support.len())
            } else {
                let mut mask = DMatrix::zeros(n, n);
                for i in (0..n).filter(|i| !support.contains(i)) {
                    mask[(i, i)] = 1.0;
                }
                let clean = &mask * data.x();
                let beta = newton_fit(&clean, data.y(), loss, &DVector::zeros(p))?;
                let eta = data.x() * &beta;
                let mut gamma = DVector::zeros(n);
                for &i in &support {
                    gamma[i] = flagged_sample(loss, eta[i], data.y()[i])?.0;
                }
                (beta, gamma, rank(&clean) < p)
            };
            let value = sum_loss(loss, &data.linear_predictor(&beta, &gamma), data.y());
            Ok(SupportFit {
                support,
                beta,
                gamma,
                value,
                rank_deficient,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(fits, enumerated, stand_in))
}

fn rank(a: &DMatrix<f64>) -> usize {
    if a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let cutoff = max * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    sv.iter().filter(|&&s| s > cutoff && s > 0.0).count()
}

/// Damped Newton for `Σ l₀(aᵢᵀz; yᵢ) + Σ rⱼzⱼ²/2`, run until the objective
/// stops decreasing.
fn newton_fit(a: &DMatrix<f64>, y: &DVector<f64>, loss: &LossModel, ridge: &DVector<f64>) -> Result<DVector<f64>> {
    let m = a.ncols();
    let objective = |z: &DVector<f64>| sum_loss(loss, &(a * z), y) + 0.5 * z.component_mul(ridge).dot(z);
    let mut z = DVector::zeros(m);
    let mut value = objective(&z);
    for _ in 0..NEWTON_MAX_ITERS {
        let eta = a * &z;
        let d = DVector::from_iterator(y.len(), eta.iter().zip(y.iter()).map(|(&e, &t)| loss.sample_derivative(e, t)));
        let grad = a.tr_mul(&d) + z.component_mul(ridge);
        if grad.amax() <= 1e-15 {
            break;
        }
        let mut weighted = a.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= loss.sample_curvature(eta[i], y[i]);
        }
        let mut hess = a.tr_mul(&weighted);
        for j in 0..m {
            hess[(j, j)] += ridge[j];
        }
        let mut mu = 0.0;
        let scale = (hess.trace() / m.max(1) as f64).abs().max(1e-300);
        let mut improved = false;
        for _ in 0..40 {
            let mut h = hess.clone();
            for j in 0..m {
                h[(j, j)] += mu;
            }
            if let Some(chol) = h.cholesky() {
                let dir = -chol.solve(&grad);
                let mut t = 1.0;
                for _ in 0..60 {
                    let cand = &z + &dir * t;
                    let v = objective(&cand);
                    if v < value {
                        z = cand;
                        value = v;
                        improved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if improved {
                    break;
                }
            }
            mu = if mu == 0.0 { 1e-12 * scale } else { mu * 10.0 };
        }
        if !improved {
            break;
        }
    }
    if !value.is_finite() {
        return Err(Error::NonConvergence {
            what: "oracle Newton subproblem",
            iterations: NEWTON_MAX_ITERS,
        });
    }
    Ok(z)
}

/// Grid over `β` for [`winsorized_min_exhaustive`]: `points` values per
/// coordinate spread evenly over `center ± radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct WinsorGrid {
    pub center: DVector<f64>,
    pub radius: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinsorizedOptimum {
    pub beta: DVector<f64>,
    pub value: f64,
    /// `|{i : l₀(xᵢᵀβ̂; yᵢ) > τ}|`, the matching trimming budget.
    pub capped: usize,
    /// `τ = 0` makes every `β` optimal.
    pub degenerate: bool,
    pub enumerated: u128,
}

/// `Σᵢ min(τ, l₀(xᵢᵀβ; yᵢ))`.
pub fn winsorized_loss(data: &Dataset, loss: &LossModel, beta: &DVector<f64>, tau: f64) -> f64 {
    let eta = data.x() * beta;
    eta.iter()
        .zip(data.y().iter())
        .map(|(&e, &t)| loss.sample_value(e, t).min(tau))
        .sum()
}

/// Grid-certified minimizer of the winsorized loss for `p ≤ 2`, polished
/// by a shrinking compass search from the best grid point.
pub fn winsorized_min_exhaustive(
    data: &Dataset,
    loss: &LossModel,
    tau: f64,
    grid: &WinsorGrid,
    budget: OracleBudget,
) -> Result<WinsorizedOptimum> {
    let p = data.p();
    if p > 2 {
        return Err(Error::Unsupported(format!("winsorized oracle needs p <= 2, got p = {p}")));
    }
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
    }
    check_len("grid center", p, grid.center.len())?;
    if grid.points < 2 || !(grid.radius > 0.0 && grid.radius.is_finite()) {
        return Err(Error::invalid("grid needs at least two points and a positive radius"));
    }
    let required = (grid.points as u128).pow(p as u32);
    budget.admit(required)?;
    let step = 2.0 * grid.radius / (grid.points - 1) as f64;
    let coord = |j: usize, k: usize| grid.center[j] - grid.radius + step * k as f64;
    let mut best = grid.center.clone();
    let mut value = winsorized_loss(data, loss, &best, tau);
    let cells: Vec<Vec<usize>> = (0..p).map(|_| 0..grid.points).multi_cartesian_product().collect();
    for cell in cells {
        let beta = DVector::from_iterator(p, cell.iter().enumerate().map(|(j, &k)| coord(j, k)));
        let v = winsorized_loss(data, loss, &beta, tau);
        if v < value {
            value = v;
            best = beta;
        }
    }
    let mut h = step;
    while h > 1e-12 * (1.0 + best.amax()) {
        let mut moved = false;
        for j in 0..p {
            for sign in [1.0, -1.0] {
                let mut cand = best.clone();
                cand[j] += sign * h;
                let v = winsorized_loss(data, loss, &cand, tau);
                if v < value {
                    value = v;
                    best = cand;
                    moved = true;
                }
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    let eta = data.x() * &best;
    let capped = eta
        .iter()
        .zip(data.y().iter())
        .filter(|(&e, &t)| loss.sample_value(e, t) > tau)
        .count();
    Ok(WinsorizedOptimum {
        beta: best,
        value,
        capped,
        degenerate: tau == 0.0,
        enumerated: required,
    })
}

/// Restricted isometry margin of `I − H` over sparse directions.
#[derive(Debug, Clone, PartialEq)]
pub struct RipReport {
    /// `1 − max_{‖Δ‖₀ ≤ s} ‖HΔ‖²/‖Δ‖²`.
    pub epsilon: f64,
    /// `(ε − 1/√ϑ + (1 − 1/√ϑ)ν)/(1 − ε)`; infinite when `ε = 1`.
    pub kappa: f64,
    pub support_size: usize,
    /// `ε + (1 − 1/√ϑ)ν > 1/√ϑ`.
    pub satisfied: bool,
    pub enumerated: u128,
}

/// Exact RIP margin `ε` at the given support size.
///
/// Since `‖HΔ‖² = Δᵀ H Δ` on a projector, the maximum over a support `J` is
/// the top eigenvalue of `H_JJ`; by interlacing the maximum over
/// `|J| ≤ s` is attained at `|J| = min(s, n)`.
pub fn rip_margin(x: &DMatrix<f64>, support_size: usize, budget: OracleBudget) -> Result<f64> {
    let n = x.nrows();
    let s = support_size.min(n);
    if s == 0 {
        return Ok(1.0);
    }
    budget.admit(binomial(n, s))?;
    let h = hat_matrix(x)?.to_dense();
    let worst = (0..n)
        .combinations(s)
        .par_bridge()
        .map(|support| {
            let sub = DMatrix::from_fn(s, s, |a, b| h[(support[a], support[b])]);
            sub.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok((1.0 - worst).clamp(0.0, 1.0))
}

/// RIP report at support size `⌈(1 + ϑ)o*⌉` with budget multiplier `ϑ`.
pub fn rip_report(x: &DMatrix<f64>, theta: f64, o_star: usize, nu: f64, budget: OracleBudget) -> Result<RipReport> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::invalid(format!("budget multiplier must be positive, got {theta}")));
    }
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("nu must be finite and >= 0, got {nu}")));
    }
    let support_size = ((1.0 + theta) * o_star as f64).ceil() as usize;
    let epsilon = rip_margin(x, support_size, budget)?;
    let inv = 1.0 / theta.sqrt();
    let margin = epsilon - inv + (1.0 - inv) * nu;
    let kappa = if epsilon < 1.0 { margin / (1.0 - epsilon) } else { f64::INFINITY };
    Ok(RipReport {
        epsilon,
        kappa,
        support_size,
        satisfied: margin > 0.0,
        enumerated: binomial(x.nrows(), support_size.min(x.nrows())),
    })
}
