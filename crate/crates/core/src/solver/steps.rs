//! Single iterations of the four solver families.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_len, Dataset, HatMatrix, PseudoInverse};
use crate::loss::{gamma_univariate_min, gradient, sum_loss, LossModel};
use crate::threshold::{quantile_threshold, top_q_indices, ThresholdRule, Thresholded, TieReport};

/// Iterate produced by one solver step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub tie: TieReport,
}

fn check_state(data: &Dataset, beta: &DVector<f64>, gamma: Option<&DVector<f64>>) -> Result<()> {
    check_len("coefficient vector", data.p(), beta.len())?;
    if let Some(g) = gamma {
        check_len("outlyingness vector", data.n(), g.len())?;
    }
    Ok(())
}

/// Regression IQ iteration with a cached factorization of `X`.
#[derive(Debug, Clone)]
pub struct IqRegression {
    pinv: PseudoInverse,
}

impl IqRegression {
    pub fn new(data: &Dataset) -> Result<Self> {
        Ok(Self {
            pinv: PseudoInverse::new(data.x())?,
        })
    }

    pub fn pseudo_inverse(&self) -> &PseudoInverse {
        &self.pinv
    }

    /// `γ⁺ = Θ#(y − Xβ; q, ν)`, then `β⁺ = (XᵀX)⁺Xᵀ(y − γ⁺)`.
    pub fn step(&self, data: &Dataset, beta: &DVector<f64>, q: usize, nu: f64) -> Result<Step> {
        check_state(data, beta, None)?;
        let residual = data.y() - data.x() * beta;
        let Thresholded { values: gamma, tie } = quantile_threshold(&residual, q, nu)?;
        let beta = self.pinv.apply(&(data.y() - &gamma))?;
        Ok(Step { beta, gamma, tie })
    }
}

/// One IQ step for quadratic-loss regression (factorizes `X` on every call;
/// use [`IqRegression`] inside loops).
pub fn iq_bcd_regression_step(data: &Dataset, beta: &DVector<f64>, q: usize, nu: f64) -> Result<Step> {
    IqRegression::new(data)?.step(data, beta, q, nu)
}

/// The same iteration written on `γ` alone:
/// `γ⁺ = Θ#(Hγ + (I − H)y; q, ν)`.
pub fn iq_line_step(hat: &HatMatrix, y: &DVector<f64>, gamma: &DVector<f64>, q: usize, nu: f64) -> Result<Thresholded> {
    check_len("response vs hat matrix", hat.n(), y.len())?;
    check_len("outlyingness vector", hat.n(), gamma.len())?;
    let s = hat.apply(gamma) + (y - hat.apply(y));
    quantile_threshold(&s, q, nu)
}

/// Joint MM step for quadratic-loss regression with inverse stepsize `rho`.
pub fn mm_joint_regression_step(
    data: &Dataset,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: f64,
    q: usize,
    nu: f64,
) -> Result<Step> {
    mm_update(data, &LossModel::Quadratic, beta, gamma, rho, &ThresholdRule::identity(), q, nu)
}

/// General MM step:
/// `β⁺ = Θ(ϱβ − Xᵀ∇l/ϱ; λ)/ϱ`, `γ⁺ = Θ#(γ − ∇l/ϱ²; q, ν/ϱ²)`.
///
/// A quantile rule for `β` is interpreted as the ℓ0-constrained ridge block
/// `ν_β‖β‖²/2, ‖β‖₀ ≤ q_β`, so its shrinkage is applied as `ν_β/ϱ²`.
#[allow(clippy::too_many_arguments)]
pub fn mm_general_step(
    data: &Dataset,
    loss: &LossModel,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    varrho: f64,
    rule: &ThresholdRule,
    q: usize,
    nu: f64,
) -> Result<Step> {
    if !(varrho > 0.0 && varrho.is_finite()) {
        return Err(Error::invalid(format!("varrho must be positive, got {varrho}")));
    }
    mm_update(data, loss, beta, gamma, varrho * varrho, rule, q, nu)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn mm_update(
    data: &Dataset,
    loss: &LossModel,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho_sq: f64,
    rule: &ThresholdRule,
    q: usize,
    nu: f64,
) -> Result<Step> {
    if !(rho_sq > 0.0 && rho_sq.is_finite()) {
        return Err(Error::invalid(format!("inverse stepsize must be positive, got {rho_sq}")));
    }
    check_state(data, beta, Some(gamma))?;
    rule.validate()?;
    let eta = data.linear_predictor(beta, gamma);
    let grad = gradient(loss, &eta, data.y());
    let beta_next = mm_beta_map(data.x(), beta, &grad, rho_sq, rule)?;
    let Thresholded { values, tie } = quantile_threshold(&(gamma - &grad / rho_sq), q, nu / rho_sq)?;
    Ok(Step {
        beta: beta_next,
        gamma: values,
        tie,
    })
}

/// `Θ(ϱβ − Xᵀg/ϱ)/ϱ` for a componentwise rule, or the ℓ0-ridge quantile map.
pub(crate) fn mm_beta_map(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    grad: &DVector<f64>,
    rho_sq: f64,
    rule: &ThresholdRule,
) -> Result<DVector<f64>> {
    let varrho = rho_sq.sqrt();
    let z = beta * varrho - x.tr_mul(grad) / varrho;
    match *rule {
        ThresholdRule::Quantile { q, nu } => Ok(quantile_threshold(&z, q, nu / rho_sq)?.values / varrho),
        _ => Ok(z.map(|t| rule.scalar(t).expect("componentwise rule") / varrho)),
    }
}

/// How the general BCD step refreshes `β` once `γ` is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaUpdate {
    /// One quantile-thresholding step
    /// `Θ#(β − Xᵀ∇l/ρ; q_β, ν_β/ρ)`; `rho` is doubled until the step
    /// majorizes the loss.
    Quantile { q_beta: usize, nu_beta: f64, rho: f64 },
    /// One scaled thresholding step `Θ(ϱβ − Xᵀ∇l/ϱ; λ)/ϱ`.
    Rule { rule: ThresholdRule, varrho: f64 },
    /// Full minimization of `l(Xβ + γ) + ν_β‖β‖²/2` by damped Newton.
    Minimize { nu_beta: f64 },
}

/// Result of [`bcd_general_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct BcdStep {
    pub step: Step,
    /// Inverse stepsize actually used by a quantile `β`-update.
    pub rho_used: Option<f64>,
}

const MAX_STEP_DOUBLINGS: usize = 60;

/// Exact `γ`-block minimization for a sample-additive loss: picks the `q`
/// samples whose loss drops the most when given a free shift.
pub fn gamma_block_update(
    loss: &LossModel,
    fitted: &DVector<f64>,
    y: &DVector<f64>,
    q: usize,
    nu: f64,
) -> Result<(DVector<f64>, TieReport)> {
    let n = y.len();
    check_len("fitted values", n, fitted.len())?;
    if loss == &LossModel::Quadratic {
        // δᵢ is monotone in |yᵢ − aᵢ|, so the selection is Θ# on the residual
        let t = quantile_threshold(&(y - fitted), q, nu)?;
        return Ok((t.values, t.tie));
    }
    let mut shifts = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    for i in 0..n {
        let base = loss.sample_value(fitted[i], y[i]);
        let mut m = gamma_univariate_min(loss, fitted[i], y[i], nu)?;
        if !m.t.is_finite() {
            // unattained infimum: use a lightly regularized finite stand-in
            m = gamma_univariate_min(loss, fitted[i], y[i], 1e-12)?;
        }
        shifts.push(m.t);
        gains.push((base - m.value).max(0.0));
    }
    let (keep, tie) = top_q_indices(&gains, q)?;
    let mut gamma = DVector::zeros(n);
    for i in keep {
        gamma[i] = shifts[i];
    }
    Ok((gamma, tie))
}

/// General BCD step: exact `γ`-update, then one `β`-update.
pub fn bcd_general_step(
    data: &Dataset,
    loss: &LossModel,
    beta: &DVector<f64>,
    q: usize,
    nu: f64,
    beta_update: &BetaUpdate,
) -> Result<BcdStep> {
    check_state(data, beta, None)?;
    let fitted = data.x() * beta;
    let (gamma, tie) = gamma_block_update(loss, &fitted, data.y(), q, nu)?;
    let (beta_next, rho_used) = beta_block_update(data, loss, beta, &gamma, beta_update)?;
    Ok(BcdStep {
        step: Step {
            beta: beta_next,
            gamma,
            tie,
        },
        rho_used,
    })
}

pub(crate) fn beta_block_update(
    data: &Dataset,
    loss: &LossModel,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    update: &BetaUpdate,
) -> Result<(DVector<f64>, Option<f64>)> {
    let x = data.x();
    let y = data.y();
    match *update {
        BetaUpdate::Quantile { q_beta, nu_beta, rho } => {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::invalid(format!("inverse stepsize must be positive, got {rho}")));
            }
            let eta = x * beta + gamma;
            let base = sum_loss(loss, &eta, y);
            let grad_beta = x.tr_mul(&gradient(loss, &eta, y));
            let mut rho = rho;
            for _ in 0..MAX_STEP_DOUBLINGS {
                let cand = quantile_threshold(&(beta - &grad_beta / rho), q_beta, nu_beta / rho)?.values;
                let delta = &cand - beta;
                let bound = base + grad_beta.dot(&delta) + 0.5 * rho * delta.norm_squared();
                let value = sum_loss(loss, &(x * &cand + gamma), y);
                if value <= bound + 1e-12 * (1.0 + base.abs()) {
                    return Ok((cand, Some(rho)));
                }
                rho *= 2.0;
            }
            Err(Error::NonConvergence {
                what: "coefficient stepsize search",
                iterations: MAX_STEP_DOUBLINGS,
            })
        }
        BetaUpdate::Rule { rule, varrho } => {
            if !(varrho > 0.0 && varrho.is_finite()) {
                return Err(Error::invalid(format!("varrho must be positive, got {varrho}")));
            }
            let eta = x * beta + gamma;
            let grad = gradient(loss, &eta, y);
            Ok((mm_beta_map(x, beta, &grad, varrho * varrho, &rule)?, None))
        }
        BetaUpdate::Minimize { nu_beta } => Ok((minimize_beta(data, loss, beta, gamma, nu_beta)?, None)),
    }
}

const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;

/// Damped Newton for `min_β l(Xβ + γ) + ν_β‖β‖²/2`, warm-started at `beta`.
pub(crate) fn minimize_beta(
    data: &Dataset,
    loss: &LossModel,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    nu_beta: f64,
) -> Result<DVector<f64>> {
    let x = data.x();
    let y = data.y();
    let p = data.p();
    let objective = |b: &DVector<f64>| sum_loss(loss, &(x * b + gamma), y) + 0.5 * nu_beta * b.norm_squared();
    let mut beta = beta.clone();
    let mut value = objective(&beta);
    for _ in 0..NEWTON_MAX_ITERS {
        let eta = x * &beta + gamma;
        let grad = x.tr_mul(&gradient(loss, &eta, y)) + &beta * nu_beta;
        if grad.amax() <= NEWTON_GRAD_TOL {
            break;
        }
        let weights = DVector::from_iterator(
            eta.len(),
            eta.iter().zip(y.iter()).map(|(&e, &t)| loss.sample_curvature(e, t)),
        );
        let mut weighted = x.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(weights.iter()) {
            row *= *w;
        }
        let mut hess = x.tr_mul(&weighted);
        for j in 0..p {
            hess[(j, j)] += nu_beta;
        }
        let direction = newton_direction(hess, &grad);
        let slope = grad.dot(&direction);
        if slope >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &beta + &direction * t;
            let v = objective(&cand);
            if v <= value + 1e-4 * t * slope {
                beta = cand;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(beta)
}

fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let p = hess.nrows();
    let scale = (hess.trace() / p.max(1) as f64).abs().max(1e-12);
    let mut mu = 0.0;
    for _ in 0..30 {
        let mut h = hess.clone();
        for j in 0..p {
            h[(j, j)] += mu;
        }
        if let Some(chol) = h.cholesky() {
            return -chol.solve(grad);
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
    }
    -grad.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hat_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn iq_identity_design_without_outliers() {
        let data = Dataset::new(DMatrix::identity(2, 2), v(&[1.0, 2.0])).unwrap();
        let s = iq_bcd_regression_step(&data, &DVector::zeros(2), 0, 0.0).unwrap();
        assert_eq!(s.gamma, DVector::zeros(2));
        assert!((s.beta - v(&[1.0, 2.0])).amax() < 1e-14);
    }

    #[test]
    fn iq_single_gross_outlier() {
        let data = Dataset::new(DMatrix::from_element(6, 1, 1.0), v(&[0.0, 0.0, 0.0, 0.0, 0.0, 10.0])).unwrap();
        let s = iq_bcd_regression_step(&data, &DVector::zeros(1), 1, 0.0).unwrap();
        assert_eq!(s.gamma, v(&[0.0, 0.0, 0.0, 0.0, 0.0, 10.0]));
        assert!(s.beta[0].abs() < 1e-14);
        // and it is a fixed point
        let again = iq_bcd_regression_step(&data, &s.beta, 1, 0.0).unwrap();
        assert_eq!(again.gamma, s.gamma);
    }

    #[test]
    fn iq_line_form_agrees_with_block_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(12, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
        y[0] += 8.0;
        y[5] -= 6.0;
        let data = Dataset::new(x, y).unwrap();
        let iq = IqRegression::new(&data).unwrap();
        let hat = hat_matrix(data.x()).unwrap();
        let mut beta = DVector::zeros(3);
        let mut gamma = quantile_threshold(data.y(), 3, 0.1).unwrap().values;
        for _ in 0..10 {
            let s = iq.step(&data, &beta, 3, 0.1).unwrap();
            assert!((&s.gamma - &gamma).amax() < 1e-10);
            beta = s.beta;
            gamma = iq_line_step(&hat, data.y(), &gamma, 3, 0.1).unwrap().values;
        }
    }

    #[test]
    fn mm_joint_one_step_from_zero_matches_hand_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = DMatrix::from_fn(10, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let rho = 40.0;
        let nu = 0.5;
        let s = mm_joint_regression_step(&data, &DVector::zeros(3), &DVector::zeros(10), rho, 4, nu).unwrap();
        // β⁺ = Xᵀy/ρ, γ⁺ keeps the 4 largest |yᵢ|/ρ scaled by 1/(1 + ν/ρ)
        let mut want_beta = DVector::zeros(3);
        for j in 0..3 {
            let mut acc = 0.0;
            for i in 0..10 {
                acc += x[(i, j)] * y[i];
            }
            want_beta[j] = acc / rho;
        }
        assert!((&s.beta - &want_beta).amax() < 1e-14);
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| y[b].abs().partial_cmp(&y[a].abs()).unwrap());
        for (rank, &i) in order.iter().enumerate() {
            let want = if rank < 4 { (y[i] / rho) / (1.0 + nu / rho) } else { 0.0 };
            assert!((s.gamma[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn mm_general_reduces_to_gradient_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let beta = v(&[0.3, -0.2]);
        let gamma = v(&[0.0, 1.0, 0.0, 0.0, -0.5, 0.0]);
        let varrho = 3.0;
        let s = mm_general_step(&data, &LossModel::Quadratic, &beta, &gamma, varrho, &ThresholdRule::identity(), 6, 0.0)
            .unwrap();
        let resid = &x * &beta + &gamma - &y;
        let want_beta = &beta - x.tr_mul(&resid) / 9.0;
        let want_gamma = &gamma - &resid / 9.0;
        assert!((s.beta - want_beta).amax() < 1e-14);
        assert!((s.gamma - want_gamma).amax() < 1e-14);
        assert!(mm_general_step(&data, &LossModel::Quadratic, &beta, &gamma, 0.0, &ThresholdRule::identity(), 6, 0.0).is_err());
    }

    #[test]
    fn bcd_quadratic_selects_largest_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(15, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(15, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let beta = v(&[0.5, -1.0]);
        let out = bcd_general_step(&data, &LossModel::Quadratic, &beta, 4, 0.0, &BetaUpdate::Minimize { nu_beta: 0.0 })
            .unwrap();
        let r = &y - &x * &beta;
        let mut order: Vec<usize> = (0..15).collect();
        order.sort_by(|&a, &b| r[b].abs().partial_cmp(&r[a].abs()).unwrap());
        let mut want: Vec<usize> = order[..4].to_vec();
        want.sort();
        let got: Vec<usize> = (0..15).filter(|&i| out.step.gamma[i] != 0.0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn bcd_huber_selection_matches_exhaustive_gamma_problem() {
        // oracle: minimize Σ_{i∉S} l₀ᵢ + Σ_{i∈S} min_t l̃ᵢ(t) over every |S| = 2
        let loss = LossModel::huber(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = DMatrix::from_fn(7, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = DVector::from_fn(7, |_, _| rng.sample::<f64, _>(StandardNormal));
        y[2] += 6.0;
        y[6] -= 4.0;
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let beta = v(&[0.2]);
        let nu = 0.3;
        let out = bcd_general_step(&data, &loss, &beta, 2, nu, &BetaUpdate::Minimize { nu_beta: 0.0 }).unwrap();
        let fitted = &x * &beta;
        let joint = |g: &DVector<f64>| {
            (0..7).map(|i| loss.sample_value(fitted[i] + g[i], y[i])).sum::<f64>() + 0.5 * nu * g.norm_squared()
        };
        let mut best = f64::INFINITY;
        for a in 0..7 {
            for b in a + 1..7 {
                let mut g = DVector::zeros(7);
                for i in [a, b] {
                    g[i] = gamma_univariate_min(&loss, fitted[i], y[i], nu).unwrap().t;
                }
                best = best.min(joint(&g));
            }
        }
        assert!((joint(&out.step.gamma) - best).abs() < 1e-10);
    }

    #[test]
    fn bcd_logistic_without_outlier_budget_is_plain_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(40, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(40, |i, _| if x[(i, 0)] + 0.8 * rng.sample::<f64, _>(StandardNormal) > 0.0 { 1.0 } else { 0.0 });
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let out = bcd_general_step(&data, &LossModel::Logistic, &DVector::zeros(2), 0, 1e-4, &BetaUpdate::Minimize { nu_beta: 0.0 })
            .unwrap();
        assert_eq!(out.step.gamma, DVector::zeros(40));
        let grad = x.tr_mul(&gradient(&LossModel::Logistic, &(&x * &out.step.beta), &y));
        assert!(grad.amax() < 1e-8);
    }

    #[test]
    fn quantile_beta_update_majorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(20, 30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y).unwrap();
        let beta = DVector::zeros(30);
        let gamma = DVector::zeros(20);
        let (next, rho) = beta_block_update(
            &data,
            &LossModel::Quadratic,
            &beta,
            &gamma,
            &BetaUpdate::Quantile { q_beta: 3, nu_beta: 0.0, rho: 1.0 },
        )
        .unwrap();
        assert!(rho.unwrap() > 1.0);
        assert!(next.iter().filter(|b| **b != 0.0).count() <= 3);
        let before = sum_loss(&LossModel::Quadratic, &gamma, data.y());
        let after = sum_loss(&LossModel::Quadratic, &(data.x() * &next), data.y());
        assert!(after <= before);
    }
}
