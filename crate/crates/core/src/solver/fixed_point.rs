use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{check_len, Dataset};
use crate::loss::{gradient, LossModel};
use crate::threshold::quantile_threshold;

use super::Estimate;

/// `‖γ − Θ#(γ − g/scale; q, ν/scale)‖∞`.
pub(crate) fn gamma_equation_residual(gamma: &DVector<f64>, grad: &DVector<f64>, q: usize, nu: f64, scale: f64) -> Result<f64> {
    let target = quantile_threshold(&(gamma - grad / scale), q, nu / scale)?.values;
    Ok((gamma - target).amax())
}

/// `‖β − Θ#(β − Xᵀg/ρ; q_β, ν_β/ρ)‖∞`.
pub(crate) fn beta_equation_residual(
    data: &Dataset,
    beta: &DVector<f64>,
    grad: &DVector<f64>,
    q_beta: usize,
    nu_beta: f64,
    rho: f64,
) -> Result<f64> {
    let target = quantile_threshold(&(beta - data.x().tr_mul(grad) / rho), q_beta, nu_beta / rho)?.values;
    Ok((beta - target).amax())
}

/// Residual of the pair of quantile-thresholding equations characterizing
/// an alternating minimum:
/// `‖β̂ − Θ#(β̂ − Xᵀ∇l/ρ; q_β, ν_β/ρ)‖∞ + ‖γ̂ − Θ#(γ̂ − ∇l; q_γ, ν)‖∞`
/// with `∇l` evaluated at `Xβ̂ + γ̂`. Without a coefficient budget `q_β = p`.
pub fn verify_fixed_point(data: &Dataset, loss: &LossModel, estimate: &Estimate, rho: f64) -> Result<f64> {
    check_len("coefficient vector", data.p(), estimate.beta.len())?;
    check_len("outlyingness vector", data.n(), estimate.gamma.len())?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    let eta = data.linear_predictor(&estimate.beta, &estimate.gamma);
    let grad = gradient(loss, &eta, data.y());
    let q_beta = estimate.q_beta.unwrap_or(data.p());
    let b = beta_equation_residual(data, &estimate.beta, &grad, q_beta, estimate.nu_beta, rho)?;
    let g = gamma_equation_residual(&estimate.gamma, &grad, estimate.q_gamma, estimate.nu, 1.0)?;
    Ok(b + g)
}
