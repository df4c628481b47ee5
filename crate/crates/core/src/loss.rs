//! Sample-additive smooth losses `l(η; y) = Σᵢ l₀(ηᵢ; yᵢ)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{check_finite, check_len};

/// A smooth, convex, sample-additive loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossModel {
    /// `(y − η)²/2`.
    Quadratic,
    /// Logistic deviance `−yη + log(1 + e^η)` with `y ∈ {0, 1}`.
    Logistic,
    /// Huber's loss on the residual `y − η`.
    Huber { delta: f64 },
    /// Smoothed hinge on the margin `(2y − 1)η` with `y ∈ {0, 1}`.
    HuberizedHinge { delta: f64 },
}

impl LossModel {
    pub fn huber(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(LossModel::Huber { delta })
    }

    pub fn huberized_hinge(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(LossModel::HuberizedHinge { delta })
    }

    /// Lipschitz constant of `∂l₀/∂η`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            LossModel::Quadratic | LossModel::Huber { .. } => 1.0,
            LossModel::Logistic => 0.25,
            LossModel::HuberizedHinge { delta } => 1.0 / delta,
        }
    }

    /// Classification losses take 0/1 responses.
    pub fn is_classification(&self) -> bool {
        matches!(self, LossModel::Logistic | LossModel::HuberizedHinge { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossModel::Quadratic => "quadratic",
            LossModel::Logistic => "logistic",
            LossModel::Huber { .. } => "huber",
            LossModel::HuberizedHinge { .. } => "hhinge",
        }
    }

    /// Per-sample loss `l₀(η; y)`.
    pub fn sample_value(&self, eta: f64, y: f64) -> f64 {
        match *self {
            LossModel::Quadratic => 0.5 * (y - eta) * (y - eta),
            LossModel::Logistic => softplus(eta) - y * eta,
            LossModel::Huber { delta } => {
                let r = (y - eta).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * r - 0.5 * delta * delta
                }
            }
            LossModel::HuberizedHinge { delta } => {
                let m = (2.0 * y - 1.0) * eta;
                if m >= 1.0 {
                    0.0
                } else if m > 1.0 - delta {
                    (1.0 - m) * (1.0 - m) / (2.0 * delta)
                } else {
                    1.0 - m - 0.5 * delta
                }
            }
        }
    }

    /// `∂l₀/∂η`.
    pub fn sample_derivative(&self, eta: f64, y: f64) -> f64 {
        match *self {
            LossModel::Quadratic => eta - y,
            LossModel::Logistic => sigmoid(eta) - y,
            LossModel::Huber { delta } => (eta - y).clamp(-delta, delta),
            LossModel::HuberizedHinge { delta } => {
                let s = 2.0 * y - 1.0;
                let m = s * eta;
                let dm = if m >= 1.0 {
                    0.0
                } else if m > 1.0 - delta {
                    -(1.0 - m) / delta
                } else {
                    -1.0
                };
                s * dm
            }
        }
    }

    /// `∂²l₀/∂η²` (a generalized second derivative at the kinks).
    pub fn sample_curvature(&self, eta: f64, y: f64) -> f64 {
        match *self {
            LossModel::Quadratic => 1.0,
            LossModel::Logistic => {
                let s = sigmoid(eta);
                s * (1.0 - s)
            }
            LossModel::Huber { delta } => {
                if (eta - y).abs() <= delta {
                    1.0
                } else {
                    0.0
                }
            }
            LossModel::HuberizedHinge { delta } => {
                let m = (2.0 * y - 1.0) * eta;
                if m < 1.0 && m > 1.0 - delta {
                    1.0 / delta
                } else {
                    0.0
                }
            }
        }
    }

    /// Rejects responses the loss cannot take.
    pub fn validate_response(&self, y: &DVector<f64>) -> Result<()> {
        check_finite("response", y.as_slice())?;
        if self.is_classification() {
            if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
                return Err(Error::InvalidLabel { index, value });
            }
        }
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("loss delta must be positive, got {delta}")))
    }
}

impl fmt::Display for LossModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossModel::Quadratic => write!(f, "quadratic"),
            LossModel::Logistic => write!(f, "logistic"),
            LossModel::Huber { delta } => write!(f, "huber:{delta}"),
            LossModel::HuberizedHinge { delta } => write!(f, "hhinge:{delta}"),
        }
    }
}

impl FromStr for LossModel {
    type Err = Error;

    /// Parses `quadratic`, `logistic`, `huber[:delta]` or `hhinge[:delta]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let delta = match arg {
            Some(a) => a
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad loss parameter '{a}'")))?,
            None => 1.0,
        };
        match name {
            "quadratic" | "ls" if arg.is_none() => Ok(LossModel::Quadratic),
            "logistic" if arg.is_none() => Ok(LossModel::Logistic),
            "huber" => LossModel::huber(delta),
            "hhinge" => LossModel::huberized_hinge(delta),
            _ => Err(Error::invalid(format!(
                "unknown loss '{s}' (expected quadratic|logistic|huber:<delta>|hhinge:<delta>)"
            ))),
        }
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1/(1 + e^{−x})` without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_pair(model: &LossModel, eta: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    check_len("linear predictor vs response", y.len(), eta.len())?;
    check_finite("linear predictor", eta.as_slice())?;
    model.validate_response(y)
}

/// `l(η; y)`.
pub fn loss_value(model: &LossModel, eta: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_pair(model, eta, y)?;
    Ok(sum_loss(model, eta, y))
}

/// `∇l(η; y)`.
pub fn loss_gradient(model: &LossModel, eta: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_pair(model, eta, y)?;
    Ok(gradient(model, eta, y))
}

// Unchecked variants for solver inner loops; inputs were validated up front.
pub(crate) fn sum_loss(model: &LossModel, eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    eta.iter().zip(y.iter()).map(|(&e, &t)| model.sample_value(e, t)).sum()
}

pub(crate) fn gradient(model: &LossModel, eta: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        eta.len(),
        eta.iter().zip(y.iter()).map(|(&e, &t)| model.sample_derivative(e, t)),
    )
}

/// Minimizer of `t ↦ l₀(a + t; y) + νt²/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateMin {
    /// The minimizer; `±∞` when the infimum is only approached (logistic with `ν = 0`).
    pub t: f64,
    pub value: f64,
}

const UNIVARIATE_MAX_ITERS: usize = 200;

/// Solves the one-dimensional outlyingness subproblem
/// `min_t l₀(a + t; y) + νt²/2`.
pub fn gamma_univariate_min(model: &LossModel, a: f64, y: f64, nu: f64) -> Result<UnivariateMin> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("nu must be finite and >= 0, got {nu}")));
    }
    if !a.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite {
            what: "univariate subproblem input",
            index: 0,
        });
    }
    if model.is_classification() && y != 0.0 && y != 1.0 {
        return Err(Error::InvalidLabel { index: 0, value: y });
    }
    let objective = |t: f64| model.sample_value(a + t, y) + 0.5 * nu * t * t;
    let slope = |t: f64| model.sample_derivative(a + t, y) + nu * t;

    match *model {
        LossModel::Quadratic => {
            let t = (y - a) / (1.0 + nu);
            return Ok(UnivariateMin { t, value: objective(t) });
        }
        _ if nu == 0.0 => {
            let t = match *model {
                LossModel::Huber { .. } => y - a,
                LossModel::HuberizedHinge { .. } => {
                    let s = 2.0 * y - 1.0;
                    let m = s * a;
                    if m >= 1.0 {
                        0.0
                    } else {
                        s * (1.0 - m)
                    }
                }
                LossModel::Logistic => {
                    let t = if y == 1.0 { f64::INFINITY } else { f64::NEG_INFINITY };
                    return Ok(UnivariateMin { t, value: 0.0 });
                }
                LossModel::Quadratic => unreachable!(),
            };
            return Ok(UnivariateMin { t, value: objective(t) });
        }
        _ => {}
    }

    // Stop on a small Newton step, or once the slope is at rounding level,
    // so that tiny ν does not end the search early.
    let settled = |t: f64, g: f64| {
        g.abs() <= 4.0 * f64::EPSILON || g.abs() <= 1e-12 * (1.0 + t.abs()) * (model.sample_curvature(a + t, y) + nu)
    };
    let g0 = slope(0.0);
    if g0 == 0.0 || settled(0.0, g0) {
        return Ok(UnivariateMin {
            t: 0.0,
            value: objective(0.0),
        });
    }
    // The slope is strictly increasing (ν > 0), so bracket the root by doubling.
    let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
    let (mut lo, mut hi) = (0.0f64, dir);
    let mut expansions = 0;
    while slope(hi) * dir < 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 1100 || !hi.is_finite() {
            return Err(Error::NonConvergence {
                what: "univariate bracket search",
                iterations: expansions,
            });
        }
    }
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..UNIVARIATE_MAX_ITERS {
        let g = slope(t);
        if g == 0.0 || settled(t, g) || hi - lo <= 4.0 * f64::EPSILON * (1.0 + t.abs()) {
            return Ok(UnivariateMin { t, value: objective(t) });
        }
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let h = model.sample_curvature(a + t, y) + nu;
        let newton = t - g / h;
        t = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NonConvergence {
        what: "univariate outlyingness subproblem",
        iterations: UNIVARIATE_MAX_ITERS,
    })
}

/// Generalized Bregman divergence `l(α) − l(β) − ⟨∇l(β), α − β⟩`.
pub fn bregman_divergence(
    model: &LossModel,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    check_pair(model, alpha, y)?;
    check_pair(model, beta, y)?;
    let g = gradient(model, beta, y);
    Ok(sum_loss(model, alpha, y) - sum_loss(model, beta, y) - g.dot(&(alpha - beta)))
}

/// Effective noise `ε = −∇l(Xβ* + γ*)` at a known truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveNoiseView {
    pub epsilon: DVector<f64>,
    /// Empirical root-mean-square of `ε`.
    pub sigma: f64,
}

pub fn effective_noise(model: &LossModel, eta_star: &DVector<f64>, y: &DVector<f64>) -> Result<EffectiveNoiseView> {
    let epsilon = -loss_gradient(model, eta_star, y)?;
    let sigma = (epsilon.norm_squared() / epsilon.len().max(1) as f64).sqrt();
    Ok(EffectiveNoiseView { epsilon, sigma })
}
