//! Thresholding rules.
//!
//! The quantile-thresholding operator `Θ#(s; q, ν)` keeps the `q` entries of
//! `s` with the largest magnitudes, shrinks them by `1/(1 + ν)`, and zeroes
//! everything else. It is the exact minimizer of
//! `‖s − ξ‖²/2 + ν‖ξ‖²/2` subject to `‖ξ‖₀ ≤ q`.
//!
//! Soft and hard thresholding are provided for the coefficient block; their
//! induced penalties are the ℓ1 norm and the hard-thresholding penalty `P_H`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::check_finite;

/// Whether the magnitude at the selection boundary was tied.
///
/// `tied` is set when `|s_(q)| = |s_(q+1)| > 0`; the smaller index wins.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TieReport {
    pub tied: bool,
    pub boundary_magnitude: f64,
}

/// Output of [`quantile_threshold`].
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholded {
    pub values: DVector<f64>,
    pub tie: TieReport,
}

/// Indices of the `q` largest `scores` (by absolute value), ordered by
/// position. Ties at the boundary resolve toward smaller indices.
pub fn top_q_indices(scores: &[f64], q: usize) -> Result<(Vec<usize>, TieReport)> {
    let n = scores.len();
    if q > n {
        return Err(Error::CardinalityTooLarge { q, len: n });
    }
    check_finite("threshold input", scores)?;
    if q == 0 {
        return Ok((Vec::new(), TieReport::default()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let by_magnitude = |a: &usize, b: &usize| {
        scores[*b]
            .abs()
            .total_cmp(&scores[*a].abs())
            .then(a.cmp(b))
    };
    let mut tie = TieReport::default();
    if q < n {
        idx.select_nth_unstable_by(q, by_magnitude);
        let next = scores[idx[q]].abs();
        let boundary = idx[..q]
            .iter()
            .map(|&i| scores[i].abs())
            .fold(f64::INFINITY, f64::min);
        tie = TieReport {
            tied: boundary == next && boundary > 0.0,
            boundary_magnitude: boundary,
        };
        idx.truncate(q);
    } else {
        tie.boundary_magnitude = scores.iter().map(|s| s.abs()).fold(f64::INFINITY, f64::min);
    }
    idx.sort_unstable();
    Ok((idx, tie))
}

/// `Θ#(s; q, ν)`.
pub fn quantile_threshold(s: &DVector<f64>, q: usize, nu: f64) -> Result<Thresholded> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("nu must be finite and >= 0, got {nu}")));
    }
    let (keep, tie) = top_q_indices(s.as_slice(), q)?;
    let mut values = DVector::zeros(s.len());
    let scale = 1.0 / (1.0 + nu);
    for i in keep {
        values[i] = s[i] * scale;
    }
    Ok(Thresholded { values, tie })
}

/// A thresholding function together with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    Soft { lambda: f64 },
    Hard { lambda: f64 },
    Quantile { q: usize, nu: f64 },
}

impl ThresholdRule {
    /// The identity map (soft thresholding at zero).
    pub fn identity() -> Self {
        ThresholdRule::Soft { lambda: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdRule::Soft { lambda } | ThresholdRule::Hard { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
                }
            }
            ThresholdRule::Quantile { nu, .. } => {
                if !(nu >= 0.0 && nu.is_finite()) {
                    return Err(Error::invalid(format!("nu must be finite and >= 0, got {nu}")));
                }
            }
        }
        Ok(())
    }

    /// Scalar evaluation for the componentwise rules.
    pub fn scalar(&self, t: f64) -> Option<f64> {
        match *self {
            ThresholdRule::Soft { lambda } => Some(soft(t, lambda)),
            ThresholdRule::Hard { lambda } => Some(hard(t, lambda)),
            ThresholdRule::Quantile { .. } => None,
        }
    }

    /// Sum of the induced penalty over the entries of `v`. The quantile rule
    /// contributes its ridge part `ν‖v‖²/2` (its cardinality bound is a
    /// constraint, not a penalty).
    pub fn penalty_sum(&self, v: &DVector<f64>) -> f64 {
        match *self {
            ThresholdRule::Quantile { nu, .. } => 0.5 * nu * v.norm_squared(),
            _ => v
                .iter()
                .map(|&t| induced_penalty(self, t).expect("componentwise rule"))
                .sum(),
        }
    }
}

fn soft(t: f64, lambda: f64) -> f64 {
    t.signum() * (t.abs() - lambda).max(0.0)
}

fn hard(t: f64, lambda: f64) -> f64 {
    if t.abs() > lambda {
        t
    } else {
        0.0
    }
}

pub fn apply_threshold(rule: &ThresholdRule, v: &DVector<f64>) -> Result<DVector<f64>> {
    rule.validate()?;
    check_finite("threshold input", v.as_slice())?;
    match *rule {
        ThresholdRule::Quantile { q, nu } => Ok(quantile_threshold(v, q, nu)?.values),
        _ => Ok(v.map(|t| rule.scalar(t).expect("componentwise rule"))),
    }
}

/// Penalty `P_Θ(θ; λ)` induced by a componentwise rule, normalized so that
/// `P(0) = 0`.
pub fn induced_penalty(rule: &ThresholdRule, theta: f64) -> Result<f64> {
    let a = theta.abs();
    match *rule {
        ThresholdRule::Soft { lambda } => Ok(lambda * a),
        ThresholdRule::Hard { lambda } => Ok(if a < lambda {
            -0.5 * theta * theta + lambda * a
        } else {
            0.5 * lambda * lambda
        }),
        ThresholdRule::Quantile { .. } => Err(Error::Unsupported(
            "the quantile rule induces a cardinality constraint, not a scalar penalty".into(),
        )),
    }
}
