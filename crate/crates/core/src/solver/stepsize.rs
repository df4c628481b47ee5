use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::Dataset;
use crate::loss::{gradient, sum_loss, LossModel};
use crate::threshold::ThresholdRule;

use super::steps::{mm_update, Step};

/// Current MM iterate and the thresholding parameters of the step.
#[derive(Debug, Clone, Copy)]
pub struct MmState<'a> {
    pub beta: &'a DVector<f64>,
    pub gamma: &'a DVector<f64>,
    pub rule: ThresholdRule,
    pub q: usize,
    pub nu: f64,
}

/// Accepted inverse stepsize `ϱ²` and the step taken with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Backtracked {
    pub rho_sq: f64,
    pub step: Step,
    pub trials: usize,
}

pub const MAX_BACKTRACKS: usize = 60;

/// Searches `ϱ² = initial · shrink⁻ᵏ` for the first value whose MM step
/// satisfies `l(η⁺) ≤ l(η) + ⟨∇l(η), η⁺ − η⟩ + ϱ²‖β̄⁺ − β̄‖²/2`.
pub fn backtracking_stepsize(
    loss: &LossModel,
    data: &Dataset,
    state: &MmState<'_>,
    initial: f64,
    shrink: f64,
) -> Result<Backtracked> {
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::invalid(format!("backtracking shrink must lie in (0, 1), got {shrink}")));
    }
    if !(initial > 0.0 && initial.is_finite()) {
        return Err(Error::invalid(format!("initial stepsize guess must be positive, got {initial}")));
    }
    let eta = data.linear_predictor(state.beta, state.gamma);
    let base = sum_loss(loss, &eta, data.y());
    let grad = gradient(loss, &eta, data.y());
    let mut rho_sq = initial;
    for trial in 0..MAX_BACKTRACKS {
        let step = mm_update(data, loss, state.beta, state.gamma, rho_sq, &state.rule, state.q, state.nu)?;
        let d_beta = &step.beta - state.beta;
        let d_gamma = &step.gamma - state.gamma;
        let d_eta = data.x() * &d_beta + &d_gamma;
        let bound = base + grad.dot(&d_eta) + 0.5 * rho_sq * (d_beta.norm_squared() + d_gamma.norm_squared());
        let value = sum_loss(loss, &(&eta + &d_eta), data.y());
        if value <= bound + 1e-12 * (1.0 + base.abs()) {
            return Ok(Backtracked {
                rho_sq,
                step,
                trials: trial + 1,
            });
        }
        rho_sq /= shrink;
    }
    Err(Error::NonConvergence {
        what: "backtracking line search",
        iterations: MAX_BACKTRACKS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::AugmentedDesign;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn quadratic_acceptance_is_within_twice_the_spectral_bound() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(30, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_fn(30, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let data = Dataset::new(x, y).unwrap();
            let beta = DVector::zeros(4);
            let gamma = DVector::zeros(30);
            let state = MmState {
                beta: &beta,
                gamma: &gamma,
                rule: ThresholdRule::identity(),
                q: 5,
                nu: 0.0,
            };
            let out = backtracking_stepsize(&LossModel::Quadratic, &data, &state, 1.0, 0.5).unwrap();
            let bound = AugmentedDesign::new(data.x()).spectral_norm_sq();
            assert!(out.rho_sq <= 2.0 * bound, "{} vs {}", out.rho_sq, bound);
        }
    }

    #[test]
    fn valid_initial_guess_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(10, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y).unwrap();
        let big = 1.01 * AugmentedDesign::new(data.x()).spectral_norm_sq();
        let beta = DVector::zeros(2);
        let gamma = DVector::zeros(10);
        let state = MmState {
            beta: &beta,
            gamma: &gamma,
            rule: ThresholdRule::identity(),
            q: 2,
            nu: 0.1,
        };
        let out = backtracking_stepsize(&LossModel::Quadratic, &data, &state, big, 0.5).unwrap();
        assert_eq!(out.rho_sq, big);
        assert_eq!(out.trials, 1);
        assert!(backtracking_stepsize(&LossModel::Quadratic, &data, &state, big, 1.0).is_err());
    }
}
