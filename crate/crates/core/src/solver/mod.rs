//! Solvers for `min l(Xβ + γ; y) + ν‖γ‖²/2 + P(β)` subject to `‖γ‖₀ ≤ q`.
//!
//! [`fit_piq`] drives any of the four step families with a cooling schedule
//! on the cardinality budgets, starting from `β = 0`, `γ = 0`.

mod fixed_point;
pub mod schedule;
mod stepsize;
pub mod steps;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{sparse_spectral_estimate, spectral_norm_sq, AugmentedDesign, Dataset};
use crate::loss::{gradient, sum_loss, LossModel};
use crate::threshold::{ThresholdRule, TieReport};

pub use fixed_point::verify_fixed_point;
pub use schedule::{CoolingKind, CoolingSchedule};
pub use stepsize::{backtracking_stepsize, Backtracked, MmState, MAX_BACKTRACKS};
pub use steps::{
    bcd_general_step, gamma_block_update, iq_bcd_regression_step, iq_line_step, mm_general_step,
    mm_joint_regression_step, BcdStep, BetaUpdate, IqRegression, Step,
};

use fixed_point::{beta_equation_residual, gamma_equation_residual};
use steps::{mm_beta_map, mm_update};

pub const DEFAULT_NU: f64 = 1e-4;
pub const DEFAULT_HORIZON: usize = 200;
pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const DEFAULT_TOL_OBJECTIVE: f64 = 1e-9;
pub const DEFAULT_TOL_ITERATE: f64 = 1e-7;
const SAFETY: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    /// Blockwise quantile thresholding with exact least-squares `β` (quadratic loss).
    IqBcdRegression,
    /// Joint gradient/thresholding MM step (quadratic loss).
    MmJointRegression,
    /// Exact `γ`-block plus one `β`-update, any loss.
    BcdGeneral,
    /// Joint MM step, any loss.
    MmGeneral,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::IqBcdRegression => "iq",
            SolverKind::MmJointRegression => "mm-joint",
            SolverKind::BcdGeneral => "bcd",
            SolverKind::MmGeneral => "mm",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iq" | "iq-bcd" | "iq_bcd_regression" => Ok(SolverKind::IqBcdRegression),
            "mm-joint" | "mm_joint_regression" => Ok(SolverKind::MmJointRegression),
            "bcd" | "bcd_general" => Ok(SolverKind::BcdGeneral),
            "mm" | "mm_general" => Ok(SolverKind::MmGeneral),
            _ => Err(Error::invalid(format!("unknown solver '{s}' (expected iq|mm-joint|bcd|mm)"))),
        }
    }
}

/// How the inverse stepsize (`ρ` or `ϱ²`) is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizePolicy {
    Fixed(f64),
    /// `1.01 · L` times a spectral bound of the design.
    LipschitzBound,
    /// Geometric search upward from `L`, warm-started across iterations.
    Backtracking { shrink: f64 },
}

/// Penalty applied to `β` when `lambda` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientRule {
    Soft,
    Hard,
}

impl FromStr for CoefficientRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(CoefficientRule::Soft),
            "hard" => Ok(CoefficientRule::Hard),
            _ => Err(Error::invalid(format!("unknown coefficient rule '{s}' (expected soft|hard)"))),
        }
    }
}

impl CoefficientRule {
    pub fn with_lambda(self, lambda: f64) -> ThresholdRule {
        match self {
            CoefficientRule::Soft => ThresholdRule::Soft { lambda },
            CoefficientRule::Hard => ThresholdRule::Hard { lambda },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub solver: SolverKind,
    pub q_gamma: usize,
    /// Cardinality bound on `β`; `None` leaves `β` dense.
    pub q_beta: Option<usize>,
    pub nu: f64,
    /// Ridge weight on `β` (ignored by the two regression-only solvers).
    pub nu_beta: f64,
    /// Penalty level for a soft/hard rule on `β`; exclusive with `q_beta`.
    pub lambda: Option<f64>,
    pub beta_rule: CoefficientRule,
    pub stepsize: StepsizePolicy,
    pub cooling: CoolingKind,
    pub horizon: usize,
    /// Starting budget of the `γ` schedule; defaults to `n`.
    pub gamma_start: Option<usize>,
    /// Starting budget of the `β` schedule; defaults to `p`.
    pub beta_start: Option<usize>,
    /// Iterations allowed once every budget has reached its target.
    pub max_iters: usize,
    pub tol_objective: f64,
    pub tol_iterate: f64,
    pub seed: u64,
}

impl FitConfig {
    /// Constant budgets and default tolerances.
    pub fn new(solver: SolverKind, q_gamma: usize) -> Self {
        Self {
            solver,
            q_gamma,
            q_beta: None,
            nu: DEFAULT_NU,
            nu_beta: DEFAULT_NU,
            lambda: None,
            beta_rule: CoefficientRule::Soft,
            stepsize: StepsizePolicy::LipschitzBound,
            cooling: CoolingKind::Constant,
            horizon: DEFAULT_HORIZON,
            gamma_start: None,
            beta_start: None,
            max_iters: DEFAULT_MAX_ITERS,
            tol_objective: DEFAULT_TOL_OBJECTIVE,
            tol_iterate: DEFAULT_TOL_ITERATE,
            seed: 0,
        }
    }

    /// IQ with quadratic cooling over 200 iterations.
    pub fn regression(q_gamma: usize) -> Self {
        Self {
            cooling: CoolingKind::Quadratic,
            ..Self::new(SolverKind::IqBcdRegression, q_gamma)
        }
    }

    /// General BCD with logarithmic cooling over 200 iterations.
    pub fn classification(q_gamma: usize) -> Self {
        Self {
            cooling: CoolingKind::Logarithmic,
            ..Self::new(SolverKind::BcdGeneral, q_gamma)
        }
    }

    pub fn gamma_schedule(&self, n: usize) -> Result<CoolingSchedule> {
        schedule_for(self.cooling, self.gamma_start.unwrap_or(n), self.q_gamma, self.horizon)
    }

    pub fn beta_schedule(&self, p: usize) -> Result<Option<CoolingSchedule>> {
        self.q_beta
            .map(|q| schedule_for(self.cooling, self.beta_start.unwrap_or(p), q, self.horizon))
            .transpose()
    }

    pub fn validate(&self, n: usize, p: usize, loss: &LossModel) -> Result<()> {
        if 2 * self.q_gamma > n {
            return Err(Error::invalid(format!(
                "q_gamma = {} exceeds n/2 = {}",
                self.q_gamma,
                n as f64 / 2.0
            )));
        }
        if let Some(start) = self.gamma_start {
            if start > n || start < self.q_gamma {
                return Err(Error::invalid(format!(
                    "gamma schedule start {start} must lie in [q_gamma, n] = [{}, {n}]",
                    self.q_gamma
                )));
            }
        }
        if let Some(qb) = self.q_beta {
            if qb > p {
                return Err(Error::CardinalityTooLarge { q: qb, len: p });
            }
            if let Some(start) = self.beta_start {
                if start > p || start < qb {
                    return Err(Error::invalid(format!(
                        "beta schedule start {start} must lie in [q_beta, p] = [{qb}, {p}]"
                    )));
                }
            }
        }
        for (name, v) in [("nu", self.nu), ("nu_beta", self.nu_beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda must be finite and >= 0, got {l}")));
            }
            if self.q_beta.is_some() {
                return Err(Error::invalid("set either q_beta or lambda, not both"));
            }
        }
        if self.horizon == 0 {
            return Err(Error::invalid("cooling horizon must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.tol_objective >= 0.0 && self.tol_iterate >= 0.0) {
            return Err(Error::invalid("tolerances must be >= 0"));
        }
        match self.stepsize {
            StepsizePolicy::Fixed(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(Error::invalid(format!("fixed stepsize must be positive, got {v}")));
            }
            StepsizePolicy::Backtracking { shrink } => {
                if !(shrink > 0.0 && shrink < 1.0) {
                    return Err(Error::invalid(format!("backtracking shrink must lie in (0, 1), got {shrink}")));
                }
                if self.lambda.is_some_and(|l| l > 0.0) {
                    return Err(Error::invalid(
                        "backtracking changes the scaled penalty P(ϱβ; λ); use a fixed or Lipschitz stepsize with lambda",
                    ));
                }
            }
            _ => {}
        }
        match self.solver {
            SolverKind::IqBcdRegression | SolverKind::MmJointRegression => {
                if *loss != LossModel::Quadratic {
                    return Err(Error::Unsupported(format!(
                        "solver {} requires the quadratic loss; use bcd or mm for {loss}",
                        self.solver
                    )));
                }
                if self.q_beta.is_some() || self.lambda.is_some() {
                    return Err(Error::Unsupported(format!(
                        "solver {} fits a dense β; use bcd or mm for sparse or penalized β",
                        self.solver
                    )));
                }
            }
            SolverKind::BcdGeneral | SolverKind::MmGeneral => {}
        }
        Ok(())
    }
}

fn schedule_for(kind: CoolingKind, upper: usize, lower: usize, horizon: usize) -> Result<CoolingSchedule> {
    match kind {
        CoolingKind::Constant => Ok(CoolingSchedule::constant(lower)),
        _ => CoolingSchedule::new(kind, upper.max(lower), lower, horizon),
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub q_gamma: usize,
    pub q_beta: Option<usize>,
    /// Objective after the iteration.
    pub objective: f64,
    /// Inverse stepsize used (`ρ` for BCD, `ϱ²` for MM).
    pub step_scale: Option<f64>,
    /// `‖β̄ᵗ⁺¹ − β̄ᵗ‖₂`.
    pub iterate_change: f64,
    /// Quantity controlled by the rate bounds: `‖X(βᵗ − βᵗ⁺¹)‖²` for IQ and
    /// `Δᵀ(ϱ²I − L X̄ᵀX̄)Δ` for MM.
    pub progress: Option<f64>,
    pub tie: TieReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    /// Objective at the starting point `β = 0`, `γ = 0`.
    pub initial_objective: f64,
    pub history: Vec<IterationRecord>,
    /// Index into `history` of the first iteration run at the target budgets.
    pub settled_at: usize,
    pub support_gamma: Vec<usize>,
    pub support_beta: Vec<usize>,
    /// Residual of the solver's own fixed-point equations at the final iterate.
    pub fixed_point_residual: f64,
    pub iterations: usize,
    pub tie_events: usize,
    pub converged: bool,
    pub solver: SolverKind,
    pub loss: LossModel,
    pub q_gamma: usize,
    pub q_beta: Option<usize>,
    pub nu: f64,
    /// Effective ridge weight on `β` (0 for solvers without one).
    pub nu_beta: f64,
    /// Final inverse stepsize, when the solver uses one.
    pub step_scale: Option<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl Estimate {
    /// Objective values of iterations run at the target budgets.
    pub fn settled_trace(&self) -> &[f64] {
        &self.objective_trace[self.settled_at.min(self.objective_trace.len())..]
    }
}

fn support(v: &DVector<f64>) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i).collect()
}

#[derive(Clone, Copy)]
enum BetaMode {
    /// Ridge `ν_β‖β‖²/2` with an optional cardinality bound.
    Ridge { nu_beta: f64 },
    /// Soft or hard rule evaluated on `ϱβ`.
    Rule { rule: ThresholdRule, varrho: f64 },
}

enum Engine {
    Iq(IqRegression),
    Mm {
        beta: BetaMode,
        rho_sq: f64,
        shrink: Option<f64>,
    },
    Bcd {
        beta: BetaMode,
        /// Base `ρ` for a quantile `β`-step.
        rho: f64,
        /// Scale used to report the fixed-point residual of a full `β`-minimization.
        residual_rho: f64,
    },
}

struct Outcome {
    step: Step,
    scale: Option<f64>,
}

impl Engine {
    fn new(data: &Dataset, loss: &LossModel, config: &FitConfig) -> Result<Self> {
        let lip = loss.lipschitz();
        let x_norm = spectral_norm_sq(data.x());
        let beta = match config.lambda {
            Some(lambda) => {
                let rho_sq = match config.stepsize {
                    StepsizePolicy::Fixed(v) => v,
                    _ => SAFETY * lip * positive(x_norm),
                };
                let rho_sq = if config.solver == SolverKind::MmGeneral {
                    mm_scale(config, lip, data)
                } else {
                    rho_sq
                };
                BetaMode::Rule {
                    rule: config.beta_rule.with_lambda(lambda),
                    varrho: rho_sq.sqrt(),
                }
            }
            None => BetaMode::Ridge { nu_beta: config.nu_beta },
        };
        Ok(match config.solver {
            SolverKind::IqBcdRegression => Engine::Iq(IqRegression::new(data)?),
            SolverKind::MmJointRegression | SolverKind::MmGeneral => {
                let beta = match config.solver {
                    SolverKind::MmJointRegression => BetaMode::Ridge { nu_beta: 0.0 },
                    _ => beta,
                };
                let (rho_sq, shrink) = match config.stepsize {
                    StepsizePolicy::Backtracking { shrink } => (lip, Some(shrink)),
                    _ => (mm_scale(config, lip, data), None),
                };
                Engine::Mm { beta, rho_sq, shrink }
            }
            SolverKind::BcdGeneral => {
                let rho = match config.stepsize {
                    StepsizePolicy::Fixed(v) => v,
                    _ => {
                        let k = config.q_beta.map_or(data.p(), |q| (2 * q).min(data.p()));
                        SAFETY * lip * positive(sparse_spectral_estimate(data.x(), k))
                    }
                };
                Engine::Bcd {
                    beta,
                    rho,
                    residual_rho: SAFETY * lip * positive(x_norm),
                }
            }
        })
    }

    fn beta_rule(mode: &BetaMode, q_beta: Option<usize>, p: usize) -> ThresholdRule {
        match *mode {
            BetaMode::Ridge { nu_beta } => ThresholdRule::Quantile {
                q: q_beta.unwrap_or(p),
                nu: nu_beta,
            },
            BetaMode::Rule { rule, .. } => rule,
        }
    }

    fn step(
        &mut self,
        data: &Dataset,
        loss: &LossModel,
        beta: &DVector<f64>,
        gamma: &DVector<f64>,
        q: usize,
        q_beta: Option<usize>,
        nu: f64,
    ) -> Result<Outcome> {
        match self {
            Engine::Iq(iq) => Ok(Outcome {
                step: iq.step(data, beta, q, nu)?,
                scale: None,
            }),
            Engine::Mm {
                beta: mode,
                rho_sq,
                shrink,
            } => {
                let rule = Self::beta_rule(mode, q_beta, data.p());
                match *shrink {
                    Some(shrink) => {
                        let state = MmState {
                            beta,
                            gamma,
                            rule,
                            q,
                            nu,
                        };
                        let found = backtracking_stepsize(loss, data, &state, *rho_sq, shrink)?;
                        *rho_sq = found.rho_sq;
                        Ok(Outcome {
                            step: found.step,
                            scale: Some(found.rho_sq),
                        })
                    }
                    None => Ok(Outcome {
                        step: mm_update(data, loss, beta, gamma, *rho_sq, &rule, q, nu)?,
                        scale: Some(*rho_sq),
                    }),
                }
            }
            Engine::Bcd { beta: mode, rho, .. } => {
                let update = match (*mode, q_beta) {
                    (BetaMode::Rule { rule, varrho }, _) => BetaUpdate::Rule { rule, varrho },
                    (BetaMode::Ridge { nu_beta }, Some(q_beta)) => BetaUpdate::Quantile {
                        q_beta,
                        nu_beta,
                        rho: *rho,
                    },
                    (BetaMode::Ridge { nu_beta }, None) => BetaUpdate::Minimize { nu_beta },
                };
                let out = bcd_general_step(data, loss, beta, q, nu, &update)?;
                let scale = match update {
                    BetaUpdate::Rule { varrho, .. } => Some(varrho * varrho),
                    _ => out.rho_used,
                };
                Ok(Outcome { step: out.step, scale })
            }
        }
    }

    fn beta_penalty(&self, beta: &DVector<f64>) -> f64 {
        let mode = match self {
            Engine::Iq(_) => return 0.0,
            Engine::Mm { beta, .. } | Engine::Bcd { beta, .. } => beta,
        };
        match *mode {
            BetaMode::Ridge { nu_beta } => 0.5 * nu_beta * beta.norm_squared(),
            BetaMode::Rule { rule, varrho } => rule.penalty_sum(&(beta * varrho)),
        }
    }

    fn nu_beta(&self) -> f64 {
        match self {
            Engine::Mm {
                beta: BetaMode::Ridge { nu_beta },
                ..
            }
            | Engine::Bcd {
                beta: BetaMode::Ridge { nu_beta },
                ..
            } => *nu_beta,
            _ => 0.0,
        }
    }

    fn objective(&self, data: &Dataset, loss: &LossModel, beta: &DVector<f64>, gamma: &DVector<f64>, nu: f64) -> f64 {
        sum_loss(loss, &data.linear_predictor(beta, gamma), data.y())
            + 0.5 * nu * gamma.norm_squared()
            + self.beta_penalty(beta)
    }

    /// Residual of the equations this solver's fixed points satisfy.
    #[allow(clippy::too_many_arguments)]
    fn residual(
        &self,
        data: &Dataset,
        loss: &LossModel,
        beta: &DVector<f64>,
        gamma: &DVector<f64>,
        q: usize,
        q_beta: Option<usize>,
        nu: f64,
        last_scale: Option<f64>,
    ) -> Result<f64> {
        let grad = gradient(loss, &data.linear_predictor(beta, gamma), data.y());
        let p = data.p();
        match self {
            Engine::Iq(_) => {
                let rho = SAFETY * positive(spectral_norm_sq(data.x()));
                Ok(beta_equation_residual(data, beta, &grad, p, 0.0, rho)?
                    + gamma_equation_residual(gamma, &grad, q, nu, 1.0)?)
            }
            Engine::Mm { beta: mode, rho_sq, .. } => {
                let rule = Self::beta_rule(mode, q_beta, p);
                let b = (mm_beta_map(data.x(), beta, &grad, *rho_sq, &rule)? - beta).amax();
                Ok(b + gamma_equation_residual(gamma, &grad, q, nu, *rho_sq)?)
            }
            Engine::Bcd {
                beta: mode,
                residual_rho,
                ..
            } => {
                let b = match *mode {
                    BetaMode::Rule { rule, varrho } => {
                        (mm_beta_map(data.x(), beta, &grad, varrho * varrho, &rule)? - beta).amax()
                    }
                    BetaMode::Ridge { nu_beta } => match q_beta {
                        Some(qb) => {
                            let rho = last_scale.unwrap_or(*residual_rho);
                            beta_equation_residual(data, beta, &grad, qb, nu_beta, rho)?
                        }
                        None => beta_equation_residual(data, beta, &grad, p, nu_beta, *residual_rho)?,
                    },
                };
                Ok(b + gamma_equation_residual(gamma, &grad, q, nu, 1.0)?)
            }
        }
    }
}

fn positive(v: f64) -> f64 {
    v.max(f64::MIN_POSITIVE)
}

fn mm_scale(config: &FitConfig, lip: f64, data: &Dataset) -> f64 {
    match config.stepsize {
        StepsizePolicy::Fixed(v) => v,
        _ => SAFETY * lip * AugmentedDesign::new(data.x()).spectral_norm_sq(),
    }
}

/// Fits the model with progressively tightened cardinality budgets.
///
/// Iteration `t = 1, 2, …` runs one step at budgets `Q(t)`. Once every
/// budget has reached its target, iterations continue until both the relative
/// objective change and the iterate change fall below their tolerances, or
/// `max_iters` more iterations have run (reported as `converged = false`).
pub fn fit_piq(data: &Dataset, loss: &LossModel, config: &FitConfig) -> Result<Estimate> {
    let (n, p) = (data.n(), data.p());
    config.validate(n, p, loss)?;
    loss.validate_response(data.y())?;
    let gamma_schedule = config.gamma_schedule(n)?;
    let beta_schedule = config.beta_schedule(p)?;
    let mut engine = Engine::new(data, loss, config)?;

    let mut beta = DVector::zeros(p);
    let mut gamma = DVector::zeros(n);
    let initial_objective = engine.objective(data, loss, &beta, &gamma, config.nu);
    let mut prev_objective = initial_objective;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut settled_at = None;
    let mut settled_iters = 0;
    let mut converged = false;
    let mut last_scale = None;
    let lip = loss.lipschitz();

    for t in 1.. {
        let q = gamma_schedule.budget(t);
        let q_beta = beta_schedule.map(|s| s.budget(t));
        let out = engine.step(data, loss, &beta, &gamma, q, q_beta, config.nu)?;
        let objective = engine.objective(data, loss, &out.step.beta, &out.step.gamma, config.nu);
        if !objective.is_finite() {
            return Err(Error::NonFinite {
                what: "objective",
                index: t,
            });
        }
        let d_beta = &out.step.beta - &beta;
        let d_gamma = &out.step.gamma - &gamma;
        let iterate_change = (d_beta.norm_squared() + d_gamma.norm_squared()).sqrt();
        let progress = match &engine {
            Engine::Iq(_) => Some((data.x() * &d_beta).norm_squared()),
            Engine::Mm { .. } => {
                let rho_sq = out.scale.expect("MM steps report their stepsize");
                let moved = data.x() * &d_beta + &d_gamma;
                Some(rho_sq * iterate_change * iterate_change - lip * moved.norm_squared())
            }
            Engine::Bcd { .. } => None,
        };
        let same_budget = history
            .last()
            .is_some_and(|r| r.q_gamma == q && r.q_beta == q_beta);
        if let (Engine::Mm { .. }, Some(dq), true) = (&engine, progress, same_budget) {
            debug_assert!(
                objective <= prev_objective - 0.5 * dq + 1e-8 * (1.0 + prev_objective.abs()),
                "MM descent violated at iteration {t}: {objective} > {prev_objective} - {dq}/2"
            );
        }
        history.push(IterationRecord {
            q_gamma: q,
            q_beta,
            objective,
            step_scale: out.scale,
            iterate_change,
            progress,
            tie: out.step.tie,
        });
        last_scale = out.scale.or(last_scale);

        if q == config.q_gamma && q_beta == config.q_beta {
            settled_iters += 1;
            if settled_at.is_none() {
                settled_at = Some(history.len() - 1);
            } else {
                let rel = (prev_objective - objective).abs() <= config.tol_objective * (1.0 + prev_objective.abs());
                converged = rel && iterate_change <= config.tol_iterate;
            }
        }
        beta = out.step.beta;
        gamma = out.step.gamma;
        prev_objective = objective;
        if converged || settled_iters >= config.max_iters {
            break;
        }
    }

    let fixed_point_residual = engine.residual(
        data,
        loss,
        &beta,
        &gamma,
        config.q_gamma,
        config.q_beta,
        config.nu,
        last_scale,
    )?;
    let mut metadata = BTreeMap::new();
    metadata.insert("loss".into(), loss.to_string());
    metadata.insert("solver".into(), config.solver.name().into());
    metadata.insert("cooling".into(), config.cooling.name().into());
    metadata.insert("horizon".into(), config.horizon.to_string());
    metadata.insert("gamma_schedule_start".into(), gamma_schedule.upper.to_string());
    metadata.insert("seed".into(), config.seed.to_string());
    metadata.insert("standardized".into(), "false".into());
    metadata.insert(
        "stepsize".into(),
        match config.stepsize {
            StepsizePolicy::Fixed(v) => format!("fixed:{v}"),
            StepsizePolicy::LipschitzBound => "lipschitz".into(),
            StepsizePolicy::Backtracking { shrink } => format!("backtracking:{shrink}"),
        },
    );
    if let Some(lambda) = config.lambda {
        metadata.insert("lambda".into(), lambda.to_string());
        metadata.insert(
            "beta_rule".into(),
            match config.beta_rule {
                CoefficientRule::Soft => "soft".into(),
                CoefficientRule::Hard => "hard".into(),
            },
        );
    }

    Ok(Estimate {
        support_gamma: support(&gamma),
        support_beta: support(&beta),
        objective_trace: history.iter().map(|r| r.objective).collect(),
        initial_objective,
        settled_at: settled_at.unwrap_or(history.len()),
        fixed_point_residual,
        iterations: history.len(),
        tie_events: history.iter().filter(|r| r.tie.tied).count(),
        converged,
        solver: config.solver,
        loss: *loss,
        q_gamma: config.q_gamma,
        q_beta: config.q_beta,
        nu: config.nu,
        nu_beta: engine.nu_beta(),
        step_scale: last_scale,
        metadata,
        history,
        beta,
        gamma,
    })
}
