//! Synthetic designs with planted leverage outliers, and detection metrics.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_len, Dataset};
use crate::loss::{sigmoid, LossModel};
use crate::solver::{fit_piq, Estimate, FitConfig, SolverKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example {
    /// Low-dimensional regression.
    Ex1,
    /// Low-dimensional classification.
    Ex2,
    /// High-dimensional sparse regression.
    Ex3,
    /// High-dimensional sparse classification.
    Ex4,
    Custom,
}

impl Example {
    pub fn number(&self) -> Option<u8> {
        match self {
            Example::Ex1 => Some(1),
            Example::Ex2 => Some(2),
            Example::Ex3 => Some(3),
            Example::Ex4 => Some(4),
            Example::Custom => None,
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.number() {
            Some(k) => write!(f, "{k}"),
            None => write!(f, "custom"),
        }
    }
}

impl FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "ex1" => Ok(Example::Ex1),
            "2" | "ex2" => Ok(Example::Ex2),
            "3" | "ex3" => Ok(Example::Ex3),
            "4" | "ex4" => Ok(Example::Ex4),
            _ => Err(Error::invalid(format!("unknown example '{s}' (expected 1|2|3|4)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Covariance {
    /// `Σᵢⱼ = ρ^|i−j|`.
    Toeplitz,
    /// `Σᵢⱼ = ρ` off the diagonal.
    Equicorrelated,
    /// Two equal equicorrelated diagonal blocks.
    Blocked,
}

impl FromStr for Covariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toeplitz" => Ok(Covariance::Toeplitz),
            "equi" | "equicorrelated" => Ok(Covariance::Equicorrelated),
            "blocked" => Ok(Covariance::Blocked),
            _ => Err(Error::invalid(format!(
                "unknown covariance '{s}' (expected toeplitz|equi|blocked)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub example: Example,
    pub task: Task,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub o_star: usize,
    pub beta_star: DVector<f64>,
    pub gamma_magnitude: f64,
    /// Every entry of an outlying row of `X` is set to this value.
    pub leverage_value: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub covariance: Covariance,
}

fn padded(values: &[f64], p: usize) -> DVector<f64> {
    DVector::from_fn(p, |j, _| values.get(j).copied().unwrap_or(0.0))
}

impl SimSpec {
    /// One of the four reference examples at the given size. The leading
    /// entries of the reference `β*` are kept (zero-padded if `p` is larger).
    pub fn example(example: Example, n: usize, p: usize, o_star: usize, seed: u64) -> Result<Self> {
        let (task, beta, gamma): (Task, &[f64], f64) = match example {
            Example::Ex1 => (Task::Regression, &[1.0, 1.0, 0.5, 0.5, -1.5, -1.5, -1.0, -1.0, 1.0, 1.0], 5.0),
            Example::Ex2 => (Task::Classification, &[3.0, 3.0, 1.5, 1.5, 3.0, 3.0, -3.0, -3.0, 3.0, 3.0], -90.0),
            Example::Ex3 => (Task::Regression, &[1.0, 0.5, 0.0, 0.0, -0.5, -1.0], 5.0),
            Example::Ex4 => (Task::Classification, &[3.0, 1.5, 3.0], -45.0),
            Example::Custom => return Err(Error::invalid("use SimSpec::custom for custom designs")),
        };
        let spec = Self {
            example,
            task,
            n,
            p,
            rho: 0.5,
            o_star,
            beta_star: padded(beta, p),
            gamma_magnitude: gamma,
            leverage_value: 3.0,
            noise_sigma: 1.0,
            seed,
            covariance: Covariance::Toeplitz,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The reference sizes: `n = 1000, p = 10` for examples 1–2 and
    /// `n = 200, p = 1000` for examples 3–4.
    pub fn reference(example: Example, o_star: usize, seed: u64) -> Result<Self> {
        match example {
            Example::Ex1 | Example::Ex2 => Self::example(example, 1000, 10, o_star, seed),
            _ => Self::example(example, 200, 1000, o_star, seed),
        }
    }

    pub fn custom(task: Task, n: usize, beta_star: DVector<f64>, o_star: usize, gamma_magnitude: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            example: Example::Custom,
            task,
            n,
            p: beta_star.len(),
            rho: 0.5,
            o_star,
            beta_star,
            gamma_magnitude,
            leverage_value: 3.0,
            noise_sigma: 1.0,
            seed,
            covariance: Covariance::Toeplitz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::invalid("simulation needs n, p >= 1"));
        }
        if 2 * self.o_star > self.n {
            return Err(Error::invalid(format!("o* = {} exceeds n/2", self.o_star)));
        }
        check_len("true coefficient vector", self.p, self.beta_star.len())?;
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// Number of nonzero true coefficients.
    pub fn s_star(&self) -> usize {
        self.beta_star.iter().filter(|b| **b != 0.0).count()
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.example, Example::Ex3 | Example::Ex4)
    }

    pub fn loss(&self) -> LossModel {
        match self.task {
            Task::Regression => LossModel::Quadratic,
            Task::Classification => LossModel::Logistic,
        }
    }

    /// Budgets `q = ⌈1.5 o*⌉` (and `q_β = ⌈1.5 s*⌉` for sparse examples)
    /// with the default solver and cooling for the task.
    pub fn default_config(&self) -> FitConfig {
        let q = (1.5 * self.o_star as f64).ceil() as usize;
        let q = q.min(self.n / 2);
        let mut cfg = match self.task {
            Task::Regression => FitConfig::regression(q),
            Task::Classification => FitConfig::classification(q),
        };
        if self.is_sparse() {
            cfg.solver = SolverKind::BcdGeneral;
            cfg.q_beta = Some(((1.5 * self.s_star() as f64).ceil() as usize).min(self.p));
        }
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimInstance {
    pub data: Dataset,
    pub beta_star: DVector<f64>,
    pub gamma_star: DVector<f64>,
    pub outlier_indices: Vec<usize>,
}

pub fn covariance_matrix(kind: Covariance, p: usize, rho: f64) -> DMatrix<f64> {
    let half = p.div_ceil(2);
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            return 1.0;
        }
        match kind {
            Covariance::Toeplitz => rho.powi((i as i32 - j as i32).abs()),
            Covariance::Equicorrelated => rho,
            Covariance::Blocked => {
                if (i < half) == (j < half) {
                    rho
                } else {
                    0.0
                }
            }
        }
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `base`.
pub fn replication_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;

fn gaussian_design(rng: &mut ChaCha8Rng, n: usize, chol: &DMatrix<f64>) -> DMatrix<f64> {
    let p = chol.nrows();
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    z * chol.transpose()
}

fn cholesky_factor(spec: &SimSpec) -> Result<DMatrix<f64>> {
    let sigma = covariance_matrix(spec.covariance, spec.p, spec.rho);
    sigma
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::invalid("covariance matrix is not positive definite"))
}

fn responses(spec: &SimSpec, rng: &mut ChaCha8Rng, mean: &DVector<f64>) -> DVector<f64> {
    match spec.task {
        Task::Regression => mean.map(|m| m + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)),
        Task::Classification => mean.map(|m| if rng.random::<f64>() < sigmoid(m) { 1.0 } else { 0.0 }),
    }
}

/// Draws one instance. The first `o*` rows of `X` are replaced by the
/// leverage pattern and shifted by `γ*`.
pub fn generate(spec: &SimSpec) -> Result<SimInstance> {
    spec.validate()?;
    let chol = cholesky_factor(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut x = gaussian_design(&mut rng, spec.n, &chol);
    let mut gamma_star = DVector::zeros(spec.n);
    for i in 0..spec.o_star {
        x.row_mut(i).fill(spec.leverage_value);
        gamma_star[i] = spec.gamma_magnitude;
    }
    let mean = &x * &spec.beta_star + &gamma_star;
    let y = responses(spec, &mut rng, &mean);
    Ok(SimInstance {
        data: Dataset::new(x, y)?,
        beta_star: spec.beta_star.clone(),
        gamma_star,
        outlier_indices: (0..spec.o_star).collect(),
    })
}

/// A clean instance of `size` rows from the same design, drawn from an
/// independent stream.
pub fn test_set(spec: &SimSpec, size: usize) -> Result<Dataset> {
    spec.validate()?;
    let chol = cholesky_factor(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(TEST_STREAM);
    let x = gaussian_design(&mut rng, size, &chol);
    let mean = &x * &spec.beta_star;
    let y = responses(spec, &mut rng, &mean);
    Dataset::new(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRates {
    /// Fraction of true nonzeros missed.
    pub masking: f64,
    /// No true nonzero missed.
    pub jd: bool,
    /// Fraction of true zeros flagged.
    pub false_alarm: f64,
}

pub fn detection(estimated: &DVector<f64>, truth: &DVector<f64>) -> DetectionRates {
    let positives = truth.iter().filter(|t| **t != 0.0).count();
    let negatives = truth.len() - positives;
    let mut missed = 0;
    let mut false_hits = 0;
    for (e, t) in estimated.iter().zip(truth.iter()) {
        match (*t != 0.0, *e != 0.0) {
            (true, false) => missed += 1,
            (false, true) => false_hits += 1,
            _ => {}
        }
    }
    DetectionRates {
        masking: if positives == 0 { 0.0 } else { missed as f64 / positives as f64 },
        jd: missed == 0,
        false_alarm: if negatives == 0 { 0.0 } else { false_hits as f64 / negatives as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Outlier masking rate M.
    pub masking_rate: f64,
    /// Joint detection: every true outlier flagged.
    pub jd: bool,
    pub false_alarm: f64,
    /// `‖β̂ − β*‖²/p` for regression, test misclassification rate for classification.
    pub err: f64,
    /// `‖β̂ − β*‖²`.
    pub sq_err: f64,
    /// Variable-selection rates, for sparse truths.
    pub beta: Option<DetectionRates>,
    pub iterations: usize,
    pub converged: bool,
    pub runtime_seconds: f64,
}

/// Misclassification rate of the rule `ŷ = 1{xᵀβ̂ > 0}`.
pub fn misclassification(beta: &DVector<f64>, test: &Dataset) -> Result<f64> {
    check_len("coefficient vector", test.p(), beta.len())?;
    if test.n() == 0 {
        return Ok(0.0);
    }
    let eta = test.x() * beta;
    let wrong = eta
        .iter()
        .zip(test.y().iter())
        .filter(|(e, y)| (**e > 0.0) != (**y > 0.5))
        .count();
    Ok(wrong as f64 / test.n() as f64)
}

pub fn evaluate(fit: &Estimate, truth: &SimInstance, task: Task, test: Option<&Dataset>) -> Result<MetricsReport> {
    check_len("coefficient vector", truth.beta_star.len(), fit.beta.len())?;
    check_len("outlyingness vector", truth.gamma_star.len(), fit.gamma.len())?;
    let gamma = detection(&fit.gamma, &truth.gamma_star);
    let sq_err = (&fit.beta - &truth.beta_star).norm_squared();
    let err = match task {
        Task::Regression => sq_err / fit.beta.len().max(1) as f64,
        Task::Classification => {
            let test = test.ok_or_else(|| Error::invalid("classification metrics need a clean test set"))?;
            misclassification(&fit.beta, test)?
        }
    };
    let sparse_truth = truth.beta_star.iter().any(|b| *b == 0.0);
    Ok(MetricsReport {
        masking_rate: gamma.masking,
        jd: gamma.jd,
        false_alarm: gamma.false_alarm,
        err,
        sq_err,
        beta: sparse_truth.then(|| detection(&fit.beta, &truth.beta_star)),
        iterations: fit.iterations,
        converged: fit.converged,
        runtime_seconds: 0.0,
    })
}

/// Means over replications, with rates as percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub reps: usize,
    pub err: f64,
    pub sq_err: f64,
    pub masking_pct: f64,
    pub jd_pct: f64,
    pub false_alarm_pct: f64,
    pub beta_masking_pct: Option<f64>,
    pub beta_jd_pct: Option<f64>,
    pub beta_false_alarm_pct: Option<f64>,
    pub converged_pct: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationTable {
    pub spec: SimSpec,
    pub config: FitConfig,
    pub reports: Vec<MetricsReport>,
    pub aggregate: Aggregate,
}

pub fn aggregate(reports: &[MetricsReport]) -> Aggregate {
    let reps = reports.len();
    let k = reps.max(1) as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let betas: Vec<DetectionRates> = reports.iter().filter_map(|r| r.beta).collect();
    let beta_mean = |f: &dyn Fn(&DetectionRates) -> f64| {
        (!betas.is_empty() && betas.len() == reps).then(|| 100.0 * betas.iter().map(f).sum::<f64>() / k)
    };
    Aggregate {
        reps,
        err: mean(&|r| r.err),
        sq_err: mean(&|r| r.sq_err),
        masking_pct: 100.0 * mean(&|r| r.masking_rate),
        jd_pct: 100.0 * mean(&|r| f64::from(u8::from(r.jd))),
        false_alarm_pct: 100.0 * mean(&|r| r.false_alarm),
        beta_masking_pct: beta_mean(&|b| b.masking),
        beta_jd_pct: beta_mean(&|b| f64::from(u8::from(b.jd))),
        beta_false_alarm_pct: beta_mean(&|b| b.false_alarm),
        converged_pct: 100.0 * mean(&|r| f64::from(u8::from(r.converged))),
        total_seconds: reports.iter().map(|r| r.runtime_seconds).sum(),
    }
}

/// Default clean test-set size for classification error.
pub const DEFAULT_TEST_SIZE: usize = 10_000;

/// Runs `reps` independent replications in parallel. Replication `i` uses
/// the seed `replication_seed(spec.seed, i)`.
pub fn run_replications(spec: &SimSpec, config: &FitConfig, reps: usize, test_size: usize) -> Result<ReplicationTable> {
    if reps == 0 {
        return Err(Error::invalid("reps must be >= 1"));
    }
    spec.validate()?;
    let loss = spec.loss();
    config.validate(spec.n, spec.p, &loss)?;
    let reports = (0..reps)
        .into_par_iter()
        .map(|i| {
            let rep_spec = SimSpec {
                seed: replication_seed(spec.seed, i as u64),
                ..spec.clone()
            };
            let inst = generate(&rep_spec)?;
            let test = match spec.task {
                Task::Classification => Some(test_set(&rep_spec, test_size)?),
                Task::Regression => None,
            };
            let cfg = FitConfig {
                seed: rep_spec.seed,
                ..config.clone()
            };
            let start = Instant::now();
            let fit = fit_piq(&inst.data, &loss, &cfg)?;
            let elapsed = start.elapsed().as_secs_f64();
            let mut report = evaluate(&fit, &inst, spec.task, test.as_ref())?;
            report.runtime_seconds = elapsed;
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicationTable {
        spec: spec.clone(),
        config: config.clone(),
        aggregate: aggregate(&reports),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_coefficients() {
        let s = SimSpec::reference(Example::Ex1, 100, 1).unwrap();
        assert_eq!(s.beta_star.as_slice(), &[1.0, 1.0, 0.5, 0.5, -1.5, -1.5, -1.0, -1.0, 1.0, 1.0]);
        assert_eq!((s.n, s.p, s.rho), (1000, 10, 0.5));
        let s = SimSpec::reference(Example::Ex3, 10, 1).unwrap();
        assert_eq!(s.s_star(), 4);
        assert_eq!(s.p, 1000);
        let s = SimSpec::example(Example::Ex2, 500, 10, 60, 1).unwrap();
        assert_eq!(s.gamma_magnitude, -90.0);
        let cfg = SimSpec::example(Example::Ex3, 200, 300, 10, 0).unwrap().default_config();
        assert_eq!((cfg.q_gamma, cfg.q_beta), (15, Some(6)));
    }

    #[test]
    fn planted_rows_and_determinism() {
        let spec = SimSpec::example(Example::Ex1, 50, 10, 5, 3).unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        for i in 0..5 {
            assert!(a.data.x().row(i).iter().all(|v| *v == 3.0));
            assert_eq!(a.gamma_star[i], 5.0);
        }
        assert!(a.gamma_star.iter().skip(5).all(|g| *g == 0.0));
        let clean = generate(&SimSpec { o_star: 0, ..spec }).unwrap();
        assert_eq!(clean.gamma_star, DVector::zeros(50));
        assert!(clean.outlier_indices.is_empty());
    }

    #[test]
    fn sample_covariance_matches() {
        for kind in [Covariance::Toeplitz, Covariance::Equicorrelated, Covariance::Blocked] {
            let spec = SimSpec {
                covariance: kind,
                ..SimSpec::custom(Task::Regression, 20_000, DVector::zeros(4), 0, 0.0, 11).unwrap()
            };
            let x = generate(&spec).unwrap().data.x().clone();
            let cov = x.tr_mul(&x) / 20_000.0;
            let want = covariance_matrix(kind, 4, 0.5);
            assert!((cov - want).amax() < 0.02, "{kind:?}");
        }
    }

    #[test]
    fn metric_definitions() {
        let truth = DVector::from_fn(20, |i, _| if i < 10 { 5.0 } else { 0.0 });
        let mut est = truth.clone();
        est[3] = 0.0;
        est[15] = 1.0;
        let d = detection(&est, &truth);
        assert!((d.masking - 0.1).abs() < 1e-15);
        assert!(!d.jd);
        assert!((d.false_alarm - 0.1).abs() < 1e-15);
        let perfect = detection(&truth, &truth);
        assert_eq!((perfect.masking, perfect.jd, perfect.false_alarm), (0.0, true, 0.0));
    }

    #[test]
    fn misclassification_recount() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 2.0, -3.0]);
        let y = DVector::from_column_slice(&[1.0, 1.0, 0.0, 0.0]);
        let test = Dataset::new(x, y).unwrap();
        assert_eq!(misclassification(&DVector::from_element(1, 1.0), &test).unwrap(), 0.5);
    }

    #[test]
    fn replications_are_deterministic() {
        let spec = SimSpec::example(Example::Ex1, 60, 4, 4, 9).unwrap();
        let cfg = spec.default_config();
        let a = run_replications(&spec, &cfg, 3, 0).unwrap();
        let b = run_replications(&spec, &cfg, 3, 0).unwrap();
        let strip = |t: &ReplicationTable| t.reports.iter().map(|r| (r.err, r.masking_rate, r.jd)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        let one = run_replications(&spec, &cfg, 1, 0).unwrap();
        assert_eq!(one.aggregate.err, one.reports[0].err);
    }
}
