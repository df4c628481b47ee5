//! Predictive information criteria and grid tuning of the budgets.

use std::f64::consts::E;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_len, Dataset};
use crate::loss::{loss_value, LossModel};
use crate::solver::{fit_piq, Estimate, FitConfig};

pub const DEFAULT_A: f64 = 2.0;
pub const DEFAULT_ALPHA1: f64 = 5.5;
pub const DEFAULT_ALPHA2: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicVariant {
    /// `l + A·σ²·P(β, γ)`.
    General,
    /// `l + A·σ²·P(γ)`, for dense `β`.
    GammaOnly,
    /// `(n − p) log RSS + α₁‖γ‖₀ + α₂‖γ‖₀ log(en/‖γ‖₀)`.
    ScaleFree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PicConstants {
    /// `dispersion` is the `σ²` factor on the penalty (1 when the loss has none).
    Penalized { a: f64, dispersion: f64 },
    ScaleFree { alpha1: f64, alpha2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicScore {
    pub loss_term: f64,
    pub penalty_term: f64,
    pub total: f64,
    pub variant: PicVariant,
    pub constants: PicConstants,
}

fn x_log_ratio(count: usize, size: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        let c = count as f64;
        c * (E * size as f64 / c).ln()
    }
}

/// `o + o log(en/o) + s + s log(ep/s)` with `0 log 0 = 0`.
pub fn pic_penalty(s: usize, o: usize, n: usize, p: usize) -> Result<f64> {
    if s > p || o > n {
        return Err(Error::invalid(format!(
            "support sizes (s={s}, o={o}) exceed dimensions (p={p}, n={n})"
        )));
    }
    Ok(o as f64 + x_log_ratio(o, n) + s as f64 + x_log_ratio(s, p))
}

fn check_fit(fit: &Estimate, data: &Dataset) -> Result<()> {
    check_len("coefficient vector", data.p(), fit.beta.len())?;
    check_len("outlyingness vector", data.n(), fit.gamma.len())
}

fn check_a(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("PIC constant A must be positive, got {a}")));
    }
    Ok(())
}

/// `l(Xβ̂ + γ̂; y) + A·P(β̂, γ̂)`.
pub fn pic_score(fit: &Estimate, data: &Dataset, loss: &LossModel, a: f64) -> Result<PicScore> {
    pic_score_with(fit, data, loss, a, 1.0, PicVariant::General)
}

/// Penalized PIC with an explicit dispersion factor and variant
/// ([`PicVariant::General`] or [`PicVariant::GammaOnly`]).
pub fn pic_score_with(
    fit: &Estimate,
    data: &Dataset,
    loss: &LossModel,
    a: f64,
    dispersion: f64,
    variant: PicVariant,
) -> Result<PicScore> {
    check_fit(fit, data)?;
    check_a(a)?;
    if !(dispersion > 0.0 && dispersion.is_finite()) {
        return Err(Error::invalid(format!("dispersion must be positive, got {dispersion}")));
    }
    let o = fit.support_gamma.len();
    let complexity = match variant {
        PicVariant::General => pic_penalty(fit.support_beta.len(), o, data.n(), data.p())?,
        PicVariant::GammaOnly => pic_penalty(0, o, data.n(), data.p())?,
        PicVariant::ScaleFree => {
            return Err(Error::invalid("use scale_free_pic for the scale-free variant"));
        }
    };
    let loss_term = loss_value(loss, &data.linear_predictor(&fit.beta, &fit.gamma), data.y())?;
    let penalty_term = a * dispersion * complexity;
    Ok(PicScore {
        loss_term,
        penalty_term,
        total: loss_term + penalty_term,
        variant,
        constants: PicConstants::Penalized { a, dispersion },
    })
}

/// Scale-free PIC with the default constants `α₁ = 5.5`, `α₂ = 1`.
pub fn scale_free_pic(fit: &Estimate, data: &Dataset) -> Result<PicScore> {
    scale_free_pic_with(fit, data, DEFAULT_ALPHA1, DEFAULT_ALPHA2)
}

pub fn scale_free_pic_with(fit: &Estimate, data: &Dataset, alpha1: f64, alpha2: f64) -> Result<PicScore> {
    check_fit(fit, data)?;
    if fit.loss != LossModel::Quadratic {
        return Err(Error::Unsupported(format!(
            "the scale-free criterion applies to the quadratic loss, not {}",
            fit.loss
        )));
    }
    let (n, p) = (data.n(), data.p());
    if n <= p {
        return Err(Error::invalid(format!("the scale-free criterion needs n > p (n={n}, p={p})")));
    }
    if !(alpha1 >= 0.0 && alpha2 >= 0.0) {
        return Err(Error::invalid("scale-free constants must be >= 0"));
    }
    let rss = (data.linear_predictor(&fit.beta, &fit.gamma) - data.y()).norm_squared();
    if rss <= 0.0 {
        return Err(Error::LogSingularity);
    }
    let o = fit.support_gamma.len();
    let loss_term = (n - p) as f64 * rss.ln();
    let penalty_term = alpha1 * o as f64 + alpha2 * x_log_ratio(o, n);
    Ok(PicScore {
        loss_term,
        penalty_term,
        total: loss_term + penalty_term,
        variant: PicVariant::ScaleFree,
        constants: PicConstants::ScaleFree { alpha1, alpha2 },
    })
}

/// Robust `σ²` from the median absolute deviation of `y − Xβ̂`.
pub fn mad_dispersion(fit: &Estimate, data: &Dataset) -> Result<f64> {
    check_fit(fit, data)?;
    let r: Vec<f64> = (data.y() - data.x() * &fit.beta).iter().cloned().collect();
    let med = median(&r);
    let dev: Vec<f64> = r.iter().map(|v| (v - med).abs()).collect();
    let sigma = 1.482_602_218_505_602 * median(&dev);
    Ok((sigma * sigma).max(f64::MIN_POSITIVE))
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// General PIC on `(β, γ)`.
    Pic,
    /// PIC on `γ` alone.
    Pic0,
    ScaleFree,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Pic => "pic",
            Criterion::Pic0 => "pic0",
            Criterion::ScaleFree => "sfpic",
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pic" => Ok(Criterion::Pic),
            "pic0" => Ok(Criterion::Pic0),
            "sfpic" => Ok(Criterion::ScaleFree),
            _ => Err(Error::invalid(format!("unknown criterion '{s}' (expected pic|pic0|sfpic)"))),
        }
    }
}

/// One point of a tuning grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub q_gamma: usize,
    pub q_beta: Option<usize>,
    pub lambda: Option<f64>,
}

impl GridCell {
    pub fn q(q_gamma: usize) -> Self {
        Self {
            q_gamma,
            q_beta: None,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridScore {
    pub cell: GridCell,
    pub score: PicScore,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: GridCell,
    pub best_fit: Estimate,
    /// Scores in grid order.
    pub scores: Vec<GridScore>,
}

/// Cartesian product of budget and penalty grids.
pub fn cartesian_grid(q_gamma: &[usize], q_beta: &[usize], lambda: &[f64]) -> Vec<GridCell> {
    let betas: Vec<Option<usize>> = if q_beta.is_empty() {
        vec![None]
    } else {
        q_beta.iter().map(|&q| Some(q)).collect()
    };
    let lambdas: Vec<Option<f64>> = if lambda.is_empty() {
        vec![None]
    } else {
        lambda.iter().map(|&l| Some(l)).collect()
    };
    let mut cells = Vec::new();
    for &q in q_gamma {
        for &qb in &betas {
            for &l in &lambdas {
                cells.push(GridCell {
                    q_gamma: q,
                    q_beta: qb,
                    lambda: l,
                });
            }
        }
    }
    cells
}

/// Fits every grid cell (in parallel) and returns the criterion minimizer.
/// Ties go to the more parsimonious cell (smaller `q_γ`, then `q_β`, then
/// larger `λ`).
pub fn tune_grid(
    data: &Dataset,
    loss: &LossModel,
    base: &FitConfig,
    cells: &[GridCell],
    criterion: Criterion,
) -> Result<TuneResult> {
    if cells.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for cell in cells {
        let cfg = cell_config(base, cell, 0);
        cfg.validate(data.n(), data.p(), loss)?;
    }
    let fits: Vec<Estimate> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| fit_piq(data, loss, &cell_config(base, cell, i)))
        .collect::<Result<_>>()?;

    let dispersion = match (criterion, loss) {
        (Criterion::Pic | Criterion::Pic0, LossModel::Quadratic) => {
            // the largest outlier budget gives the most robust preliminary fit
            let widest = (0..cells.len()).max_by_key(|&i| (cells[i].q_gamma, std::cmp::Reverse(i))).expect("nonempty grid");
            mad_dispersion(&fits[widest], data)?
        }
        _ => 1.0,
    };
    let mut scores = Vec::with_capacity(cells.len());
    for (cell, fit) in cells.iter().zip(&fits) {
        let score = match criterion {
            Criterion::Pic => pic_score_with(fit, data, loss, DEFAULT_A, dispersion, PicVariant::General)?,
            Criterion::Pic0 => pic_score_with(fit, data, loss, DEFAULT_A, dispersion, PicVariant::GammaOnly)?,
            Criterion::ScaleFree => scale_free_pic(fit, data)?,
        };
        scores.push(GridScore {
            cell: *cell,
            score,
            converged: fit.converged,
            iterations: fit.iterations,
        });
    }
    let parsimony = |c: &GridCell| (c.q_gamma, c.q_beta.unwrap_or(0), -c.lambda.unwrap_or(0.0));
    let best = (0..cells.len())
        .min_by(|&i, &j| {
            scores[i]
                .score
                .total
                .total_cmp(&scores[j].score.total)
                .then_with(|| {
                    let (a, b) = (parsimony(&cells[i]), parsimony(&cells[j]));
                    a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2))
                })
        })
        .expect("nonempty grid");
    Ok(TuneResult {
        best: cells[best],
        best_fit: fits.into_iter().nth(best).expect("index in range"),
        scores,
    })
}

/// Tunes `q_γ` alone over `q_grid`.
pub fn tune_q(
    data: &Dataset,
    loss: &LossModel,
    base: &FitConfig,
    q_grid: &[usize],
    criterion: Criterion,
) -> Result<TuneResult> {
    let cells: Vec<GridCell> = q_grid
        .iter()
        .map(|&q| GridCell {
            q_gamma: q,
            q_beta: base.q_beta,
            lambda: base.lambda,
        })
        .collect();
    tune_grid(data, loss, base, &cells, criterion)
}

fn cell_config(base: &FitConfig, cell: &GridCell, index: usize) -> FitConfig {
    FitConfig {
        q_gamma: cell.q_gamma,
        q_beta: cell.q_beta,
        lambda: cell.lambda,
        seed: base.seed.wrapping_add(index as u64),
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn penalty_examples() {
        assert_eq!(pic_penalty(0, 0, 50, 5).unwrap(), 0.0);
        assert!((pic_penalty(0, 40, 40, 5).unwrap() - 80.0).abs() < 1e-12);
        let want = 2.0 + 2.0 * (5.0 * E).ln() + 3.0 + 3.0 * (100.0 * E / 3.0).ln();
        assert!((pic_penalty(2, 3, 100, 10).unwrap() - want).abs() < 1e-12);
        assert!(pic_penalty(11, 0, 100, 10).is_err());
    }

    #[test]
    fn penalty_is_monotone() {
        let (n, p) = (30, 8);
        for s in 0..=p {
            for o in 0..n {
                assert!(pic_penalty(s, o + 1, n, p).unwrap() >= pic_penalty(s, o, n, p).unwrap());
                if s < p {
                    assert!(pic_penalty(s + 1, o, n, p).unwrap() >= pic_penalty(s, o, n, p).unwrap());
                }
            }
        }
    }

    fn toy() -> (Dataset, Estimate) {
        let x = DMatrix::from_row_slice(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = DVector::from_column_slice(&[1.1, 1.9, 3.2, 3.9, 5.1, 12.0]);
        let data = Dataset::new(x, y).unwrap();
        let fit = fit_piq(&data, &LossModel::Quadratic, &FitConfig::new(crate::solver::SolverKind::IqBcdRegression, 1)).unwrap();
        (data, fit)
    }

    #[test]
    fn score_matches_hand_computation() {
        let (data, fit) = toy();
        let s = pic_score(&fit, &data, &LossModel::Quadratic, 2.0).unwrap();
        let rss = (data.x() * &fit.beta + &fit.gamma - data.y()).norm_squared();
        let complexity = 1.0 + (6.0 * E).ln() + 1.0 + E.ln();
        assert!((s.loss_term - 0.5 * rss).abs() < 1e-12);
        assert!((s.penalty_term - 2.0 * complexity).abs() < 1e-12);
        let doubled = pic_score(&fit, &data, &LossModel::Quadratic, 4.0).unwrap();
        assert_eq!(doubled.penalty_term, 2.0 * s.penalty_term);
    }

    #[test]
    fn scale_free_example_and_singularity() {
        let (data, mut fit) = toy();
        let s = scale_free_pic(&fit, &data).unwrap();
        let rss = (data.x() * &fit.beta + &fit.gamma - data.y()).norm_squared();
        assert!((s.total - (5.0 * rss.ln() + 5.5 + (6.0 * E).ln())).abs() < 1e-12);
        // exact fit
        fit.beta = DVector::from_element(1, 0.0);
        fit.gamma = data.y().clone();
        fit.support_gamma = (0..6).collect();
        assert!(matches!(scale_free_pic(&fit, &data), Err(Error::LogSingularity)));
    }

    #[test]
    fn tune_handles_degenerate_grids() {
        let (data, _) = toy();
        let base = FitConfig::new(crate::solver::SolverKind::IqBcdRegression, 0);
        assert!(matches!(
            tune_q(&data, &LossModel::Quadratic, &base, &[], Criterion::ScaleFree),
            Err(Error::EmptyGrid)
        ));
        let r = tune_q(&data, &LossModel::Quadratic, &base, &[1], Criterion::ScaleFree).unwrap();
        assert_eq!(r.best.q_gamma, 1);
        assert_eq!(r.scores.len(), 1);
        let r = tune_q(&data, &LossModel::Quadratic, &base, &[0, 1, 2], Criterion::ScaleFree).unwrap();
        assert_eq!(r.best.q_gamma, 1);
    }
}
