//! Command-line front end: `fit`, `tune`, `simulate`, `bench`, `verify`.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure. A fit that
//! stops at `--max-iters` without converging still exits 0 and reports
//! `"converged": false`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::{config_json, csv_lines, estimate_json, read_csv_file, ResponseColumn, RunManifest};
use crate::linalg::Dataset;
use crate::loss::LossModel;
use crate::oracle::{joint_min_exhaustive, rip_report, trimmed_min_exhaustive, OracleBudget};
use crate::select::{cartesian_grid, tune_grid, Criterion};
use crate::sim::{run_replications, Example, ReplicationTable, SimSpec, DEFAULT_TEST_SIZE};
use crate::solver::{fit_piq, verify_fixed_point, CoefficientRule, CoolingKind, FitConfig, SolverKind, StepsizePolicy};

#[derive(Debug, Parser)]
#[command(name = "piq", version, about = "Outlier-resistant estimation by progressive quantile thresholding")]
pub struct Cli {
    /// Worker threads for replications and grids (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model to a CSV file and print the estimate as JSON.
    Fit(FitArgs),
    /// Score a grid of budgets with an information criterion.
    ///
    /// Grids over q_gamma, q_beta and lambda are Cartesian, so the number
    /// of fits is the product of the grid lengths.
    Tune(TuneArgs),
    /// Run replications of one simulated example.
    Simulate(SimulateArgs),
    /// Run the table suite for all four examples.
    Bench(BenchArgs),
    /// Cross-check a small random instance against the exhaustive oracles.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column, by zero-based index or header name.
    #[arg(long)]
    pub response: String,
    /// Treat the first row as a header.
    #[arg(long)]
    pub header: bool,
    /// Center and scale each predictor column before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Prepend a column of ones.
    #[arg(long)]
    pub intercept: bool,
    /// quadratic | logistic | huber:<delta> | hhinge:<delta>
    #[arg(long, default_value = "quadratic")]
    pub loss: LossModel,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// iq | mm-joint | bcd | mm (default: iq for quadratic loss, bcd otherwise)
    #[arg(long)]
    pub solver: Option<SolverKind>,
    /// Cardinality bound on the coefficients.
    #[arg(long)]
    pub q_beta: Option<usize>,
    #[arg(long, default_value_t = crate::solver::DEFAULT_NU)]
    pub nu: f64,
    #[arg(long, default_value_t = crate::solver::DEFAULT_NU)]
    pub nu_beta: f64,
    /// Penalty level of a soft or hard rule on the coefficients.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// soft | hard
    #[arg(long, default_value = "soft")]
    pub rule: CoefficientRule,
    /// const | quad | sig | log
    #[arg(long)]
    pub cooling: Option<CoolingKind>,
    #[arg(long, default_value_t = crate::solver::DEFAULT_HORIZON)]
    pub horizon: usize,
    #[arg(long, default_value_t = crate::solver::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Backtracking shrink factor in (0, 1) for the MM stepsize.
    #[arg(long)]
    pub backtrack: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SolverArgs {
    fn config(&self, q_gamma: usize, loss: &LossModel) -> FitConfig {
        let base = if *loss == LossModel::Quadratic && self.q_beta.is_none() && self.lambda.is_none() {
            FitConfig::regression(q_gamma)
        } else {
            FitConfig::classification(q_gamma)
        };
        FitConfig {
            solver: self.solver.unwrap_or(base.solver),
            q_beta: self.q_beta,
            nu: self.nu,
            nu_beta: self.nu_beta,
            lambda: self.lambda,
            beta_rule: self.rule,
            stepsize: match self.backtrack {
                Some(shrink) => StepsizePolicy::Backtracking { shrink },
                None => StepsizePolicy::LipschitzBound,
            },
            cooling: self.cooling.unwrap_or(base.cooling),
            horizon: self.horizon,
            max_iters: self.max_iters,
            seed: self.seed,
            ..base
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Cardinality bound on the outlyingness vector.
    #[arg(long)]
    pub q_gamma: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated q_gamma values, e.g. 10,20,30.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<usize>,
    /// Comma-separated q_beta values.
    #[arg(long, value_delimiter = ',')]
    pub q_beta_grid: Vec<usize>,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Vec<f64>,
    /// pic | pic0 | sfpic (default: sfpic for quadratic loss, pic otherwise)
    #[arg(long)]
    pub criterion: Option<Criterion>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// 1 | 2 | 3 | 4
    #[arg(long)]
    pub example: Example,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub ostar: usize,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Clean test-set size for classification examples.
    #[arg(long, default_value_t = DEFAULT_TEST_SIZE)]
    pub test_size: usize,
    /// Include per-replication runtimes (makes the output machine-dependent).
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Run the reference sizes instead of the reduced ones.
    #[arg(long)]
    pub full: bool,
    /// Replications per row (default: 20, or 50 with --full).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TEST_SIZE)]
    pub test_size: usize,
    /// Add the T column (total seconds per row).
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    /// quadratic | logistic
    #[arg(long, default_value = "quadratic")]
    pub loss: LossModel,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub budget: u128,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::invalid("--jobs must be >= 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?;
        return pool.install(|| dispatch(cli.command));
    }
    dispatch(cli.command)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Verify(a) => cmd_verify(&a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(args: &DataArgs, manifest: &mut RunManifest) -> Result<Dataset> {
    let loaded = read_csv_file(&args.data, args.header, &ResponseColumn::parse(&args.response))?;
    args.loss.validate_response(loaded.data.y())?;
    manifest.input_digest = Some(loaded.digest);
    manifest
        .set("loss", args.loss.to_string())
        .set("standardize", args.standardize)
        .set("intercept", args.intercept)
        .set("response", args.response.clone());
    let mut data = loaded.data;
    if args.standardize {
        data = data.standardized().0;
    }
    if args.intercept {
        data = data.with_intercept();
    }
    Ok(data)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let mut manifest = RunManifest::new("fit", args.solver.seed);
    let data = load(&args.data, &mut manifest)?;
    let cfg = args.solver.config(args.q_gamma, &args.data.loss);
    for (k, v) in config_json(&cfg) {
        manifest.config.insert(k, v);
    }
    let mut est = fit_piq(&data, &args.data.loss, &cfg)?;
    est.metadata.insert("standardized".into(), args.data.standardize.to_string());
    est.metadata.insert("intercept".into(), args.data.intercept.to_string());
    let mut text = serde_json::to_string_pretty(&estimate_json(&est, &data, &manifest)).expect("JSON values serialize");
    text.push('\n');
    emit(args.out.as_deref(), &text)
}

pub fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let mut manifest = RunManifest::new("tune", args.solver.seed);
    let data = load(&args.data, &mut manifest)?;
    let loss = args.data.loss;
    let criterion = args.criterion.unwrap_or(if loss == LossModel::Quadratic {
        Criterion::ScaleFree
    } else {
        Criterion::Pic
    });
    let first_q = *args.grid.first().ok_or(Error::EmptyGrid)?;
    let mut base = args.solver.config(first_q, &loss);
    if !args.q_beta_grid.is_empty() || !args.lambda_grid.is_empty() {
        base.solver = args.solver.solver.unwrap_or(SolverKind::BcdGeneral);
    }
    manifest.set("criterion", criterion.name()).set("grid", json!(args.grid));
    for (k, v) in config_json(&base) {
        manifest.config.insert(k, v);
    }
    let cells = cartesian_grid(&args.grid, &args.q_beta_grid, &args.lambda_grid);
    let result = tune_grid(&data, &loss, &base, &cells, criterion)?;
    let rows: Vec<Vec<String>> = result
        .scores
        .iter()
        .map(|s| {
            vec![
                s.cell.q_gamma.to_string(),
                opt(s.cell.q_beta),
                opt(s.cell.lambda),
                format!("{:.10e}", s.score.loss_term),
                format!("{:.10e}", s.score.penalty_term),
                format!("{:.10e}", s.score.total),
                s.converged.to_string(),
                s.iterations.to_string(),
            ]
        })
        .collect();
    let mut text = manifest.csv_comment();
    text.push_str(&csv_lines(
        &["q_gamma", "q_beta", "lambda", "loss_term", "penalty_term", "score", "converged", "iterations"],
        &rows,
    ));
    let _ = writeln!(
        text,
        "# selected: {}",
        json!({
            "q_gamma": result.best.q_gamma,
            "q_beta": result.best.q_beta,
            "lambda": result.best.lambda,
            "support_gamma": result.best_fit.support_gamma,
        })
    );
    emit(args.out.as_deref(), &text)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let reference = SimSpec::reference(args.example, args.ostar, args.seed)?;
    let mut spec = SimSpec::example(
        args.example,
        args.n.unwrap_or(reference.n),
        args.p.unwrap_or(reference.p),
        args.ostar,
        args.seed,
    )?;
    if let Some(rho) = args.rho {
        spec.rho = rho;
        spec.validate()?;
    }
    let cfg = spec.default_config();
    let table = run_replications(&spec, &cfg, args.reps, args.test_size)?;
    let mut manifest = RunManifest::new("simulate", args.seed);
    manifest
        .set("example", args.example.to_string())
        .set("n", spec.n)
        .set("p", spec.p)
        .set("o_star", spec.o_star)
        .set("rho", spec.rho)
        .set("reps", args.reps)
        .set("test_size", args.test_size);
    for (k, v) in config_json(&cfg) {
        manifest.config.insert(k, v);
    }
    let mut header = vec!["rep", "Err", "Err_sum", "M", "JD", "FA", "M_beta", "JD_beta", "FA_beta", "iterations", "converged"];
    if args.timings {
        header.push("T");
    }
    let rows: Vec<Vec<String>> = table
        .reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![
                i.to_string(),
                format!("{:.6}", r.err),
                format!("{:.6}", r.sq_err),
                format!("{:.4}", r.masking_rate),
                u8::from(r.jd).to_string(),
                format!("{:.4}", r.false_alarm),
                opt(r.beta.map(|b| format!("{:.4}", b.masking))),
                opt(r.beta.map(|b| u8::from(b.jd))),
                opt(r.beta.map(|b| format!("{:.4}", b.false_alarm))),
                r.iterations.to_string(),
                r.converged.to_string(),
            ];
            if args.timings {
                row.push(format!("{:.3}", r.runtime_seconds));
            }
            row
        })
        .collect();
    let mut text = manifest.csv_comment();
    text.push_str(&csv_lines(&header, &rows));
    let a = &table.aggregate;
    let _ = writeln!(
        text,
        "# summary: Err={:.6} Err_sum={:.6} M%={:.2} JD%={:.1} FA%={:.2} M_beta%={} JD_beta%={} FA_beta%={}",
        a.err,
        a.sq_err,
        a.masking_pct,
        a.jd_pct,
        a.false_alarm_pct,
        pct(a.beta_masking_pct),
        pct(a.beta_jd_pct),
        pct(a.beta_false_alarm_pct)
    );
    emit(args.out.as_deref(), &text)
}

/// `(example, n, p, o*)` rows of the table suite.
pub fn bench_settings(full: bool) -> Vec<(Example, usize, usize, usize)> {
    if full {
        let mut rows = Vec::new();
        rows.extend([10, 50, 100, 150, 200].map(|o| (Example::Ex1, 1000, 10, o)));
        rows.extend([30, 60, 90, 120, 150].map(|o| (Example::Ex2, 1000, 10, o)));
        rows.extend([10, 20, 30, 40].map(|o| (Example::Ex3, 200, 1000, o)));
        rows.extend([10, 20, 30, 40].map(|o| (Example::Ex4, 200, 1000, o)));
        rows
    } else {
        vec![
            (Example::Ex1, 500, 10, 25),
            (Example::Ex1, 500, 10, 50),
            (Example::Ex2, 500, 10, 60),
            (Example::Ex3, 200, 300, 10),
            (Example::Ex4, 200, 300, 10),
        ]
    }
}

pub fn bench_row(table: &ReplicationTable, timings: bool) -> Vec<String> {
    let a = &table.aggregate;
    let s = &table.spec;
    let mut row = vec![
        s.example.to_string(),
        s.n.to_string(),
        s.p.to_string(),
        s.o_star.to_string(),
        a.reps.to_string(),
        format!("{:.4}", a.err),
        format!("{:.4}", a.sq_err),
        format!("{:.2}", a.masking_pct),
        format!("{:.1}", a.jd_pct),
        format!("{:.2}", a.false_alarm_pct),
        pct(a.beta_masking_pct),
        pct(a.beta_jd_pct),
        pct(a.beta_false_alarm_pct),
    ];
    if timings {
        row.push(format!("{:.2}", a.total_seconds));
    }
    row
}

pub const BENCH_HEADER: [&str; 13] = [
    "example", "n", "p", "o_star", "reps", "Err", "Err_sum", "M", "JD", "FA", "M_beta", "JD_beta", "FA_beta",
];

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let reps = args.reps.unwrap_or(if args.full { 50 } else { 20 });
    let mut manifest = RunManifest::new("bench", args.seed);
    manifest
        .set("full", args.full)
        .set("reps", reps)
        .set("test_size", args.test_size);
    let mut rows = Vec::new();
    for (example, n, p, o) in bench_settings(args.full) {
        let spec = SimSpec::example(example, n, p, o, args.seed)?;
        let start = Instant::now();
        let table = run_replications(&spec, &spec.default_config(), reps, args.test_size)?;
        eprintln!("example {example} n={n} p={p} o*={o}: {:.1}s", start.elapsed().as_secs_f64());
        rows.push(bench_row(&table, args.timings));
    }
    let mut header = BENCH_HEADER.to_vec();
    if args.timings {
        header.push("T");
    }
    let mut text = manifest.csv_comment();
    text.push_str(&csv_lines(&header, &rows));
    emit(args.out.as_deref(), &text)
}

/// Random small instance with two planted shifts; labels are Bernoulli for
/// logistic loss with the shifted samples flipped.
pub fn verify_instance(n: usize, p: usize, loss: &LossModel, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(p, |j, _| if j % 2 == 0 { 1.0 } else { -1.0 });
    let eta = &x * beta;
    let y = match loss {
        LossModel::Quadratic => DVector::from_fn(n, |i, _| {
            eta[i] + 0.3 * rng.sample::<f64, _>(StandardNormal) + if i < 2 { 6.0 } else { 0.0 }
        }),
        LossModel::Logistic => DVector::from_fn(n, |i, _| {
            let label = f64::from(rng.random::<f64>() < crate::loss::sigmoid(eta[i]));
            if i < 2 {
                1.0 - label
            } else {
                label
            }
        }),
        other => return Err(Error::Unsupported(format!("verify supports quadratic and logistic losses, got {other}"))),
    };
    Dataset::new(x, y)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let loss = args.loss;
    let data = verify_instance(args.n, args.p, &loss, args.seed)?;
    let budget = OracleBudget::new(args.budget);
    let trimmed = trimmed_min_exhaustive(&data, &loss, args.q, budget)?;
    let joint = joint_min_exhaustive(&data, &loss, args.q, budget)?;
    let cfg = FitConfig {
        seed: args.seed,
        ..if loss == LossModel::Quadratic {
            FitConfig::new(SolverKind::IqBcdRegression, args.q)
        } else {
            FitConfig::new(SolverKind::BcdGeneral, args.q)
        }
    };
    let fit = fit_piq(&data, &loss, &cfg)?;
    let rho = 1.01 * crate::linalg::spectral_norm_sq(data.x()) * loss.lipschitz();
    let residual = verify_fixed_point(&data, &loss, &fit, rho)?;
    let rip = if args.p < args.n {
        rip_report(data.x(), 1.0, args.q, cfg.nu, budget).ok()
    } else {
        None
    };
    let mut manifest = RunManifest::new("verify", args.seed);
    manifest
        .set("n", args.n)
        .set("p", args.p)
        .set("q", args.q)
        .set("loss", loss.to_string());
    let report = json!({
        "manifest": manifest.to_json(),
        "trimmed": {
            "value": trimmed.value,
            "beta": trimmed.beta.as_slice(),
            "optimal_supports": trimmed.optimal_supports,
            "rank_deficient": trimmed.rank_deficient,
            "enumerated": trimmed.enumerated.to_string(),
        },
        "joint": {
            "value": joint.value,
            "optimal_supports": joint.optimal_supports,
            "enumerated": joint.enumerated.to_string(),
            "finite_stand_in": joint.finite_stand_in,
        },
        "trimming_gap": (trimmed.value - joint.value).abs(),
        "piq": {
            "support_gamma": fit.support_gamma,
            "objective": fit.objective_trace.last(),
            "converged": fit.converged,
            "fixed_point_residual": residual,
            "matches_oracle_support": trimmed.optimal_supports.contains(&fit.support_gamma),
        },
        "rip": rip.map(|r| json!({
            "epsilon": r.epsilon,
            "kappa": r.kappa,
            "support_size": r.support_size,
            "satisfied": r.satisfied,
        })).unwrap_or(Value::Null),
    });
    let mut text = serde_json::to_string_pretty(&report).expect("JSON values serialize");
    text.push('\n');
    emit(args.out.as_deref(), &text)
}
