//! Command-line interface.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | existence condition unsatisfied, or a diagnostic check failed |
//! | 2 | IO, parse or configuration error |
//! | 3 | singular penalized system |
//! | 4 | IRLS did not converge (suppressed by `--allow-partial`) |
//!
//! Data goes to standard output or `--output`; diagnostics go to standard error.

use crate::basis::{check_existence, KnotVector};
use crate::data::LongData;
use crate::error::{Error, Result};
use crate::kernel::invariant_report;
use crate::loss::LossSpec;
use crate::penalty::PenaltyConfig;
use crate::select::LambdaGrid;
use crate::simulate::{
    log_log_slope, rate_experiment, run_study, Estimator, MeanFunction, RateConfig, SimConfig,
    SimResult, Variate,
};
use crate::solver::{Problem, SolverConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNSATISFIED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SINGULAR: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "pensplinem",
    version,
    about = "Penalized spline M-estimation of mean functions from sparse functional data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a mean function to a CSV file with columns id,t,y.
    Fit(FitArgs),
    /// Run the Monte Carlo study and write one CSV row per estimator.
    Simulate(SimArgs),
    /// Dense-design convergence-rate experiment.
    Rate(RateArgs),
    /// Check the reproducing-kernel invariants and emit a JSON report.
    Diagnose(DiagnoseArgs),
    /// Check whether the design admits a unique unpenalized fit.
    CheckExistence(ExistenceArgs),
}

#[derive(Debug, Args)]
pub struct SplineArgs {
    /// Spline order p (degree p - 1).
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Derivative order r in the roughness penalty.
    #[arg(long = "penalty-order", default_value_t = 2)]
    pub penalty_order: usize,
    /// Number of equidistant interior knots K.
    #[arg(long, default_value_t = 30)]
    pub knots: usize,
}

impl SplineArgs {
    fn knot_vector(&self) -> Result<KnotVector> {
        KnotVector::equidistant(self.order, self.knots)
    }

    fn penalty(&self) -> Result<PenaltyConfig> {
        PenaltyConfig::new(self.knot_vector()?, self.penalty_order)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with header id,t,y.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON output path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub spline: SplineArgs,
    /// Loss: ls, lad, huber or huber:<k>.
    #[arg(long, default_value = "ls")]
    pub loss: LossSpec,
    /// Penalty: auto, a single value, or <start>:<stop>:<count> log-spaced.
    #[arg(long, default_value = "auto")]
    pub lambda: LambdaGrid,
    /// Number of equally spaced points on [0, 1] for fitted values.
    #[arg(long = "eval-grid", default_value_t = 101)]
    pub eval_grid: usize,
    #[arg(long = "max-iter", default_value_t = 200)]
    pub max_iter: usize,
    /// Relative coefficient-change tolerance for IRLS.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Report a non-converged fit instead of failing.
    #[arg(long = "allow-partial")]
    pub allow_partial: bool,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// CSV output path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Mean function: mu1 or mu2.
    #[arg(long, default_value = "mu1")]
    pub mean: MeanFunction,
    /// Score distribution: degrees of freedom, gaussian or zero.
    #[arg(long = "score-df", default_value = "5")]
    pub score_df: Variate,
    /// Use raw Student-t scores instead of unit-variance ones.
    #[arg(long = "raw-scores")]
    pub raw_scores: bool,
    /// Noise distribution: degrees of freedom, gaussian or zero.
    #[arg(long = "noise-df", default_value = "5")]
    pub noise_df: Variate,
    #[arg(long = "noise-scale", default_value_t = 0.5)]
    pub noise_scale: f64,
    /// Number of curves.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long = "m-min", default_value_t = 25)]
    pub m_min: usize,
    #[arg(long = "m-max", default_value_t = 40)]
    pub m_max: usize,
    /// Size of the midpoint sampling grid.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// Karhunen-Loeve terms.
    #[arg(long = "kl-terms", default_value_t = 50)]
    pub kl_terms: usize,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Comma-separated subset of penls, penlad, penhuber, smlad.
    #[arg(long, default_value = "penls,penlad,smlad", value_delimiter = ',')]
    pub estimators: Vec<Estimator>,
    /// Penalty grid used by every estimator.
    #[arg(long, default_value = "auto")]
    pub lambda: LambdaGrid,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fill the mean_time_s column (makes the output non-deterministic).
    #[arg(long)]
    pub timing: bool,
    /// Accepted for symmetry with `fit`; failed replications are always counted, not fatal.
    #[arg(long = "allow-partial")]
    pub allow_partial: bool,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// CSV output path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Comma-separated increasing sample sizes.
    #[arg(long = "n-list", default_value = "50,100,200,400", value_delimiter = ',')]
    pub n_list: Vec<usize>,
    /// Points per curve.
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value = "lad")]
    pub loss: LossSpec,
    /// Constant c in lambda = c (n m)^(-2r/(2r+1)).
    #[arg(long = "lambda-scale", default_value_t = 1.0)]
    pub lambda_scale: f64,
    #[arg(long, default_value = "mu1")]
    pub mean: MeanFunction,
    #[arg(long = "score-df", default_value = "5")]
    pub score_df: Variate,
    #[arg(long = "noise-df", default_value = "5")]
    pub noise_df: Variate,
    #[arg(long = "noise-scale", default_value_t = 0.5)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// JSON output path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub spline: SplineArgs,
    /// Random splines and functions per check.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExistenceArgs {
    /// Input CSV with header id,t,y.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON output path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub spline: SplineArgs,
}

/// Parses arguments, runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("PENSPLINEM_LOG"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Rate(a) => cmd_rate(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::CheckExistence(a) => cmd_check_existence(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error that escaped a subcommand.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SingularSystem(_) => EXIT_SINGULAR,
        Error::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
        _ => EXIT_CONFIG,
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Machine-file float format: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Serialize)]
struct GcvReport {
    lambdas: Vec<f64>,
    scores: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
struct FitReport {
    loss: String,
    order: usize,
    penalty_order: usize,
    interior_knots: usize,
    knots: Vec<f64>,
    n_subjects: usize,
    n_obs: usize,
    lambda: f64,
    edf: f64,
    iterations: usize,
    converged: bool,
    objective: f64,
    coefficients: Vec<f64>,
    eval_grid: Vec<f64>,
    fitted: Vec<f64>,
    gcv: Option<GcvReport>,
}

fn report_existence_failure(problem: &Problem) {
    let ex = problem.existence();
    if ex.satisfied {
        return;
    }
    if let Some(j) = ex.first_unmatched {
        eprintln!(
            "existence check failed: no distinct observation time can be assigned to basis function {j} \
             ({} of {} matched); use lambda > 0 or fewer knots",
            ex.witness_times.len(),
            problem.knots().dim()
        );
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<i32> {
    if args.eval_grid < 2 {
        return Err(Error::InvalidConfig("eval grid needs at least 2 points".into()));
    }
    let solver = SolverConfig {
        max_iterations: args.max_iter,
        tolerance: args.tol,
        loss: args.loss,
        ..SolverConfig::default()
    };
    solver.validate()?;
    let cfg = args.spline.penalty()?;
    let data = LongData::from_csv_path(&args.input)?;
    let problem = Problem::new(&cfg, &data)?;

    let outcome = match args.lambda.fixed() {
        Some(l) => problem.fit(l, &solver).map(|f| (f, None)),
        None => problem.select_lambda(&args.lambda, &solver).map(|g| {
            let report = GcvReport {
                lambdas: g.lambda_grid.clone(),
                scores: g.scores.iter().map(|s| s.is_finite().then_some(*s)).collect(),
            };
            (g.best_fit, Some(report))
        }),
    };
    let (fit, gcv) = match outcome {
        Ok(v) => v,
        Err(e) => {
            if matches!(e, Error::SingularSystem(_)) {
                report_existence_failure(&problem);
            }
            return Err(e);
        }
    };
    if !fit.converged {
        if !args.allow_partial {
            return Err(Error::NoConvergence {
                iterations: fit.iterations,
            });
        }
        log::warn!("IRLS stopped after {} iterations without converging", fit.iterations);
    }

    let eval_grid: Vec<f64> = (0..args.eval_grid)
        .map(|i| i as f64 / (args.eval_grid - 1) as f64)
        .collect();
    let fitted = fit.spline.eval_many(&eval_grid)?;
    let kv = cfg.knots();
    let report = FitReport {
        loss: args.loss.to_string(),
        order: kv.order(),
        penalty_order: cfg.r(),
        interior_knots: kv.interior_count(),
        knots: kv.knots().to_vec(),
        n_subjects: data.n_subjects(),
        n_obs: data.len(),
        lambda: fit.lambda,
        edf: fit.edf,
        iterations: fit.iterations,
        converged: fit.converged,
        objective: fit.objective,
        coefficients: fit.coefficients().to_vec(),
        eval_grid,
        fitted,
        gcv,
    };
    emit(args.output.as_deref(), &to_json(&report)?)?;
    Ok(EXIT_OK)
}

/// CSV with header `estimator,mean_mse,se_mse,mean_time_s,reps,failures`.
pub fn results_csv(result: &SimResult, timing: bool) -> String {
    let mut s = String::from("estimator,mean_mse,se_mse,mean_time_s,reps,failures\n");
    for r in &result.summaries {
        let time = if timing {
            fmt_float(r.mean_time_s)
        } else {
            String::new()
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.estimator,
            fmt_float(r.mean_mse),
            fmt_float(r.se_mse),
            time,
            r.reps,
            r.failures
        );
    }
    s
}

/// Human-readable block: mean MSE and standard error, both times 1000.
pub fn results_table(result: &SimResult) -> String {
    let mut s = String::from("estimator   MSE x1000   (SE x1000)\n");
    for r in &result.summaries {
        let _ = writeln!(
            s,
            "{:<10} {:>10.2}   ({:.2})",
            r.estimator.name(),
            1000.0 * r.mean_mse,
            1000.0 * r.se_mse
        );
    }
    s
}

pub fn sim_config(args: &SimArgs) -> SimConfig {
    SimConfig {
        mean: args.mean,
        score: args.score_df,
        standardize_scores: !args.raw_scores,
        noise: args.noise_df,
        noise_scale: args.noise_scale,
        n: args.n,
        m_range: (args.m_min, args.m_max),
        grid_size: args.grid,
        kl_terms: args.kl_terms,
        reps: args.reps,
        seed: args.seed,
        estimators: args.estimators.clone(),
        lambda: args.lambda.clone(),
        threads: args.threads,
    }
}

pub fn cmd_simulate(args: &SimArgs) -> Result<i32> {
    let cfg = sim_config(args);
    cfg.validate()?;
    let mut seen = Vec::new();
    for e in &cfg.estimators {
        if seen.contains(e) {
            return Err(Error::InvalidConfig(format!("estimator {e} listed twice")));
        }
        seen.push(*e);
    }
    let result = run_study(&cfg)?;
    let csv = results_csv(&result, args.timing);
    let table = results_table(&result);
    match &args.output {
        Some(p) => {
            emit(Some(p), &csv)?;
            print!("{table}");
        }
        None => {
            eprint!("{table}");
            emit(None, &csv)?;
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_rate(args: &RateArgs) -> Result<i32> {
    let cfg = RateConfig {
        n_list: args.n_list.clone(),
        dense_m: args.m,
        loss: args.loss,
        lambda_scale: args.lambda_scale,
        seed: args.seed,
        reps: args.reps,
        mean: args.mean,
        score: args.score_df,
        noise: args.noise_df,
        noise_scale: args.noise_scale,
        grid_size: args.grid,
        threads: args.threads,
    };
    if cfg.n_list.len() < 2 {
        return Err(Error::InvalidConfig("need at least two sample sizes".into()));
    }
    let points = rate_experiment(&cfg)?;
    let mut s = String::from("n,lambda,mean_mse,se_mse\n");
    for p in &points {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            p.n,
            fmt_float(p.lambda),
            fmt_float(p.mean_mse),
            fmt_float(p.se_mse)
        );
    }
    emit(args.output.as_deref(), &s)?;
    eprintln!("log-log slope: {:.4}", log_log_slope(&points));
    Ok(EXIT_OK)
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<i32> {
    let cfg = args.spline.penalty()?;
    let report = invariant_report(&cfg, args.seed, args.trials)?;
    emit(args.output.as_deref(), &to_json(&report)?)?;
    Ok(if report.all_ok { EXIT_OK } else { EXIT_UNSATISFIED })
}

#[derive(Debug, Serialize)]
struct ExistenceReport {
    satisfied: bool,
    basis_dim: usize,
    distinct_times: usize,
    first_unmatched: Option<usize>,
    witness_times: Vec<f64>,
}

pub fn cmd_check_existence(args: &ExistenceArgs) -> Result<i32> {
    let kv = args.spline.knot_vector()?;
    let data = LongData::from_csv_path(&args.input)?;
    let ex = check_existence(&kv, &data);
    let mut distinct = data.times();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let report = ExistenceReport {
        satisfied: ex.satisfied,
        basis_dim: kv.dim(),
        distinct_times: distinct.len(),
        first_unmatched: ex.first_unmatched,
        witness_times: ex.witness_times.clone(),
    };
    emit(args.output.as_deref(), &to_json(&report)?)?;
    if ex.satisfied {
        Ok(EXIT_OK)
    } else {
        if let Some(j) = ex.first_unmatched {
            eprintln!("no distinct observation time available for basis function {j}");
        }
        Ok(EXIT_UNSATISFIED)
    }
}
