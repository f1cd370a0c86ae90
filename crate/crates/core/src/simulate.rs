//! Monte Carlo study of the mean-function estimators.
//!
//! Curves follow a truncated Karhunen-Loeve expansion of Brownian motion
//! around a known mean,
//!
//! ```text
//! X_i(t) = mu(t) + sqrt(2) sum_k Z_ik sin((k - 1/2) pi t) / ((k - 1/2) pi),
//! ```
//!
//! observed on a random subset of a midpoint grid with additive noise.
//! Every replication draws from its own ChaCha stream keyed by the
//! replication index, so results do not depend on scheduling.

use crate::basis::{distinct_sorted, KnotVector};
use crate::data::{LongData, Record};
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::penalty::PenaltyConfig;
use crate::select::LambdaGrid;
use crate::solver::{Backend, FitResult, Problem, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanFunction {
    /// `sin(2 pi t)`.
    Mu1,
    /// Three Gaussian bumps at 0.25, 0.5 and 0.75.
    Mu2,
}

impl MeanFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            MeanFunction::Mu1 => (2.0 * PI * t).sin(),
            MeanFunction::Mu2 => [0.25, 0.5, 0.75]
                .iter()
                .map(|c| (-(t - c).powi(2) / 0.01).exp())
                .sum(),
        }
    }
}

pub fn mean_function(which: MeanFunction, t: f64) -> f64 {
    which.eval(t)
}

impl FromStr for MeanFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu1" => Ok(MeanFunction::Mu1),
            "mu2" => Ok(MeanFunction::Mu2),
            _ => Err(Error::InvalidConfig(format!("unknown mean function `{s}`"))),
        }
    }
}

impl fmt::Display for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeanFunction::Mu1 => "mu1",
            MeanFunction::Mu2 => "mu2",
        })
    }
}

/// Distribution of the Karhunen-Loeve scores or of the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variate {
    Gaussian,
    /// Student t with the given degrees of freedom.
    StudentT(u32),
    /// Degenerate at zero.
    Zero,
}

impl Variate {
    /// One draw. Student t is a normal over the root of a scaled chi-square.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Variate::Gaussian => rng.sample(StandardNormal),
            Variate::StudentT(df) => {
                let z: f64 = rng.sample(StandardNormal);
                let chi = ChiSquared::new(df as f64)
                    .expect("degrees of freedom are positive")
                    .sample(rng);
                z / (chi / df as f64).sqrt()
            }
            Variate::Zero => 0.0,
        }
    }

    /// Variance, when finite.
    pub fn variance(&self) -> Option<f64> {
        match *self {
            Variate::Gaussian => Some(1.0),
            Variate::StudentT(df) if df > 2 => Some(df as f64 / (df as f64 - 2.0)),
            Variate::StudentT(_) => None,
            Variate::Zero => Some(0.0),
        }
    }
}

/// Parses `gaussian`, `zero`, or a positive integer for Student t.
impl FromStr for Variate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" => Ok(Variate::Gaussian),
            "zero" | "inf" => Ok(Variate::Zero),
            _ => match s.parse::<u32>() {
                Ok(df) if df > 0 => Ok(Variate::StudentT(df)),
                _ => Err(Error::InvalidConfig(format!(
                    "degrees of freedom must be a positive integer, `gaussian` or `zero`, got `{s}`"
                ))),
            },
        }
    }
}

impl fmt::Display for Variate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variate::Gaussian => f.write_str("gaussian"),
            Variate::StudentT(df) => write!(f, "{df}"),
            Variate::Zero => f.write_str("zero"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    /// Square loss, cubic splines with 30 equidistant knots.
    PenLS,
    /// Absolute loss on the same space.
    PenLAD,
    /// Huber loss (`k = 1.345`) on the same space.
    PenHuber,
    /// Absolute loss with knots at every distinct sampling time.
    SmLAD,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::PenLS,
        Estimator::PenLAD,
        Estimator::PenHuber,
        Estimator::SmLAD,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::PenLS => "penls",
            Estimator::PenLAD => "penlad",
            Estimator::PenHuber => "penhuber",
            Estimator::SmLAD => "smlad",
        }
    }

    pub fn loss(&self) -> LossSpec {
        match self {
            Estimator::PenLS => LossSpec::Square,
            Estimator::PenLAD | Estimator::SmLAD => LossSpec::absolute(),
            Estimator::PenHuber => LossSpec::huber(),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator `{s}`")))
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const PEN_ORDER: usize = 4;
pub const PEN_R: usize = 2;
pub const PEN_KNOTS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mean: MeanFunction,
    pub score: Variate,
    /// Rescale Student-t scores to unit variance (df > 2 only).
    pub standardize_scores: bool,
    pub noise: Variate,
    pub noise_scale: f64,
    /// Number of curves.
    pub n: usize,
    /// Inclusive range of points per curve.
    pub m_range: (usize, usize),
    pub grid_size: usize,
    pub kl_terms: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub lambda: LambdaGrid,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mean: MeanFunction::Mu1,
            score: Variate::StudentT(5),
            standardize_scores: true,
            noise: Variate::StudentT(5),
            noise_scale: 0.5,
            n: 100,
            m_range: (25, 40),
            grid_size: 50,
            kl_terms: 50,
            reps: 500,
            seed: 1,
            estimators: vec![Estimator::PenLS, Estimator::PenLAD, Estimator::SmLAD],
            lambda: LambdaGrid::Auto,
            threads: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.m_range;
        if lo < 1 || lo > hi || hi > self.grid_size {
            return Err(Error::InvalidConfig(format!(
                "m range [{lo}, {hi}] must lie within [1, {}]",
                self.grid_size
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators requested".into()));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::InvalidConfig("noise scale must be non-negative".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        Ok(())
    }

    fn score_factor(&self) -> f64 {
        match (self.standardize_scores, self.score.variance()) {
            (true, Some(v)) if v > 0.0 => 1.0 / v.sqrt(),
            _ => 1.0,
        }
    }
}

/// Midpoint grid `(j - 1/2) / size`.
pub fn midpoint_grid(size: usize) -> Vec<f64> {
    (1..=size).map(|j| (j as f64 - 0.5) / size as f64).collect()
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub data: LongData,
    pub grid: Vec<f64>,
    /// Mean function on the grid.
    pub truth: Vec<f64>,
}

pub fn replication_rng(seed: u64, rep_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep_index);
    rng
}

pub fn generate_dataset(cfg: &SimConfig, rep_index: usize) -> SimDataset {
    let mut rng = replication_rng(cfg.seed, rep_index as u64);
    let grid = midpoint_grid(cfg.grid_size);
    let truth: Vec<f64> = grid.iter().map(|&t| cfg.mean.eval(t)).collect();
    // phi[g][k] = sqrt(2) sin((k - 1/2) pi t_g) / ((k - 1/2) pi)
    let phi: Vec<Vec<f64>> = grid
        .iter()
        .map(|&t| {
            (1..=cfg.kl_terms)
                .map(|k| {
                    let w = (k as f64 - 0.5) * PI;
                    std::f64::consts::SQRT_2 * (w * t).sin() / w
                })
                .collect()
        })
        .collect();
    let score_factor = cfg.score_factor();
    let (lo, hi) = cfg.m_range;
    let mut records = Vec::with_capacity(cfg.n * hi);
    let mut scores = vec![0.0; cfg.kl_terms];
    for subject in 0..cfg.n {
        let m = rng.random_range(lo..=hi);
        let mut picks = rand::seq::index::sample(&mut rng, cfg.grid_size, m).into_vec();
        picks.sort_unstable();
        for z in scores.iter_mut() {
            *z = score_factor * cfg.score.sample(&mut rng);
        }
        for &g in &picks {
            let x: f64 = truth[g] + phi[g].iter().zip(&scores).map(|(a, b)| a * b).sum::<f64>();
            let noise = cfg.noise.sample(&mut rng);
            records.push(Record {
                subject: subject as i64,
                t: grid[g],
                y: x + cfg.noise_scale * noise,
            });
        }
    }
    SimDataset {
        data: LongData::new(records).expect("generated data is valid"),
        grid,
        truth,
    }
}

/// Mean squared error of fitted values against the truth on a grid.
pub fn mse_on_grid(fit: &FitResult, truth: &[f64], grid: &[f64]) -> Result<f64> {
    if truth.len() != grid.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: grid.len(),
        });
    }
    let fitted = fit.spline.eval_many(grid)?;
    mse(&fitted, truth)
}

pub fn mse(fitted: &[f64], truth: &[f64]) -> Result<f64> {
    if fitted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: fitted.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(fitted
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / truth.len() as f64)
}

/// Spline space and solver used by an estimator on a dataset.
pub fn estimator_problem(est: Estimator, data: &LongData) -> Result<(Problem, SolverConfig)> {
    let (kv, backend) = match est {
        Estimator::SmLAD => {
            let interior: Vec<f64> = distinct_sorted(&data.times())
                .into_iter()
                .filter(|&t| t > 0.0 && t < 1.0)
                .collect();
            (KnotVector::new(PEN_ORDER, &interior)?, Backend::Dense)
        }
        _ => (KnotVector::equidistant(PEN_ORDER, PEN_KNOTS)?, Backend::Banded),
    };
    let cfg = PenaltyConfig::new(kv, PEN_R)?;
    let solver = SolverConfig {
        backend,
        ..SolverConfig::with_loss(est.loss())
    };
    Ok((Problem::new(&cfg, data)?, solver))
}

/// Fits an estimator with penalty chosen from `grid`.
pub fn fit_estimator(est: Estimator, data: &LongData, grid: &LambdaGrid) -> Result<FitResult> {
    let (problem, solver) = estimator_problem(est, data)?;
    match grid.fixed() {
        Some(lambda) => problem.fit(lambda, &solver),
        None => Ok(problem.select_lambda(grid, &solver)?.best_fit),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub mse: f64,
    pub lambda: f64,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub mean_mse: f64,
    pub se_mse: f64,
    pub mean_time_s: f64,
    pub reps: usize,
    pub failures: usize,
    /// One entry per replication; `None` marks a failure.
    pub outcomes: Vec<Option<RepOutcome>>,
}

impl EstimatorSummary {
    pub fn mses(&self) -> Vec<f64> {
        self.outcomes.iter().flatten().map(|o| o.mse).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.outcomes.iter().flatten().map(|o| o.seconds).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub summaries: Vec<EstimatorSummary>,
}

impl SimResult {
    pub fn get(&self, est: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == est)
    }
}

/// Sample mean and `sd / sqrt(count)`; the latter is NaN for fewer than two values.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_replication(cfg: &SimConfig, rep: usize) -> Vec<Option<RepOutcome>> {
    let ds = generate_dataset(cfg, rep);
    cfg.estimators
        .iter()
        .map(|&est| {
            let start = Instant::now();
            let fit = fit_estimator(est, &ds.data, &cfg.lambda);
            let seconds = start.elapsed().as_secs_f64();
            match fit.and_then(|f| Ok((mse_on_grid(&f, &ds.truth, &ds.grid)?, f))) {
                Ok((mse, f)) => Some(RepOutcome {
                    mse,
                    lambda: f.lambda,
                    converged: f.converged,
                    seconds,
                }),
                Err(e) => {
                    log::warn!("replication {rep} estimator {est} failed: {e}");
                    None
                }
            }
        })
        .collect()
}

pub fn run_study(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let run = || -> Vec<Vec<Option<RepOutcome>>> {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| run_replication(cfg, rep))
            .collect()
    };
    let per_rep = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(run),
        None => run(),
    };
    let summaries = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(ei, &estimator)| {
            let outcomes: Vec<Option<RepOutcome>> =
                per_rep.iter().map(|row| row[ei].clone()).collect();
            let mses: Vec<f64> = outcomes.iter().flatten().map(|o| o.mse).collect();
            let times: Vec<f64> = outcomes.iter().flatten().map(|o| o.seconds).collect();
            let (mean_mse, se_mse) = mean_and_se(&mses);
            let mean_time_s = mean_and_se(&times).0;
            EstimatorSummary {
                estimator,
                mean_mse,
                se_mse,
                mean_time_s,
                reps: cfg.reps,
                failures: outcomes.iter().filter(|o| o.is_none()).count(),
                outcomes,
            }
        })
        .collect();
    Ok(SimResult { summaries })
}

/// Dense-design experiment for the convergence rate in `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub n_list: Vec<usize>,
    /// Points per curve, identical for every curve.
    pub dense_m: usize,
    pub loss: LossSpec,
    /// Constant `c` in `lambda = c (n m)^{-2r/(2r+1)}`.
    pub lambda_scale: f64,
    pub seed: u64,
    pub reps: usize,
    pub mean: MeanFunction,
    pub score: Variate,
    pub noise: Variate,
    pub noise_scale: f64,
    pub grid_size: usize,
    pub threads: Option<usize>,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            n_list: vec![50, 100, 200, 400],
            dense_m: 50,
            loss: LossSpec::absolute(),
            lambda_scale: 1.0,
            seed: 1,
            reps: 100,
            mean: MeanFunction::Mu1,
            score: Variate::StudentT(5),
            noise: Variate::StudentT(5),
            noise_scale: 0.5,
            grid_size: 50,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub n: usize,
    pub lambda: f64,
    pub mean_mse: f64,
    pub se_mse: f64,
}

/// `lambda = (n m)^{-2r/(2r+1)}`.
pub fn rate_lambda(n: usize, m: usize, r: usize) -> f64 {
    let r = r as f64;
    ((n * m) as f64).powf(-2.0 * r / (2.0 * r + 1.0))
}

pub fn rate_experiment(cfg: &RateConfig) -> Result<Vec<RatePoint>> {
    if cfg.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("n list must be increasing".into()));
    }
    cfg.loss.validate()?;
    if !(cfg.lambda_scale > 0.0 && cfg.lambda_scale.is_finite()) {
        return Err(Error::InvalidConfig("lambda scale must be positive and finite".into()));
    }
    let grid_size = cfg.grid_size.max(cfg.dense_m);
    let kv = KnotVector::equidistant(PEN_ORDER, PEN_KNOTS)?;
    let pcfg = PenaltyConfig::new(kv, PEN_R)?;
    let solver = SolverConfig::with_loss(cfg.loss);
    let mut out = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let lambda = cfg.lambda_scale * rate_lambda(n, cfg.dense_m, PEN_R);
        let sim = SimConfig {
            mean: cfg.mean,
            score: cfg.score,
            noise: cfg.noise,
            noise_scale: cfg.noise_scale,
            n,
            m_range: (cfg.dense_m, cfg.dense_m),
            grid_size,
            reps: cfg.reps,
            seed: cfg.seed.wrapping_add((n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            threads: cfg.threads,
            ..SimConfig::default()
        };
        sim.validate()?;
        let one = |rep: usize| -> Result<f64> {
            let ds = generate_dataset(&sim, rep);
            let fit = Problem::new(&pcfg, &ds.data)?.fit(lambda, &solver)?;
            mse_on_grid(&fit, &ds.truth, &ds.grid)
        };
        let run = || -> Result<Vec<f64>> { (0..sim.reps).into_par_iter().map(one).collect() };
        let mses = match sim.threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?
                .install(run)?,
            None => run()?,
        };
        let (mean_mse, se_mse) = mean_and_se(&mses);
        out.push(RatePoint {
            n,
            lambda,
            mean_mse,
            se_mse,
        });
    }
    Ok(out)
}

/// Least-squares slope of `log(mse)` against `log(n)`.
pub fn log_log_slope(points: &[RatePoint]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_mse.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
