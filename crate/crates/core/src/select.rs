//! Penalty selection by weighted generalized cross validation.
//!
//! For a fit at `lambda` with converged solver weights `w`, the score is
//!
//! ```text
//! GCV(lambda) = sum_ij omega_ij w_ij r_ij^2 / (1 - tr(H_lambda) / N)^2
//! ```
//!
//! with `omega_ij = 1/(n m_i)` and `H_lambda` the weighted hat matrix at the
//! same weights. For the square loss this is ordinary weighted GCV.

use crate::data::LongData;
use crate::error::{Error, Result};
use crate::penalty::PenaltyConfig;
use crate::solver::{FitResult, Problem, SolverConfig};
use std::str::FromStr;

pub const AUTO_GRID_SIZE: usize = 40;
pub const AUTO_GRID_MIN: f64 = 1e-9;
pub const AUTO_GRID_MAX: f64 = 1e1;
/// Relative tolerance for treating two scores as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Candidate penalty parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaGrid {
    /// 40 log-spaced values in `[1e-9, 1e1]`.
    Auto,
    Explicit(Vec<f64>),
    LogSpaced { start: f64, stop: f64, count: usize },
}

impl LambdaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaGrid::Auto => log_space(AUTO_GRID_MIN, AUTO_GRID_MAX, AUTO_GRID_SIZE),
            LambdaGrid::Explicit(v) => v.clone(),
            LambdaGrid::LogSpaced { start, stop, count } => log_space(*start, *stop, *count),
        }
    }

    /// A single fixed value rather than a search.
    pub fn fixed(&self) -> Option<f64> {
        match self {
            LambdaGrid::Explicit(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }
}

pub fn log_space(start: f64, stop: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    let (a, b) = (start.ln(), stop.ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                start
            } else if i + 1 == count {
                stop
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Parses `auto`, a single value, or `start:stop:count` (log-spaced).
impl FromStr for LambdaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "auto" {
            return Ok(LambdaGrid::Auto);
        }
        let bad = || Error::InvalidConfig(format!("invalid lambda specification `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [v] => {
                let v: f64 = v.parse().map_err(|_| bad())?;
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(bad());
                }
                Ok(LambdaGrid::Explicit(vec![v]))
            }
            [a, b, c] => {
                let start: f64 = a.parse().map_err(|_| bad())?;
                let stop: f64 = b.parse().map_err(|_| bad())?;
                let count: usize = c.parse().map_err(|_| bad())?;
                if !(start > 0.0 && stop > 0.0) || count == 0 || !start.is_finite() || !stop.is_finite() {
                    return Err(bad());
                }
                Ok(LambdaGrid::LogSpaced { start, stop, count })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcvResult {
    pub lambda_grid: Vec<f64>,
    /// `+inf` marks a singular grid point or `tr(H)/N >= 1`.
    pub scores: Vec<f64>,
    pub best_lambda: f64,
    pub best_fit: FitResult,
}

/// Score of an existing fit.
pub fn gcv_of_fit(problem: &Problem, fit: &FitResult) -> f64 {
    let n = problem.n_obs() as f64;
    let rss: f64 = fit
        .residuals
        .iter()
        .zip(&fit.weights)
        .zip(problem.omega())
        .map(|((r, w), o)| o * w * r * r)
        .sum();
    let ratio = fit.edf / n;
    if ratio >= 1.0 {
        f64::INFINITY
    } else {
        rss / (1.0 - ratio).powi(2)
    }
}

impl Problem {
    pub fn gcv(&self, lambda: f64, solver: &SolverConfig) -> Result<(f64, FitResult)> {
        let fit = self.fit(lambda, solver)?;
        Ok((gcv_of_fit(self, &fit), fit))
    }

    /// Scores within [`TIE_TOLERANCE`] times the weighted response energy of
    /// the minimum count as ties and go to the largest such `lambda`.
    pub fn select_lambda(&self, grid: &LambdaGrid, solver: &SolverConfig) -> Result<GcvResult> {
        let lambda_grid = grid.values();
        if lambda_grid.is_empty() {
            return Err(Error::InvalidConfig("empty lambda grid".into()));
        }
        let mut scores = Vec::with_capacity(lambda_grid.len());
        let mut fits = Vec::with_capacity(lambda_grid.len());
        let mut last_err = None;
        for &lambda in &lambda_grid {
            match self.gcv(lambda, solver) {
                Ok((score, fit)) => {
                    scores.push(score);
                    fits.push(Some(fit));
                }
                Err(e @ Error::SingularSystem(_)) => {
                    log::debug!("lambda={lambda:e} singular: {e}");
                    scores.push(f64::INFINITY);
                    fits.push(None);
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return Err(last_err.unwrap_or_else(|| {
                Error::SingularSystem("no grid point gives a finite score".into())
            }));
        }
        let energy: f64 = self
            .responses()
            .iter()
            .zip(self.omega())
            .map(|(y, o)| o * y * y)
            .sum();
        let tol = TIE_TOLERANCE * energy;
        let best = (0..lambda_grid.len())
            .filter(|&i| scores[i] <= min + tol)
            .max_by(|&a, &b| lambda_grid[a].total_cmp(&lambda_grid[b]))
            .expect("the minimum is attained");
        Ok(GcvResult {
            best_lambda: lambda_grid[best],
            best_fit: fits[best].take().expect("finite score has a fit"),
            lambda_grid,
            scores,
        })
    }
}

pub fn gcv_score(
    cfg: &PenaltyConfig,
    data: &LongData,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<f64> {
    Ok(Problem::new(cfg, data)?.gcv(lambda, solver)?.0)
}

pub fn select_lambda(
    cfg: &PenaltyConfig,
    data: &LongData,
    grid: &LambdaGrid,
    solver: &SolverConfig,
) -> Result<GcvResult> {
    Problem::new(cfg, data)?.select_lambda(grid, solver)
}
