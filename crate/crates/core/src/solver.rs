//! Penalized spline M-estimation by iteratively reweighted least squares.
//!
//! The objective is
//!
//! ```text
//! L(f) = (1/n) sum_i (1/m_i) sum_j rho(Y_ij - f(T_ij)) + lambda int |f^(r)|^2
//! ```
//!
//! over the spline space. Each IRLS step solves
//! `(B' Omega W B + lambda P) a = B' Omega W y` with `Omega = diag(1/(n m_i))`
//! and `W` the loss weights `psi(x) / (2x)` at the current residuals. The
//! iteration is a majorize-minimize scheme, so the (epsilon-smoothed)
//! objective never increases.

use crate::banded::{BandCholesky, SymBandMatrix};
use crate::basis::{
    check_existence, design_matrix, DesignMatrix, ExistenceCheck, KnotVector, SplineFunction,
};
use crate::data::LongData;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::penalty::{penalty_matrix, penalty_root, PenaltyConfig};
use nalgebra::{DMatrix, DVector};

/// Linear solver used for the inner weighted least-squares steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Banded Cholesky, `O((K + p) p^2)` per solve.
    #[default]
    Banded,
    /// Dense Cholesky, `O((K + p)^3)` per solve.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Relative L2 change of the coefficients that stops the iteration.
    pub tolerance: f64,
    pub loss: LossSpec,
    pub backend: Backend,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-8,
            loss: LossSpec::Square,
            backend: Backend::Banded,
        }
    }
}

impl SolverConfig {
    pub fn with_loss(loss: LossSpec) -> Self {
        Self {
            loss,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spline: SplineFunction,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Trace of the weighted hat matrix at the final weights.
    pub edf: f64,
    /// `L_n` with the unsmoothed loss.
    pub objective: f64,
    /// Solver weights `psi(r) / (2r)` at the final residuals.
    pub weights: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl FitResult {
    pub fn coefficients(&self) -> &[f64] {
        self.spline.coefficients()
    }

    /// Turns a non-converged fit into [`Error::NoConvergence`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations,
            })
        }
    }
}

/// Data, design and penalty assembled once and reused across fits.
#[derive(Debug, Clone)]
pub struct Problem {
    kv: KnotVector,
    cfg: Option<PenaltyConfig>,
    design: DesignMatrix,
    penalty: SymBandMatrix,
    y: Vec<f64>,
    omega: Vec<f64>,
    existence: ExistenceCheck,
}

enum Factor {
    Band(BandCholesky),
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
}

impl Factor {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Factor::Band(c) => c.solve(b),
            Factor::Dense(c) => c.solve(&DVector::from_column_slice(b)).as_slice().to_vec(),
        }
    }

    fn trace_solve(&self, m: &SymBandMatrix) -> f64 {
        match self {
            Factor::Band(c) => c.trace_solve(m),
            Factor::Dense(c) => c.solve(&m.to_dense()).trace(),
        }
    }
}

impl Problem {
    pub fn new(cfg: &PenaltyConfig, data: &LongData) -> Result<Self> {
        let mut problem = Self::unpenalized(cfg.knots(), data)?;
        problem.penalty = penalty_matrix(cfg);
        problem.cfg = Some(cfg.clone());
        Ok(problem)
    }

    /// Problem without roughness penalty; only `lambda = 0` is meaningful.
    pub fn unpenalized(kv: &KnotVector, data: &LongData) -> Result<Self> {
        let design = design_matrix(kv, data, 0)?;
        Ok(Self {
            kv: kv.clone(),
            cfg: None,
            penalty: SymBandMatrix::zeros(kv.dim(), kv.order() - 1),
            y: data.values(),
            omega: data.obs_weights(),
            existence: check_existence(kv, data),
            design,
        })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.kv
    }

    pub fn penalty_config(&self) -> Option<&PenaltyConfig> {
        self.cfg.as_ref()
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn penalty(&self) -> &SymBandMatrix {
        &self.penalty
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    /// Observation weights `1 / (n m_i)`.
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn existence(&self) -> &ExistenceCheck {
        &self.existence
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// `B' Omega W B` and `B' Omega W y` for per-observation weights `w`.
    pub fn weighted_system(&self, w: &[f64]) -> (SymBandMatrix, Vec<f64>) {
        let d = &self.design;
        let nt = d.distinct_times().len();
        let mut mass = vec![0.0; nt];
        let mut load = vec![0.0; nt];
        for (obs, &ti) in d.time_index().iter().enumerate() {
            let v = self.omega[obs] * w[obs];
            mass[ti] += v;
            load[ti] += v * self.y[obs];
        }
        let p = d.order();
        let mut btb = SymBandMatrix::zeros(d.ncols(), p - 1);
        let mut rhs = vec![0.0; d.ncols()];
        for ti in 0..nt {
            let (first, row) = d.time_row(ti);
            for i in 0..p {
                let bi = row[i];
                if bi == 0.0 {
                    continue;
                }
                rhs[first + i] += load[ti] * bi;
                let mi = mass[ti] * bi;
                for k in 0..=i {
                    btb.add(first + i, first + k, mi * row[k]);
                }
            }
        }
        (btb, rhs)
    }

    fn check_solvable(&self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        if lambda == 0.0 && !self.existence.satisfied {
            let j = self.existence.first_unmatched.unwrap_or(0);
            return Err(Error::SingularSystem(format!(
                "lambda = 0 and no sampling point can be matched to basis function {} \
                 (interlacing condition fails after {} matches)",
                j + 1,
                self.existence.witness_times.len()
            )));
        }
        let r = self.cfg.as_ref().map_or(0, |c| c.r());
        let distinct = self.design.distinct_times().len();
        if lambda > 0.0 && distinct < r {
            return Err(Error::SingularSystem(format!(
                "{distinct} distinct sampling times cannot determine the {r}-dimensional penalty null space"
            )));
        }
        Ok(())
    }

    fn factor(&self, system: &SymBandMatrix, backend: Backend) -> Result<Factor> {
        match backend {
            Backend::Banded => Ok(Factor::Band(system.cholesky()?)),
            Backend::Dense => system
                .to_dense()
                .cholesky()
                .map(Factor::Dense)
                .ok_or_else(|| Error::SingularSystem("dense Cholesky failed".into())),
        }
    }

    fn solve_weighted(
        &self,
        w: &[f64],
        lambda: f64,
        backend: Backend,
    ) -> Result<(Vec<f64>, Factor, SymBandMatrix)> {
        let (btb, rhs) = self.weighted_system(w);
        let system = btb.add_scaled(lambda, &self.penalty);
        let factor = self.factor(&system, backend)?;
        Ok((factor.solve(&rhs), factor, btb))
    }

    pub fn residuals(&self, coef: &[f64]) -> Vec<f64> {
        let at_times = self.design.eval_distinct(coef);
        self.design
            .time_index()
            .iter()
            .zip(&self.y)
            .map(|(&ti, &y)| y - at_times[ti])
            .collect()
    }

    /// Roughness `a' P a`.
    pub fn roughness(&self, coef: &[f64]) -> f64 {
        self.penalty.quad_form(coef)
    }

    /// `L_n` with the true loss.
    pub fn objective(&self, loss: &LossSpec, coef: &[f64], lambda: f64) -> f64 {
        let r = self.residuals(coef);
        let data: f64 = r
            .iter()
            .zip(&self.omega)
            .map(|(&x, &o)| o * loss.rho(x))
            .sum();
        data + lambda * self.roughness(coef)
    }

    /// `L_n` with the loss that IRLS actually minimizes.
    pub fn smoothed_objective(&self, loss: &LossSpec, coef: &[f64], lambda: f64) -> f64 {
        let r = self.residuals(coef);
        let data: f64 = r
            .iter()
            .zip(&self.omega)
            .map(|(&x, &o)| o * loss.smoothed_rho(x))
            .sum();
        data + lambda * self.roughness(coef)
    }

    /// Gradient of [`Self::smoothed_objective`] in the coefficients.
    pub fn smoothed_gradient(&self, loss: &LossSpec, coef: &[f64], lambda: f64) -> Vec<f64> {
        let r = self.residuals(coef);
        let nt = self.design.distinct_times().len();
        let mut load = vec![0.0; nt];
        for (obs, &ti) in self.design.time_index().iter().enumerate() {
            load[ti] += self.omega[obs] * loss.smoothed_psi(r[obs]);
        }
        let mut grad: Vec<f64> = self
            .penalty
            .mul_vec(coef)
            .into_iter()
            .map(|v| 2.0 * lambda * v)
            .collect();
        for (ti, &l) in load.iter().enumerate() {
            let (first, row) = self.design.time_row(ti);
            for (k, &b) in row.iter().enumerate() {
                grad[first + k] -= l * b;
            }
        }
        grad
    }

    /// `tr((B' Omega W B + lambda P)^{-1} B' Omega W B)`.
    ///
    /// When the penalty swamps the data term, the direct factorization loses
    /// the penalty null space; the trace is then taken from the generalized
    /// eigenvalues `mu_j` of `(P, B' Omega W B)` as `sum_j 1 / (1 + lambda mu_j)`.
    pub fn hat_trace(&self, lambda: f64, w: &[f64], backend: Backend) -> Result<f64> {
        self.check_solvable(lambda)?;
        let (btb, _) = self.weighted_system(w);
        let max_diag = |m: &SymBandMatrix| (0..m.size()).map(|i| m.get(i, i)).fold(0.0, f64::max);
        let dominated = lambda * max_diag(&self.penalty) > SPECTRAL_RATIO * max_diag(&btb);
        if dominated && self.existence.satisfied {
            if let Some(cfg) = &self.cfg {
                return spectral_trace(&btb, cfg, lambda);
            }
        }
        let system = btb.add_scaled(lambda, &self.penalty);
        Ok(self.factor(&system, backend)?.trace_solve(&btb))
    }

    pub fn fit(&self, lambda: f64, solver: &SolverConfig) -> Result<FitResult> {
        self.fit_observed(lambda, solver, &mut |_, _| {})
    }

    /// Fits and reports every coefficient iterate to `observer`, starting
    /// with the square-loss solution as iterate 1.
    pub fn fit_observed(
        &self,
        lambda: f64,
        solver: &SolverConfig,
        observer: &mut dyn FnMut(usize, &[f64]),
    ) -> Result<FitResult> {
        solver.validate()?;
        self.check_solvable(lambda)?;
        let loss = solver.loss;
        let ones = vec![1.0; self.n_obs()];
        let (mut coef, mut factor, mut btb) = self.solve_weighted(&ones, lambda, solver.backend)?;
        let mut iterations = 1;
        observer(iterations, &coef);
        let mut converged = loss.is_square();
        let mut weights = ones;
        while !converged && iterations < solver.max_iterations {
            let r = self.residuals(&coef);
            weights = r.iter().map(|&x| loss.solver_weight(x)).collect();
            let (next, f, b) = self.solve_weighted(&weights, lambda, solver.backend)?;
            iterations += 1;
            observer(iterations, &next);
            let change = relative_change(&coef, &next);
            coef = next;
            factor = f;
            btb = b;
            if change < solver.tolerance {
                converged = true;
            }
        }
        log::debug!(
            "fit lambda={lambda:e} loss={loss} iterations={iterations} converged={converged}"
        );
        let residuals = self.residuals(&coef);
        if !loss.is_square() {
            weights = residuals.iter().map(|&x| loss.solver_weight(x)).collect();
            let (b, _) = self.weighted_system(&weights);
            let system = b.add_scaled(lambda, &self.penalty);
            factor = self.factor(&system, solver.backend)?;
            btb = b;
        }
        let edf = factor.trace_solve(&btb);
        let objective = self.objective(&loss, &coef, lambda);
        Ok(FitResult {
            spline: SplineFunction::new(self.kv.clone(), coef)?,
            lambda,
            iterations,
            converged,
            edf,
            objective,
            weights,
            residuals,
        })
    }
}

/// Penalty-to-data scale above which [`Problem::hat_trace`] switches to the
/// eigenvalue form.
const SPECTRAL_RATIO: f64 = 1e6;

fn spectral_trace(btb: &SymBandMatrix, cfg: &PenaltyConfig, lambda: f64) -> Result<f64> {
    let chol = btb
        .to_dense()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("weighted Gram matrix is not positive definite".into()))?;
    let q = penalty_root(cfg);
    // singular values of Q L^{-T} are the roots of the generalized eigenvalues
    let mt = chol
        .l()
        .solve_lower_triangular(&q.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let sv = mt.transpose().singular_values();
    Ok(sv.iter().map(|s| 1.0 / (1.0 + lambda * s * s)).sum())
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let diff: f64 = old.iter().zip(new).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = new.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

/// Minimizes `L_n` at a fixed `lambda`.
pub fn fit_penalized(
    cfg: &PenaltyConfig,
    data: &LongData,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<FitResult> {
    Problem::new(cfg, data)?.fit(lambda, solver)
}

/// Minimizes the unpenalized data term; errors unless the design
/// interlaces the knots.
pub fn fit_unpenalized(kv: &KnotVector, data: &LongData, solver: &SolverConfig) -> Result<FitResult> {
    Problem::unpenalized(kv, data)?.fit(0.0, solver)
}

/// Effective degrees of freedom for per-observation solver weights `w`.
pub fn hat_trace(cfg: &PenaltyConfig, data: &LongData, lambda: f64, w: &[f64]) -> Result<f64> {
    if w.len() != data.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: data.len(),
        });
    }
    Problem::new(cfg, data)?.hat_trace(lambda, w, Backend::Banded)
}

/// `L_n(f)` for a spline over the configured knots.
pub fn evaluate_objective(
    cfg: &PenaltyConfig,
    data: &LongData,
    spline: &SplineFunction,
    lambda: f64,
    loss: &LossSpec,
) -> Result<f64> {
    if spline.basis() != cfg.knots() {
        return Err(Error::InvalidConfig(
            "spline and penalty use different knot vectors".into(),
        ));
    }
    Ok(Problem::new(cfg, data)?.objective(loss, spline.coefficients(), lambda))
}

/// Dense `B' Omega W B + lambda P`; handy for cross-checks.
pub fn dense_system(problem: &Problem, w: &[f64], lambda: f64) -> DMatrix<f64> {
    let (btb, _) = problem.weighted_system(w);
    btb.add_scaled(lambda, problem.penalty()).to_dense()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_data() -> LongData {
        let ts: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let ys: Vec<f64> = ts
            .iter()
            .enumerate()
            .map(|(i, t)| (6.0 * t).sin() + if i % 7 == 0 { 3.0 } else { 0.1 * (i as f64).cos() })
            .collect();
        let ids: Vec<i64> = (0..40).map(|i| i % 4).collect();
        LongData::from_columns(&ids, &ts, &ys).unwrap()
    }

    #[test]
    fn square_loss_single_iteration() {
        let kv = KnotVector::equidistant(4, 6).unwrap();
        let cfg = PenaltyConfig::new(kv, 2).unwrap();
        let fit = fit_penalized(&cfg, &small_data(), 1e-4, &SolverConfig::default()).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
        assert!(fit.edf > 2.0 && fit.edf < 10.0);
    }

    #[test]
    fn lad_constant_is_median() {
        let kv = KnotVector::new(1, &[]).unwrap();
        let data = LongData::from_columns(&[1, 1, 1], &[0.1, 0.5, 0.9], &[1.0, 2.0, 9.0]).unwrap();
        let solver = SolverConfig::with_loss(LossSpec::absolute());
        let fit = fit_unpenalized(&kv, &data, &solver).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients()[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn singular_when_existence_fails() {
        let kv = KnotVector::equidistant(4, 10).unwrap();
        let cfg = PenaltyConfig::new(kv, 2).unwrap();
        let ts: Vec<f64> = (0..30).map(|i| 0.1 * i as f64 / 30.0).collect();
        let data = LongData::from_columns(&vec![1; 30], &ts, &vec![0.0; 30]).unwrap();
        assert!(matches!(
            fit_penalized(&cfg, &data, 0.0, &SolverConfig::default()),
            Err(Error::SingularSystem(_))
        ));
        assert!(fit_penalized(&cfg, &data, 1e-3, &SolverConfig::default()).is_ok());
    }

    #[test]
    fn non_convergence_is_reported() {
        let kv = KnotVector::equidistant(4, 6).unwrap();
        let cfg = PenaltyConfig::new(kv, 2).unwrap();
        let solver = SolverConfig {
            loss: LossSpec::absolute(),
            max_iterations: 2,
            ..SolverConfig::default()
        };
        let fit = fit_penalized(&cfg, &small_data(), 1e-4, &solver).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
        assert!(matches!(
            fit.require_converged(),
            Err(Error::NoConvergence { iterations: 2 })
        ));
    }
}
