//! Reproducing kernel of the spline space under
//! `<f, g>_{r,lambda} = <f, g> + lambda <f^(r), g^(r)>`.
//!
//! The Gram matrix `G` and penalty `P` are diagonalized simultaneously:
//! `E' G E = I` and `E' P E = diag(gamma)`. The kernel is then
//! `R(x, y) = sum_j e_j(x) e_j(y) / (1 + lambda gamma_j)`.
//!
//! `P` is never formed for the eigen-solve. Writing `P = Q' Q`, where the rows
//! of `Q` are weighted `r`-th derivatives at quadrature nodes, the `gamma_j` are
//! squared singular values of `Q L^{-T}` (`G = L L'`). This keeps the null-space
//! eigenvalues at roundoff squared instead of roundoff times `max gamma`.

use crate::basis::{KnotVector, SplineFunction};
use crate::error::{Error, Result};
use crate::penalty::{gram_matrix, penalty_matrix, penalty_root, PenaltyConfig};
use crate::quadrature::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Clamp threshold for roundoff-negative eigenvalues.
pub const GAMMA_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Diagonalization {
    kv: KnotVector,
    r: usize,
    /// Column `j` holds the B-spline coefficients of `e_j`.
    vectors: DMatrix<f64>,
    gammas: Vec<f64>,
}

pub fn diagonalize(cfg: &PenaltyConfig) -> Result<Diagonalization> {
    let kv = cfg.knots();
    let dim = kv.dim();
    let r = cfg.r();

    let g = gram_matrix(kv).to_dense();
    let chol = g.cholesky().ok_or_else(|| {
        Error::Numerical("Gram matrix is numerically singular; knots are ill-conditioned".into())
    })?;
    let l = chol.l();

    let q = penalty_root(cfg);

    // M' = L^{-1} Q'
    let mt = l
        .solve_lower_triangular(&q.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let svd = mt.transpose().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right vectors".into()))?;

    let mut order: Vec<usize> = (0..dim).collect();
    let sq: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    order.sort_by(|&a, &b| sq[a].total_cmp(&sq[b]));
    let mut v = DMatrix::<f64>::zeros(dim, dim);
    let mut gammas = Vec::with_capacity(dim);
    for (col, &idx) in order.iter().enumerate() {
        v.set_column(col, &v_t.row(idx).transpose());
        let gam = sq[idx];
        if gam < -GAMMA_CLAMP {
            return Err(Error::Numerical(format!("negative eigenvalue {gam:e}")));
        }
        gammas.push(gam.max(0.0));
    }
    let vectors = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(Diagonalization {
        kv: kv.clone(),
        r,
        vectors,
        gammas,
    })
}

impl Diagonalization {
    pub fn knots(&self) -> &KnotVector {
        &self.kv
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Ascending eigenvalues `gamma_j`.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Coefficient matrix `E`; column `j` represents `e_j`.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn basis_function(&self, j: usize) -> SplineFunction {
        SplineFunction::new(self.kv.clone(), self.vectors.column(j).iter().copied().collect())
            .expect("dimension matches the knot vector")
    }

    /// Number of eigenvalues below `tol`.
    pub fn null_count(&self, tol: f64) -> usize {
        self.gammas.iter().filter(|&&g| g < tol).count()
    }

    /// `(e_1(x), ..., e_{K+p}(x))`.
    pub fn eval_all(&self, x: f64) -> Result<Vec<f64>> {
        let p = self.kv.order();
        let mut local = vec![0.0; p];
        let first = self.kv.nonzero_basis(x, 0, &mut local)?;
        let dim = self.kv.dim();
        Ok((0..dim)
            .map(|j| {
                local
                    .iter()
                    .enumerate()
                    .map(|(k, b)| b * self.vectors[(first + k, j)])
                    .sum()
            })
            .collect())
    }

    fn shrink(&self, lambda: f64) -> impl Iterator<Item = f64> + '_ {
        self.gammas.iter().map(move |g| 1.0 / (1.0 + lambda * g))
    }

    /// B-spline coefficients of the section `x -> R(x, y)`.
    pub fn kernel_section(&self, lambda: f64, y: f64) -> Result<SplineFunction> {
        let ey = DVector::from_vec(self.eval_all(y)?);
        let scaled = DVector::from_iterator(
            ey.len(),
            ey.iter().zip(self.shrink(lambda)).map(|(e, s)| e * s),
        );
        let coef = &self.vectors * scaled;
        SplineFunction::new(self.kv.clone(), coef.as_slice().to_vec())
    }
}

pub fn kernel_value(diag: &Diagonalization, lambda: f64, x: f64, y: f64) -> Result<f64> {
    let ex = diag.eval_all(x)?;
    let ey = if x == y { ex.clone() } else { diag.eval_all(y)? };
    Ok(ex
        .iter()
        .zip(&ey)
        .zip(diag.shrink(lambda))
        .map(|((a, b), s)| a * b * s)
        .sum())
}

/// Composite Gauss-Legendre rule refined within every knot span.
#[derive(Debug, Clone)]
pub struct SpanQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SpanQuadrature {
    pub fn new(kv: &KnotVector, pieces_per_span: usize, nodes_per_piece: usize) -> Self {
        let rule = GaussLegendre::new(nodes_per_piece);
        let b = kv.breakpoints();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in b.windows(2) {
            let h = (w[1] - w[0]) / pieces_per_span as f64;
            for piece in 0..pieces_per_span {
                let a = w[0] + h * piece as f64;
                for (t, wt) in rule.mapped(a, a + h) {
                    nodes.push(t);
                    weights.push(wt);
                }
            }
        }
        Self { nodes, weights }
    }

    /// Default refinement for kernel diagnostics.
    pub fn fine(kv: &KnotVector) -> Self {
        Self::new(kv, 4, 20)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `sum_j <f, e_j>^2 / (1 + lambda gamma_j)`, i.e. the double integral of
/// `R(x, y) f(x) f(y)`.
pub fn kernel_quadratic_form(
    diag: &Diagonalization,
    lambda: f64,
    f: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    let quad = SpanQuadrature::fine(&diag.kv);
    let coeffs = project_coefficients(diag, &quad, f)?;
    Ok(coeffs
        .iter()
        .zip(diag.shrink(lambda))
        .map(|(c, s)| c * c * s)
        .sum())
}

/// `<f, e_j>` for all `j`.
pub fn project_coefficients(
    diag: &Diagonalization,
    quad: &SpanQuadrature,
    f: &dyn Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; diag.kv.dim()];
    for (&t, &w) in quad.nodes().iter().zip(quad.weights()) {
        let ft = w * f(t);
        for (o, e) in out.iter_mut().zip(diag.eval_all(t)?) {
            *o += ft * e;
        }
    }
    Ok(out)
}

/// `int |f|^2` with the same rule used by [`kernel_quadratic_form`].
pub fn l2_norm_sq(kv: &KnotVector, f: &dyn Fn(f64) -> f64) -> f64 {
    SpanQuadrature::fine(kv).integrate(|t| f(t).powi(2))
}

/// `max_x R(x, x)^{1/2} / min(K^{1/2}, lambda^{-1/(4r)})` over 1001 grid
/// points. `K` is floored at one.
pub fn sup_norm_ratio(diag: &Diagonalization, lambda: f64) -> Result<f64> {
    let k = diag.kv.interior_count().max(1) as f64;
    let rate = if lambda > 0.0 {
        lambda.powf(-1.0 / (4.0 * diag.r as f64))
    } else {
        f64::INFINITY
    };
    let denom = k.sqrt().min(rate);
    let mut best = 0.0f64;
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        best = best.max(kernel_value(diag, lambda, x, x)?.max(0.0).sqrt());
    }
    Ok(best / denom)
}

/// Maximum entries of `|E'GE - I|` and `|E'PE - diag(gamma)| / max(1, gamma_max)`.
pub fn diagonalization_residuals(diag: &Diagonalization) -> (f64, f64) {
    let g = gram_matrix(&diag.kv).to_dense();
    let cfg = PenaltyConfig::new(diag.kv.clone(), diag.r).expect("validated at construction");
    let p = penalty_matrix(&cfg).to_dense();
    let e = &diag.vectors;
    let eg = e.transpose() * g * e;
    let ep = e.transpose() * p * e;
    let scale = diag.gammas.last().copied().unwrap_or(0.0).max(1.0);
    let mut rg = 0.0f64;
    let mut rp = 0.0f64;
    for i in 0..e.ncols() {
        for j in 0..e.ncols() {
            let id = if i == j { 1.0 } else { 0.0 };
            rg = rg.max((eg[(i, j)] - id).abs());
            rp = rp.max((ep[(i, j)] - id * diag.gammas[i]).abs() / scale);
        }
    }
    (rg, rp)
}

/// `<f, g>_{r,lambda}` for splines on the diagonalization's knots.
pub fn sobolev_inner(diag: &Diagonalization, lambda: f64, f: &[f64], g: &[f64]) -> f64 {
    let cfg = PenaltyConfig::new(diag.kv.clone(), diag.r).expect("validated at construction");
    let m = gram_matrix(&diag.kv).add_scaled(lambda, &penalty_matrix(&cfg));
    f.iter().zip(m.mul_vec(g)).map(|(a, b)| a * b).sum()
}

/// Outcome of the kernel invariant checks.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    pub order: usize,
    pub interior_knots: usize,
    pub penalty_order: usize,
    pub gammas: Vec<f64>,
    pub null_count: usize,
    pub null_count_ok: bool,
    pub gram_residual: f64,
    pub penalty_residual: f64,
    pub diagonalization_ok: bool,
    pub reproducing_max_error: f64,
    pub reproducing_ok: bool,
    pub bound_max_excess: f64,
    pub bound_ok: bool,
    pub trace_max_error: f64,
    pub trace_ok: bool,
    pub min_kernel_diagonal: f64,
    pub sup_norm_ratios: Vec<(f64, f64)>,
    pub all_ok: bool,
}

pub const REPRODUCING_TOL: f64 = 1e-7;
pub const BOUND_TOL: f64 = 1e-6;
pub const TRACE_TOL: f64 = 1e-6;
pub const DIAG_TOL: f64 = 1e-8;

/// Random smooth function `sum_k a_k cos(k pi t) + b_k sin(k pi t)` with
/// decaying coefficients.
pub fn random_smooth_fn<R: Rng + ?Sized>(rng: &mut R, terms: usize) -> impl Fn(f64) -> f64 {
    let coeffs: Vec<(f64, f64)> = (0..terms)
        .map(|k| {
            let s = 1.0 / (1.0 + k as f64);
            (s * rng.random_range(-1.0..1.0), s * rng.random_range(-1.0..1.0))
        })
        .collect();
    move |t: f64| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let w = std::f64::consts::PI * k as f64;
                a * (w * t).cos() + b * (w * t).sin()
            })
            .sum()
    }
}

/// Runs every kernel invariant on `cfg` with `trials` random splines and functions.
pub fn invariant_report(cfg: &PenaltyConfig, seed: u64, trials: usize) -> Result<InvariantReport> {
    let diag = diagonalize(cfg)?;
    let kv = cfg.knots();
    let r = cfg.r();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambdas = [0.0, 1e-4, 1e-1];

    let null_count = diag.null_count(1e-8);
    let (gram_residual, penalty_residual) = diagonalization_residuals(&diag);

    let mut reproducing_max_error = 0.0f64;
    for i in 0..trials {
        let lambda = lambdas[i % lambdas.len()];
        let coef: Vec<f64> = (0..kv.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = SplineFunction::new(kv.clone(), coef.clone())?;
        let x = rng.random_range(0.0..=1.0);
        let section = diag.kernel_section(lambda, x)?;
        let lhs = sobolev_inner(&diag, lambda, &coef, section.coefficients());
        reproducing_max_error = reproducing_max_error.max((lhs - f.eval(x)?).abs());
    }

    let quad = SpanQuadrature::fine(kv);
    let mut bound_max_excess = f64::NEG_INFINITY;
    for i in 0..trials {
        let lambda = lambdas[i % lambdas.len()];
        let f = random_smooth_fn(&mut rng, 12);
        let coeffs = project_coefficients(&diag, &quad, &f)?;
        let qf: f64 = coeffs
            .iter()
            .zip(diag.shrink(lambda))
            .map(|(c, s)| c * c * s)
            .sum();
        let norm = quad.integrate(|t| f(t).powi(2));
        bound_max_excess = bound_max_excess.max(qf - norm);
    }

    let mut trace_max_error = 0.0f64;
    let mut min_kernel_diagonal = f64::INFINITY;
    for &lambda in &lambdas {
        let mut integral = 0.0;
        for (&t, &w) in quad.nodes().iter().zip(quad.weights()) {
            let v = kernel_value(&diag, lambda, t, t)?;
            min_kernel_diagonal = min_kernel_diagonal.min(v);
            integral += w * v;
        }
        let want: f64 = diag.shrink(lambda).sum();
        trace_max_error = trace_max_error.max((integral - want).abs());
    }

    let sup_norm_ratios = [0.0, 1e-6, 1e-4, 1e-2]
        .iter()
        .map(|&l| Ok((l, sup_norm_ratio(&diag, l)?)))
        .collect::<Result<Vec<_>>>()?;

    let null_count_ok = null_count == r;
    let diagonalization_ok = gram_residual < DIAG_TOL && penalty_residual < DIAG_TOL;
    let reproducing_ok = reproducing_max_error < REPRODUCING_TOL;
    let bound_ok = bound_max_excess <= BOUND_TOL;
    let trace_ok = trace_max_error < TRACE_TOL;
    Ok(InvariantReport {
        order: kv.order(),
        interior_knots: kv.interior_count(),
        penalty_order: r,
        gammas: diag.gammas.clone(),
        null_count,
        null_count_ok,
        gram_residual,
        penalty_residual,
        diagonalization_ok,
        reproducing_max_error,
        reproducing_ok,
        bound_max_excess,
        bound_ok,
        trace_max_error,
        trace_ok,
        min_kernel_diagonal,
        sup_norm_ratios,
        all_ok: null_count_ok && diagonalization_ok && reproducing_ok && bound_ok && trace_ok,
    })
}
