//! B-spline spaces on `[0, 1]`.
//!
//! A [`KnotVector`] of order `p` with `K` interior knots spans a space of
//! dimension `K + p`. Evaluation follows the Cox-de Boor recursion with the
//! `0/0 = 0` convention, half-open knot spans `[x_i, x_{i+1})` and a closed
//! last span, so that the last basis function equals one at `t = 1`.

use crate::data::LongData;
use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Augmented knot sequence with boundary knots of multiplicity `order`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    order: usize,
    interior_count: usize,
    knots: Vec<f64>,
}

/// How interior knots are placed by [`make_knots`].
#[derive(Debug, Clone, PartialEq)]
pub enum KnotPlacement {
    /// Interior knot `j` sits at `j / (K + 1)`.
    Equidistant,
    Explicit(Vec<f64>),
}

/// Builds a knot vector of order `p` with `k` interior knots.
pub fn make_knots(p: usize, k: usize, placement: &KnotPlacement) -> Result<KnotVector> {
    match placement {
        KnotPlacement::Equidistant => KnotVector::equidistant(p, k),
        KnotPlacement::Explicit(interior) => {
            if interior.len() != k {
                return Err(Error::KnotCountMismatch {
                    expected: k,
                    found: interior.len(),
                });
            }
            KnotVector::new(p, interior)
        }
    }
}

impl KnotVector {
    pub fn new(order: usize, interior: &[f64]) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidOrder(order));
        }
        for (i, &x) in interior.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::KnotOutOfRange { index: i, value: x });
            }
            if i > 0 && x <= interior[i - 1] {
                return Err(Error::NonIncreasingKnots { index: i, value: x });
            }
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * order);
        knots.extend(std::iter::repeat_n(0.0, order));
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(Self {
            order,
            interior_count: interior.len(),
            knots,
        })
    }

    pub fn equidistant(order: usize, interior_count: usize) -> Result<Self> {
        let step = (interior_count + 1) as f64;
        let interior: Vec<f64> = (1..=interior_count).map(|j| j as f64 / step).collect();
        Self::new(order, &interior)
    }

    /// Order `p` (degree `p - 1`).
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn degree(&self) -> usize {
        self.order - 1
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    /// Dimension `K + p` of the spline space.
    pub fn dim(&self) -> usize {
        self.interior_count + self.order
    }

    /// Full augmented sequence of length `K + 2p`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior(&self) -> &[f64] {
        &self.knots[self.order..self.order + self.interior_count]
    }

    /// Largest distance between consecutive distinct knots.
    pub fn mesh_size(&self) -> f64 {
        self.breakpoints()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Distinct knot values `0 = b_0 < ... < b_{K+1} = 1`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior_count + 2);
        b.push(0.0);
        b.extend_from_slice(self.interior());
        b.push(1.0);
        b
    }

    /// Knot averages; the coefficients of the identity function `t`.
    pub fn greville(&self) -> Vec<f64> {
        let d = self.degree();
        if d == 0 {
            return (0..self.dim())
                .map(|j| 0.5 * (self.knots[j] + self.knots[j + 1]))
                .collect();
        }
        (0..self.dim())
            .map(|j| self.knots[j + 1..=j + d].iter().sum::<f64>() / d as f64)
            .collect()
    }

    /// Index `i` of the knot span `[x_i, x_{i+1})` containing `t`; `t = 1`
    /// maps to the last nonempty span.
    pub fn find_span(&self, t: f64) -> usize {
        let lo = self.order - 1;
        let hi = self.interior_count + self.order - 1;
        let count = self.knots.partition_point(|&x| x <= t);
        count.saturating_sub(1).clamp(lo, hi)
    }

    /// Evaluates the `order` possibly nonzero basis functions (or their
    /// derivatives) at `t`. Returns the index of the first one.
    pub fn nonzero_basis(&self, t: f64, deriv: usize, out: &mut [f64]) -> Result<usize> {
        self.check_eval(t, deriv)?;
        let span = self.find_span(t);
        self.eval_span(span, t, deriv, out);
        Ok(span + 1 - self.order)
    }

    pub(crate) fn check_eval(&self, t: f64, deriv: usize) -> Result<()> {
        if deriv >= self.order {
            return Err(Error::DerivativeTooHigh {
                deriv,
                order: self.order,
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::PointOutOfRange(t));
        }
        Ok(())
    }

    /// Cox-de Boor on a known span. `out[l]` receives basis `span - d + l`.
    /// Derivatives raise the order of lower-degree values by the derivative
    /// recurrence.
    pub(crate) fn eval_span(&self, span: usize, t: f64, deriv: usize, out: &mut [f64]) {
        let d = self.degree();
        let x = &self.knots;
        debug_assert_eq!(out.len(), self.order);
        out.fill(0.0);
        out[d] = 1.0;
        let value_degree = d - deriv;
        for q in 1..=value_degree {
            for l in (d - q)..=d {
                let j = span - d + l;
                let left = ratio(t - x[j], x[j + q] - x[j]) * out[l];
                let right = if l < d {
                    ratio(x[j + q + 1] - t, x[j + q + 1] - x[j + 1]) * out[l + 1]
                } else {
                    0.0
                };
                out[l] = left + right;
            }
        }
        for q in (value_degree + 1)..=d {
            let qf = q as f64;
            for l in (d - q)..=d {
                let j = span - d + l;
                let left = ratio(qf * out[l], x[j + q] - x[j]);
                let right = if l < d {
                    ratio(qf * out[l + 1], x[j + q + 1] - x[j + 1])
                } else {
                    0.0
                };
                out[l] = left - right;
            }
        }
    }

    /// Whether `B_j(t) > 0` under the evaluation conventions above.
    pub fn basis_positive_at(&self, j: usize, t: f64) -> bool {
        let lo = self.knots[j];
        let hi = self.knots[j + self.order];
        let last = j + 1 == self.dim();
        if last && t == 1.0 {
            return true;
        }
        if self.order == 1 {
            return lo <= t && t < hi;
        }
        (lo < t && t < hi) || (j == 0 && t == 0.0)
    }

    fn not_left_of_support(&self, j: usize, t: f64) -> bool {
        if j == 0 {
            return true;
        }
        if self.order == 1 {
            t >= self.knots[j]
        } else {
            t > self.knots[j]
        }
    }
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// All `K + p` basis functions (or derivatives) at `t`.
pub fn eval_bsplines(kv: &KnotVector, t: f64, deriv: usize) -> Result<Vec<f64>> {
    let mut local = vec![0.0; kv.order()];
    let first = kv.nonzero_basis(t, deriv, &mut local)?;
    let mut full = vec![0.0; kv.dim()];
    full[first..first + kv.order()].copy_from_slice(&local);
    Ok(full)
}

/// Spline `sum_j c_j B_j` over a knot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFunction {
    basis: KnotVector,
    coefficients: Vec<f64>,
}

impl SplineFunction {
    pub fn new(basis: KnotVector, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != basis.dim() {
            return Err(Error::LengthMismatch {
                left: coefficients.len(),
                right: basis.dim(),
            });
        }
        Ok(Self {
            basis,
            coefficients,
        })
    }

    pub fn basis(&self) -> &KnotVector {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        self.eval_deriv(t, 0)
    }

    pub fn eval_deriv(&self, t: f64, deriv: usize) -> Result<f64> {
        let mut local = vec![0.0; self.basis.order()];
        let first = self.basis.nonzero_basis(t, deriv, &mut local)?;
        Ok(local
            .iter()
            .zip(&self.coefficients[first..])
            .map(|(b, c)| b * c)
            .sum())
    }

    /// Evaluates on many points; points outside `[0, 1]` are errors.
    pub fn eval_many(&self, ts: &[f64]) -> Result<Vec<f64>> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }
}

/// Design matrix `B_j^{(deriv)}(T_i)` stored by distinct sampling time.
///
/// Each distinct time keeps its `order` nonzero entries and first column;
/// observations point at their time. Weighted cross products therefore cost
/// `O(N + T p^2)` rather than `O(N p^2)`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    ncols: usize,
    order: usize,
    times: Vec<f64>,
    first: Vec<usize>,
    values: Vec<f64>,
    obs_time: Vec<usize>,
}

impl DesignMatrix {
    pub fn from_times(kv: &KnotVector, ts: &[f64], deriv: usize) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::EmptyData);
        }
        for &t in ts {
            kv.check_eval(t, deriv)?;
        }
        let times = distinct_sorted(ts);
        let obs_time = ts
            .iter()
            .map(|t| times.partition_point(|s| s < t))
            .collect();
        let p = kv.order();
        let mut first = Vec::with_capacity(times.len());
        let mut values = vec![0.0; times.len() * p];
        for (i, &t) in times.iter().enumerate() {
            let span = kv.find_span(t);
            kv.eval_span(span, t, deriv, &mut values[i * p..(i + 1) * p]);
            first.push(span + 1 - p);
        }
        Ok(Self {
            ncols: kv.dim(),
            order: p,
            times,
            first,
            values,
            obs_time,
        })
    }

    /// Number of observations.
    pub fn nrows(&self) -> usize {
        self.obs_time.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn distinct_times(&self) -> &[f64] {
        &self.times
    }

    /// Index into [`Self::distinct_times`] for each observation.
    pub fn time_index(&self) -> &[usize] {
        &self.obs_time
    }

    /// Nonzero block of the row at a distinct time: first column and values.
    pub fn time_row(&self, ti: usize) -> (usize, &[f64]) {
        let p = self.order;
        (self.first[ti], &self.values[ti * p..(ti + 1) * p])
    }

    /// Nonzero block of the row for observation `obs`.
    pub fn row(&self, obs: usize) -> (usize, &[f64]) {
        self.time_row(self.obs_time[obs])
    }

    /// Spline values at each distinct time.
    pub fn eval_distinct(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.times.len())
            .map(|ti| {
                let (f, v) = self.time_row(ti);
                v.iter().zip(&coef[f..]).map(|(b, c)| b * c).sum()
            })
            .collect()
    }

    /// `B c`, one entry per observation.
    pub fn mul_vec(&self, coef: &[f64]) -> Vec<f64> {
        let at_times = self.eval_distinct(coef);
        self.obs_time.iter().map(|&ti| at_times[ti]).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for obs in 0..self.nrows() {
            let (f, v) = self.row(obs);
            for (l, &b) in v.iter().enumerate() {
                m[(obs, f + l)] = b;
            }
        }
        m
    }
}

pub(crate) fn distinct_sorted(ts: &[f64]) -> Vec<f64> {
    let mut times = ts.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Design matrix for the sampling times of `data`.
pub fn design_matrix(kv: &KnotVector, data: &LongData, deriv: usize) -> Result<DesignMatrix> {
    DesignMatrix::from_times(kv, &data.times(), deriv)
}

/// Outcome of the interlacing check between design points and knots.
#[derive(Debug, Clone, PartialEq)]
pub struct ExistenceCheck {
    pub satisfied: bool,
    /// Strictly increasing times `T_{s_1} < ... < T_{s_{K+p}}` with
    /// `B_j(T_{s_j}) > 0`; partial when unsatisfied.
    pub witness_times: Vec<f64>,
    /// For each witness time, the first record carrying it.
    pub witness_records: Vec<usize>,
    /// First basis index (0-based) left without a design point.
    pub first_unmatched: Option<usize>,
}

/// Searches for `K + p` distinct sampling times interlacing the B-spline
/// supports. Ties among times are collapsed before the search.
pub fn check_existence(kv: &KnotVector, data: &LongData) -> ExistenceCheck {
    check_existence_times(kv, &data.times())
}

pub fn check_existence_times(kv: &KnotVector, ts: &[f64]) -> ExistenceCheck {
    let times = distinct_sorted(ts);
    let mut witness_times = Vec::with_capacity(kv.dim());
    let mut first_unmatched = None;
    let mut idx = 0;
    for j in 0..kv.dim() {
        while idx < times.len() && !kv.not_left_of_support(j, times[idx]) {
            idx += 1;
        }
        if idx < times.len() && kv.basis_positive_at(j, times[idx]) {
            witness_times.push(times[idx]);
            idx += 1;
        } else {
            first_unmatched = Some(j);
            break;
        }
    }
    let witness_records = witness_times
        .iter()
        .map(|w| ts.iter().position(|t| t == w).unwrap_or(0))
        .collect();
    ExistenceCheck {
        satisfied: first_unmatched.is_none(),
        witness_times,
        witness_records,
        first_unmatched,
    }
}
