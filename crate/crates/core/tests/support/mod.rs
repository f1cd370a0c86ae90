#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pensplinem::{KnotVector, LongData, PenaltyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Textbook Cox-de Boor recursion, one basis function at a time.
pub fn naive_bspline(knots: &[f64], j: usize, p: usize, t: f64) -> f64 {
    if p == 1 {
        let (a, b) = (knots[j], knots[j + 1]);
        let last = *knots.last().unwrap();
        if a <= t && t < b {
            return 1.0;
        }
        // closed last span
        if t == last && b == last && a < b {
            return 1.0;
        }
        return 0.0;
    }
    let mut v = 0.0;
    let d1 = knots[j + p - 1] - knots[j];
    if d1 > 0.0 {
        v += (t - knots[j]) / d1 * naive_bspline(knots, j, p - 1, t);
    }
    let d2 = knots[j + p] - knots[j + 1];
    if d2 > 0.0 {
        v += (knots[j + p] - t) / d2 * naive_bspline(knots, j + 1, p - 1, t);
    }
    v
}

pub fn naive_all(kv: &KnotVector, t: f64) -> Vec<f64> {
    (0..kv.dim())
        .map(|j| naive_bspline(kv.knots(), j, kv.order(), t))
        .collect()
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        // stop at the roundoff floor as well as at the tolerance
        let floor = 64.0 * f64::EPSILON * (b - a) * (fa.abs() + flm.abs() + fm.abs() + frm.abs() + fb.abs());
        if depth == 0 || delta.abs() <= 15.0 * tol + floor {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 30)
}

/// Adaptive Simpson on `[lo, hi]` with the endpoints nudged inward, so a
/// piecewise integrand is evaluated on this span's polynomial piece only.
pub fn span_integral(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let eps = (hi - lo) * 1e-14;
    let g = |t: f64| f(t.clamp(lo + eps, hi - eps));
    adaptive_simpson(&g, lo, hi, tol)
}

/// Integral over [0, 1] split at the breakpoints, where the integrand may kink.
pub fn piecewise_integral(kv: &KnotVector, f: &dyn Fn(f64) -> f64, tol: f64) -> f64 {
    kv.breakpoints()
        .windows(2)
        .map(|w| span_integral(f, w[0], w[1], tol))
        .sum()
}

/// `r`-th derivative of `B_j` evaluated inside the open span containing `t`.
pub fn naive_deriv(kv: &KnotVector, j: usize, r: usize, t: f64) -> f64 {
    fn rec(knots: &[f64], j: usize, p: usize, r: usize, t: f64) -> f64 {
        if r == 0 {
            return naive_bspline(knots, j, p, t);
        }
        let mut v = 0.0;
        let d1 = knots[j + p - 1] - knots[j];
        if d1 > 0.0 {
            v += (p - 1) as f64 / d1 * rec(knots, j, p - 1, r - 1, t);
        }
        let d2 = knots[j + p] - knots[j + 1];
        if d2 > 0.0 {
            v -= (p - 1) as f64 / d2 * rec(knots, j + 1, p - 1, r - 1, t);
        }
        v
    }
    rec(kv.knots(), j, kv.order(), r, t)
}

/// Dense `int B_j^(r) B_k^(r)` by adaptive quadrature on every span.
pub fn dense_product_oracle(kv: &KnotVector, r: usize) -> DMatrix<f64> {
    let d = kv.dim();
    let b = kv.breakpoints();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        for k in j..d {
            let f = |t: f64| naive_deriv(kv, j, r, t) * naive_deriv(kv, k, r, t);
            let s: f64 = b
                .windows(2)
                .map(|w| span_integral(&f, w[0], w[1], 1e-14))
                .sum();
            m[(j, k)] = s;
            m[(k, j)] = s;
        }
    }
    m
}

/// Maximum bipartite matching (Kuhn) between basis functions and distinct times.
pub fn kuhn_matching(feasible: &[Vec<bool>], n_right: usize) -> usize {
    fn augment(
        u: usize,
        feasible: &[Vec<bool>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for v in 0..owner.len() {
            if feasible[u][v] && !seen[v] {
                seen[v] = true;
                if owner[v].is_none() || augment(owner[v].unwrap(), feasible, seen, owner) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    let mut size = 0;
    for u in 0..feasible.len() {
        let mut seen = vec![false; n_right];
        if augment(u, feasible, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Whether an order-preserving matching exists; with interval supports any
/// maximum matching can be uncrossed, so a perfect matching suffices.
pub fn existence_oracle(kv: &KnotVector, times: &[f64]) -> bool {
    let mut ts = times.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let feasible: Vec<Vec<bool>> = (0..kv.dim())
        .map(|j| {
            ts.iter()
                .map(|&t| naive_bspline(kv.knots(), j, kv.order(), t) > 0.0)
                .collect()
        })
        .collect();
    kuhn_matching(&feasible, ts.len()) == kv.dim()
}

/// Random longitudinal data around a smooth curve with heavy-ish noise.
pub fn random_data(seed: u64, subjects: usize, per: usize) -> LongData {
    let mut r = rng(seed);
    let mut ids = Vec::new();
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for i in 0..subjects {
        let m = r.random_range(1..=per);
        for _ in 0..m {
            let t: f64 = r.random_range(0.0..1.0);
            let noise: f64 = r.random_range(-1.0..1.0);
            let spike = if r.random_range(0.0..1.0) < 0.1 { 5.0 } else { 0.0 };
            ids.push(i as i64);
            ts.push(t);
            ys.push((2.0 * std::f64::consts::PI * t).sin() + 0.3 * noise + spike);
        }
    }
    LongData::from_columns(&ids, &ts, &ys).unwrap()
}

/// Random strictly increasing interior knots in (0, 1).
pub fn random_interior<R: Rng>(r: &mut R, k: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..k).map(|_| r.random_range(0.01..0.99)).collect();
        v.sort_by(f64::total_cmp);
        if v.windows(2).all(|w| w[1] - w[0] > 1e-3) {
            return v;
        }
    }
}

/// Dense design matrix by the naive recursion.
pub fn dense_design(kv: &KnotVector, ts: &[f64]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(ts.len(), kv.dim());
    for (i, &t) in ts.iter().enumerate() {
        for (j, v) in naive_all(kv, t).into_iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    b
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Dense `(B' Omega B + lambda P) a = B' Omega y` from independently built pieces.
pub fn dense_normal_solution(cfg: &PenaltyConfig, data: &LongData, lambda: f64) -> Vec<f64> {
    let kv = cfg.knots();
    let b = dense_design(kv, &data.times());
    let omega = DMatrix::from_diagonal(&DVector::from_vec(data.obs_weights()));
    let pm = dense_product_oracle(kv, cfg.r());
    let lhs = b.transpose() * &omega * &b + pm * lambda;
    let rhs = b.transpose() * &omega * DVector::from_vec(data.values());
    lhs.cholesky().unwrap().solve(&rhs).as_slice().to_vec()
}

/// Derivative-free compass search; returns the minimal value found..
pub fn compass_search(f: &dyn Fn(&[f64]) -> f64, start: Vec<f64>) -> f64 {
    let mut x = start;
    let mut fx = f(&x);
    let mut step = 1.0;
    while step > 1e-9 {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] += dir * step;
                let fy = f(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    fx
}
