//! Gram and roughness-penalty matrices of a B-spline basis.
//!
//! Both integrands are piecewise polynomials, so a fixed Gauss-Legendre rule
//! on every knot span integrates them exactly.

use crate::banded::SymBandMatrix;
use crate::basis::KnotVector;
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use nalgebra::DMatrix;

/// Penalty on the integrated squared `r`-th derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    r: usize,
    kv: KnotVector,
}

impl PenaltyConfig {
    pub fn new(kv: KnotVector, r: usize) -> Result<Self> {
        if r == 0 || r >= kv.order() {
            return Err(Error::InvalidPenaltyOrder {
                r,
                order: kv.order(),
            });
        }
        Ok(Self { r, kv })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn knots(&self) -> &KnotVector {
        &self.kv
    }
}

/// `G_jk = int B_j B_k` over `[0, 1]`.
pub fn gram_matrix(kv: &KnotVector) -> SymBandMatrix {
    derivative_products(kv, 0, kv.order())
}

/// `P_jk = int B_j^{(r)} B_k^{(r)}` over `[0, 1]`.
pub fn penalty_matrix(cfg: &PenaltyConfig) -> SymBandMatrix {
    let kv = cfg.knots();
    derivative_products(kv, cfg.r(), kv.order() - cfg.r())
}

/// Square-root factor `Q` with `Q' Q = P`: rows are `r`-th derivatives at the
/// quadrature nodes scaled by root weights, zero-padded to at least `K + p` rows.
pub fn penalty_root(cfg: &PenaltyConfig) -> DMatrix<f64> {
    let kv = cfg.knots();
    let (p, r, dim) = (kv.order(), cfg.r(), kv.dim());
    let rule = GaussLegendre::new(p - r);
    let x = kv.knots();
    let spans: Vec<usize> = ((p - 1)..(kv.interior_count() + p))
        .filter(|&s| x[s + 1] > x[s])
        .collect();
    let mut q = DMatrix::zeros((spans.len() * rule.len()).max(dim), dim);
    let mut vals = vec![0.0; p];
    let mut row = 0;
    for &span in &spans {
        let first = span + 1 - p;
        for (t, w) in rule.mapped(x[span], x[span + 1]) {
            kv.eval_span(span, t, r, &mut vals);
            let sw = w.sqrt();
            for (k, v) in vals.iter().enumerate() {
                q[(row, first + k)] = sw * v;
            }
            row += 1;
        }
    }
    q
}

fn derivative_products(kv: &KnotVector, deriv: usize, nodes: usize) -> SymBandMatrix {
    let p = kv.order();
    let rule = GaussLegendre::new(nodes.max(1));
    let mut m = SymBandMatrix::zeros(kv.dim(), p - 1);
    let mut vals = vec![0.0; p];
    let x = kv.knots();
    for span in (p - 1)..(kv.interior_count() + p) {
        let (a, b) = (x[span], x[span + 1]);
        if b <= a {
            continue;
        }
        let first = span + 1 - p;
        for (t, w) in rule.mapped(a, b) {
            kv.eval_span(span, t, deriv, &mut vals);
            for i in 0..p {
                let wi = w * vals[i];
                if wi == 0.0 {
                    continue;
                }
                for k in 0..=i {
                    m.add(first + i, first + k, wi * vals[k]);
                }
            }
        }
    }
    m
}
