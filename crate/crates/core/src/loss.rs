//! Convex losses and their IRLS weights.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// Default clamp for absolute-loss weights.
pub const DEFAULT_ABS_EPS: f64 = 1e-6;
/// Default Huber threshold.
pub const DEFAULT_HUBER_K: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// `rho(x) = x^2`.
    Square,
    /// `rho(x) = |x|`; weights clamp `|x|` below at `eps`.
    Absolute { eps: f64 },
    /// `rho(x) = x^2` for `|x| <= k`, `2k|x| - k^2` otherwise.
    Huber { k: f64 },
}

impl LossSpec {
    pub fn absolute() -> Self {
        LossSpec::Absolute {
            eps: DEFAULT_ABS_EPS,
        }
    }

    pub fn huber() -> Self {
        LossSpec::Huber { k: DEFAULT_HUBER_K }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Square => Ok(()),
            LossSpec::Absolute { eps } if eps > 0.0 && eps.is_finite() => Ok(()),
            LossSpec::Absolute { eps } => Err(Error::InvalidLoss(format!(
                "absolute-loss smoothing must be positive, got {eps}"
            ))),
            LossSpec::Huber { k } if k > 0.0 && k.is_finite() => Ok(()),
            LossSpec::Huber { k } => Err(Error::InvalidLoss(format!(
                "Huber threshold must be positive, got {k}"
            ))),
        }
    }

    pub fn rho(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Square => x * x,
            LossSpec::Absolute { .. } => x.abs(),
            LossSpec::Huber { k } => {
                let a = x.abs();
                if a <= k {
                    x * x
                } else {
                    2.0 * k * a - k * k
                }
            }
        }
    }

    /// Derivative of `rho`; `sign(x)` with `psi(0) = 0` for the absolute loss.
    pub fn psi(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Square => 2.0 * x,
            LossSpec::Absolute { .. } => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossSpec::Huber { k } => 2.0 * x.clamp(-k, k),
        }
    }

    /// IRLS weight `w(x)`, normalized so the square loss has `w = 1`.
    pub fn irls_weight(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Square => 1.0,
            LossSpec::Absolute { eps } => 1.0 / x.abs().max(eps),
            LossSpec::Huber { k } => {
                let a = x.abs();
                if a <= k {
                    1.0
                } else {
                    k / a
                }
            }
        }
    }

    /// Constant `c` with `irls_weight(x) * x = psi(x) / c` wherever the
    /// weight is unclamped.
    pub fn psi_scale(&self) -> f64 {
        match self {
            LossSpec::Square | LossSpec::Huber { .. } => 2.0,
            LossSpec::Absolute { .. } => 1.0,
        }
    }

    /// Weight entering the penalized normal equations
    /// `(B' W B + lambda P) a = B' W y`: `psi_eps(x) / (2x)`.
    pub fn solver_weight(&self, x: f64) -> f64 {
        0.5 * self.psi_scale() * self.irls_weight(x)
    }

    /// Loss actually minimized by IRLS. Differs from [`Self::rho`] only for
    /// the absolute loss, which becomes quadratic on `|x| < eps`.
    pub fn smoothed_rho(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Absolute { eps } => {
                let a = x.abs();
                if a >= eps {
                    a
                } else {
                    x * x / (2.0 * eps) + 0.5 * eps
                }
            }
            _ => self.rho(x),
        }
    }

    /// Derivative of [`Self::smoothed_rho`].
    pub fn smoothed_psi(&self, x: f64) -> f64 {
        match *self {
            LossSpec::Absolute { eps } => x / x.abs().max(eps),
            _ => self.psi(x),
        }
    }

    pub fn is_square(&self) -> bool {
        matches!(self, LossSpec::Square)
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LossSpec::Square => write!(f, "ls"),
            LossSpec::Absolute { .. } => write!(f, "lad"),
            LossSpec::Huber { k } => write!(f, "huber:{k}"),
        }
    }
}

/// Parses `ls`, `lad` or `huber[:k]`.
impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = match s.trim() {
            "ls" => LossSpec::Square,
            "lad" => LossSpec::absolute(),
            "huber" => LossSpec::huber(),
            other => match other.strip_prefix("huber:") {
                Some(k) => LossSpec::Huber {
                    k: k.parse()
                        .map_err(|_| Error::InvalidLoss(format!("bad Huber threshold `{k}`")))?,
                },
                None => return Err(Error::InvalidLoss(format!("unknown loss `{other}`"))),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}
