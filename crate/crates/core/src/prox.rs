//! Regularizer catalogue: proximal maps, values, and distance to the
//! subdifferential.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegKind {
    Zero,
    L1,
    L2Norm,
    SquaredL2,
}

impl RegKind {
    pub const ALL: [RegKind; 4] = [
        RegKind::Zero,
        RegKind::L1,
        RegKind::L2Norm,
        RegKind::SquaredL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegKind::Zero => "zero",
            RegKind::L1 => "l1",
            RegKind::L2Norm => "l2-norm",
            RegKind::SquaredL2 => "squared-l2",
        }
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::ConfigError(format!("unknown regularizer kind `{s}`")))
    }
}

/// A convex regularizer `λ·r(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub kind: RegKind,
    pub weight: f64,
}

impl Regularizer {
    pub fn new(kind: RegKind, weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::ConfigError(format!(
                "regularizer weight must be finite and nonnegative, got {weight}"
            )));
        }
        Ok(Self { kind, weight })
    }

    pub fn zero() -> Self {
        Self {
            kind: RegKind::Zero,
            weight: 0.0,
        }
    }

    pub fn l1(weight: f64) -> Self {
        Self {
            kind: RegKind::L1,
            weight,
        }
    }

    /// `argmin_u (1/(2t))‖u − v‖² + λ·r(u)`.
    pub fn prox(&self, t: f64, v: &Vector) -> Result<Vector> {
        if t.is_nan() || t <= 0.0 {
            return Err(Error::InvalidStep(t));
        }
        let lam = self.weight;
        Ok(match self.kind {
            RegKind::Zero => v.clone(),
            RegKind::L1 => v.map(|x| soft_threshold(x, t * lam)),
            RegKind::L2Norm => {
                let n = v.norm();
                let thr = t * lam;
                if n <= thr {
                    Vector::zeros(v.len())
                } else {
                    v * (1.0 - thr / n)
                }
            }
            RegKind::SquaredL2 => v / (1.0 + 2.0 * t * lam),
        })
    }

    pub fn value(&self, y: &Vector) -> f64 {
        let lam = self.weight;
        match self.kind {
            RegKind::Zero => 0.0,
            RegKind::L1 => lam * y.iter().map(|v| v.abs()).sum::<f64>(),
            RegKind::L2Norm => lam * y.norm(),
            RegKind::SquaredL2 => lam * y.norm_squared(),
        }
    }

    /// Euclidean distance from `g` to `∂(λ·r)(y)`.
    pub fn subdiff_distance(&self, y: &Vector, g: &Vector) -> f64 {
        let lam = self.weight;
        match self.kind {
            RegKind::Zero => g.norm(),
            RegKind::L1 => y
                .iter()
                .zip(g.iter())
                .map(|(&yi, &gi)| {
                    let d = if yi != 0.0 {
                        gi - lam * yi.signum()
                    } else {
                        (gi.abs() - lam).max(0.0)
                    };
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            RegKind::L2Norm => {
                let n = y.norm();
                if n > 0.0 {
                    (g - y * (lam / n)).norm()
                } else {
                    (g.norm() - lam).max(0.0)
                }
            }
            RegKind::SquaredL2 => (g - y * (2.0 * lam)).norm(),
        }
    }

    /// A deterministic element of `∂(λ·r)(y)`.
    pub fn subgradient(&self, y: &Vector) -> Vector {
        let lam = self.weight;
        match self.kind {
            RegKind::Zero => Vector::zeros(y.len()),
            RegKind::L1 => y.map(|v| if v == 0.0 { 0.0 } else { lam * v.signum() }),
            RegKind::L2Norm => {
                let n = y.norm();
                if n > 0.0 {
                    y * (lam / n)
                } else {
                    Vector::zeros(y.len())
                }
            }
            RegKind::SquaredL2 => y * (2.0 * lam),
        }
    }
}

/// Free-function forms of the regularizer operations.
pub fn prox(reg: &Regularizer, t: f64, v: &Vector) -> Result<Vector> {
    reg.prox(t, v)
}

pub fn eval_reg(reg: &Regularizer, y: &Vector) -> f64 {
    reg.value(y)
}

pub fn subdiff_distance(reg: &Regularizer, y: &Vector, g: &Vector) -> f64 {
    reg.subdiff_distance(y, g)
}

// |x| == thr maps to 0
fn soft_threshold(x: f64, thr: f64) -> f64 {
    if x > thr {
        x - thr
    } else if x < -thr {
        x + thr
    } else {
        0.0
    }
}
