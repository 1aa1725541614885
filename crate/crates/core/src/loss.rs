//! Shipped losses. Both are convex and twice differentiable in the
//! prediction with first and second derivatives bounded by 1, and satisfy
//! `loss(0, y) <= 1` on their supported label range.

use serde::{Deserialize, Serialize};

/// A convex, twice-differentiable loss of the prediction `z` given label `y`.
pub trait Loss {
    fn value(&self, z: f64, y: f64) -> f64;
    /// d/dz loss(z, y)
    fn d1(&self, z: f64, y: f64) -> f64;
    /// d^2/dz^2 loss(z, y)
    fn d2(&self, z: f64, y: f64) -> f64;
}

/// The shipped loss functions.
///
/// `Logistic` is for labels in `{-1, +1}`; `LogCosh` is a smoothed regression
/// loss `log cosh(z - y)` restricted to `|y| <= 1.3` so that
/// `loss(0, y) <= log cosh(1.3) < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    LogCosh,
}

/// Numerically stable `ln(1 + e^t)`.
fn softplus(t: f64) -> f64 {
    if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() }
}

/// Numerically stable `ln cosh(u)`.
fn ln_cosh(u: f64) -> f64 {
    u.abs() + (-2.0 * u.abs()).exp().ln_1p() - std::f64::consts::LN_2
}

impl Loss for LossKind {
    fn value(&self, z: f64, y: f64) -> f64 {
        match self {
            LossKind::Logistic => softplus(-y * z),
            LossKind::LogCosh => ln_cosh(z - y),
        }
    }

    fn d1(&self, z: f64, y: f64) -> f64 {
        match self {
            LossKind::Logistic => -y / (1.0 + (y * z).exp()),
            LossKind::LogCosh => (z - y).tanh(),
        }
    }

    fn d2(&self, z: f64, y: f64) -> f64 {
        match self {
            LossKind::Logistic => {
                let s = 1.0 / (1.0 + (-y * z).exp());
                y * y * s * (1.0 - s)
            }
            LossKind::LogCosh => {
                let t = (z - y).tanh();
                1.0 - t * t
            }
        }
    }
}

impl LossKind {
    /// Labels this loss accepts: the sign channel for logistic, the clipped
    /// value channel for log-cosh.
    pub fn label_grid(&self) -> Vec<f64> {
        match self {
            LossKind::Logistic => vec![-1.0, 1.0],
            LossKind::LogCosh => (0..=26).map(|i| -1.3 + 0.1 * i as f64).collect(),
        }
    }
}
