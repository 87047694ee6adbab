//! Barrier curve shapes.
//!
//! The curved barriers used by the first/second-moment arguments all have the
//! "banana" form `±scale·(((1+s) ∧ (1+t−s))^exponent − 1)`: zero at both ends
//! of the horizon, monotone to the midpoint, with exponent
//! 1/6 and scales 1 and 1/2.

use serde::{Deserialize, Serialize};

/// Shape of the curve part of a barrier function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveKind {
    /// Flat curve, h ≡ 0.
    Zero,
    /// `h_t(s) = sign · scale · (((1+s) ∧ (1+t−s))^exponent − 1)`.
    Banana {
        /// +1 for the bump used below the lower-bound barrier, −1 for the dip
        /// used above the upper-bound barrier.
        sign: f64,
        /// Growth exponent; 1/6 throughout the source material.
        exponent: f64,
        /// Overall scale; 1 or 1/2 in the source material.
        scale: f64,
    },
}

impl CurveKind {
    /// The negative-sign banana with canonical exponent and scale.
    pub const fn neg_banana() -> Self {
        CurveKind::Banana {
            sign: -1.0,
            exponent: 1.0 / 6.0,
            scale: 1.0,
        }
    }

    /// The positive-sign banana with canonical exponent and scale.
    pub const fn pos_banana() -> Self {
        CurveKind::Banana {
            sign: 1.0,
            exponent: 1.0 / 6.0,
            scale: 1.0,
        }
    }

    /// Same shape at half scale (used by the stopping-line barrier).
    pub fn scaled(self, factor: f64) -> Self {
        match self {
            CurveKind::Zero => CurveKind::Zero,
            CurveKind::Banana {
                sign,
                exponent,
                scale,
            } => CurveKind::Banana {
                sign,
                exponent,
                scale: scale * factor,
            },
        }
    }

    /// Evaluate `h_t(s)` for horizon `t`.
    #[inline]
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        match *self {
            CurveKind::Zero => 0.0,
            CurveKind::Banana {
                sign,
                exponent,
                scale,
            } => {
                let base = (1.0 + s).min(1.0 + t - s);
                sign * scale * (base.powf(exponent) - 1.0)
            }
        }
    }

    /// Whether the curve is identically zero.
    pub fn is_zero(&self) -> bool {
        match *self {
            CurveKind::Zero => true,
            CurveKind::Banana { scale, .. } => scale == 0.0,
        }
    }

    /// `C1(h) = 1 ∨ sup_t sup_{s∈[0,t]} |h_t(s)|/√(1+s)`.
    ///
    /// For the banana family the supremand `((1+u)^e − 1)/√(1+u)` (u the
    /// distance into the curve) is maximized over u ≥ 0 in closed form when
    /// e < 1/2: the stationary point is `(1+u)^e = 1/(1−2e)`, giving a value
    /// well below 1 at the canonical exponent and scale, so the clamp binds.
    pub fn c1(&self) -> f64 {
        match *self {
            CurveKind::Zero => 1.0,
            CurveKind::Banana {
                exponent, scale, ..
            } => {
                let sup = if exponent >= 0.5 {
                    f64::INFINITY
                } else {
                    // g(v) = (v^e − 1)/√v on v ≥ 1 peaks at v = (1−2e)^{-1/e}.
                    let v = (1.0 - 2.0 * exponent).powf(-1.0 / exponent);
                    let g = (v.powf(exponent) - 1.0) / v.sqrt();
                    scale.abs() * g
                };
                sup.max(1.0)
            }
        }
    }
}
