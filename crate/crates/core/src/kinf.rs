//! Class-K∞ functions restricted to the power-law family `s ↦ c·s^q`.
//!
//! The family is closed under composition and inversion, which is all the
//! gain algebra of the small-gain machinery needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The function `s ↦ coefficient · s^exponent` on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KInfFn {
    pub coefficient: f64,
    pub exponent: f64,
}

impl KInfFn {
    pub fn new(coefficient: f64, exponent: f64) -> Result<Self> {
        if !(coefficient.is_finite() && coefficient > 0.0) {
            return Err(Error::InvalidInput(format!(
                "K-infinity coefficient must be positive and finite, got {coefficient}"
            )));
        }
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidInput(format!(
                "K-infinity exponent must be positive and finite, got {exponent}"
            )));
        }
        Ok(Self {
            coefficient,
            exponent,
        })
    }

    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(slope, 1.0)
    }

    pub fn quadratic(coefficient: f64) -> Result<Self> {
        Self::new(coefficient, 2.0)
    }

    pub fn identity() -> Self {
        Self {
            coefficient: 1.0,
            exponent: 1.0,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        if s == 0.0 {
            return 0.0;
        }
        self.coefficient * s.powf(self.exponent)
    }

    /// `self ∘ inner`, i.e. `s ↦ self(inner(s))`.
    pub fn compose(&self, inner: &KInfFn) -> KInfFn {
        KInfFn {
            coefficient: self.coefficient * inner.coefficient.powf(self.exponent),
            exponent: self.exponent * inner.exponent,
        }
    }

    pub fn inverse(&self) -> KInfFn {
        KInfFn {
            coefficient: self.coefficient.powf(-1.0 / self.exponent),
            exponent: 1.0 / self.exponent,
        }
    }

    /// Multiply the function by a positive constant.
    pub fn scale(&self, factor: f64) -> KInfFn {
        KInfFn {
            coefficient: self.coefficient * factor,
            exponent: self.exponent,
        }
    }

    pub fn is_linear(&self) -> bool {
        (self.exponent - 1.0).abs() <= 1e-12
    }

    /// Slope of a linear function.
    pub fn slope(&self) -> Result<f64> {
        if self.is_linear() {
            Ok(self.coefficient)
        } else {
            Err(Error::UnsupportedGain(format!(
                "expected a linear gain, got exponent {}",
                self.exponent
            )))
        }
    }
}
