//! Uniform hyper-interval partitions and the quantizer maps onto cell centers.
//!
//! Cells are half-open `[lb, ub)` per dimension except the last cell, which
//! also contains the upper face of the box. Multi-indices are flattened
//! row-major (first dimension slowest).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoxSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    widths: Vec<f64>,
}

/// Outcome of quantizing a point.
#[derive(Debug, Clone, PartialEq)]
pub enum Quantized {
    Cell {
        index: usize,
        representative: Vec<f64>,
    },
    Absorbing,
}

impl Quantized {
    pub fn index(&self) -> Option<usize> {
        match self {
            Quantized::Cell { index, .. } => Some(*index),
            Quantized::Absorbing => None,
        }
    }

    pub fn is_absorbing(&self) -> bool {
        matches!(self, Quantized::Absorbing)
    }
}

impl UniformGrid {
    /// Smallest per-dimension counts whose widths do not exceed `delta`.
    pub fn from_delta(bounds: &BoxSet, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "discretization parameter must be positive, got {delta}"
            )));
        }
        let counts = bounds
            .lower
            .iter()
            .zip(&bounds.upper)
            .map(|(lo, hi)| {
                let cells = ((hi - lo) / delta * (1.0 - 1e-12)).ceil();
                cells.max(1.0) as usize
            })
            .collect();
        Self::from_counts(bounds, counts)
    }

    pub fn from_counts(bounds: &BoxSet, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                context: "grid cell counts",
                expected: bounds.dim(),
                got: counts.len(),
            });
        }
        let mut widths = Vec::with_capacity(counts.len());
        for (d, &count) in counts.iter().enumerate() {
            let span = bounds.upper[d] - bounds.lower[d];
            if !(span > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "grid dimension {d} has zero measure"
                )));
            }
            if count == 0 || count > u32::MAX as usize {
                return Err(Error::InvalidInput(format!(
                    "grid dimension {d} has invalid cell count {count}"
                )));
            }
            widths.push(span / count as f64);
        }
        let total = counts
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .filter(|&t| t <= u32::MAX as usize);
        if total.is_none() {
            return Err(Error::InvalidInput("grid has too many cells".into()));
        }
        Ok(Self {
            lower: bounds.lower.clone(),
            upper: bounds.upper.clone(),
            counts,
            widths,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn bounds(&self) -> BoxSet {
        BoxSet {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.counts.iter().product()
    }

    /// Infinity-norm cell diameter δ̄ (zero for a zero-dimensional grid).
    pub fn delta_bar(&self) -> f64 {
        self.widths.iter().fold(0.0f64, |a, w| a.max(*w))
    }

    /// `[lb, ub)` of cell `k` along dimension `d`.
    pub fn cell_bounds(&self, d: usize, k: usize) -> (f64, f64) {
        let n = self.counts[d];
        let lb = if k == 0 {
            self.lower[d]
        } else {
            self.lower[d] + k as f64 * self.widths[d]
        };
        let ub = if k + 1 == n {
            self.upper[d]
        } else {
            self.lower[d] + (k + 1) as f64 * self.widths[d]
        };
        (lb, ub)
    }

    pub fn center_1d(&self, d: usize, k: usize) -> f64 {
        let (lb, ub) = self.cell_bounds(d, k);
        0.5 * (lb + ub)
    }

    /// Cell index along dimension `d`, or `None` outside `[lower, upper]`.
    pub fn locate_1d(&self, d: usize, x: f64) -> Option<usize> {
        if !(x >= self.lower[d] && x <= self.upper[d]) {
            return None;
        }
        let n = self.counts[d];
        let raw = ((x - self.lower[d]) / self.widths[d]).floor();
        let mut k = if raw < 0.0 {
            0
        } else {
            (raw as usize).min(n - 1)
        };
        loop {
            let (lb, ub) = self.cell_bounds(d, k);
            if x < lb && k > 0 {
                k -= 1;
            } else if x >= ub && k + 1 < n {
                k += 1;
            } else {
                return Some(k);
            }
        }
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.counts)
            .fold(0usize, |acc, (k, n)| acc * n + k)
    }

    pub fn unflatten(&self, mut index: usize) -> Vec<usize> {
        let mut multi = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            multi[d] = index % self.counts[d];
            index /= self.counts[d];
        }
        multi
    }

    pub fn representative(&self, index: usize) -> Vec<f64> {
        self.unflatten(index)
            .iter()
            .enumerate()
            .map(|(d, &k)| self.center_1d(d, k))
            .collect()
    }

    pub fn quantize(&self, x: &[f64]) -> Quantized {
        if x.len() != self.dim() {
            return Quantized::Absorbing;
        }
        let mut multi = Vec::with_capacity(self.dim());
        for (d, &v) in x.iter().enumerate() {
            match self.locate_1d(d, v) {
                Some(k) => multi.push(k),
                None => return Quantized::Absorbing,
            }
        }
        let representative = multi
            .iter()
            .enumerate()
            .map(|(d, &k)| self.center_1d(d, k))
            .collect();
        Quantized::Cell {
            index: self.flatten(&multi),
            representative,
        }
    }

    /// Center of the cell containing `x` on the grid's lattice extended
    /// beyond the box in every direction.
    pub fn lattice_representative(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, &v)| {
                if let Some(k) = self.locate_1d(d, v) {
                    return self.center_1d(d, k);
                }
                let k = ((v - self.lower[d]) / self.widths[d]).floor();
                self.lower[d] + (k + 0.5) * self.widths[d]
            })
            .collect()
    }

    /// All representatives in flattened order.
    pub fn representatives(&self) -> Vec<Vec<f64>> {
        (0..self.num_cells()).map(|i| self.representative(i)).collect()
    }
}
