//! Axis-aligned admissible sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{uniform_in, SeededRng};

/// Per-dimension `[lo, hi]` bounds over the optimized variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl OperatingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::InvalidParameter(format!(
                "box needs matching nonempty bounds (lo: {}, hi: {})",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (i, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidParameter(format!("box dimension {i}: need finite lo <= hi, got [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// Box with the same center and each width scaled by `fraction`.
    pub fn shrink(&self, fraction: f64) -> Self {
        let c = self.center();
        let w = self.widths();
        Self {
            lo: c.iter().zip(&w).map(|(c, w)| c - 0.5 * fraction * w).collect(),
            hi: c.iter().zip(&w).map(|(c, w)| c + 0.5 * fraction * w).collect(),
        }
    }

    /// Per-dimension clamping.
    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.project(&mut y);
        y
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *l <= *v && *v <= *h)
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        uniform_in(rng, &self.lo, &self.hi)
    }

    /// Maps unit-cube coordinates into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.lo).zip(&self.hi).map(|((u, l), h)| l + u * (h - l)).collect()
    }

    /// Maps a box point into unit-cube coordinates (degenerate dims map to 0.5).
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .map(|((v, l), h)| if h > l { (v - l) / (h - l) } else { 0.5 })
            .collect()
    }
}
