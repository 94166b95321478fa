use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ordered set of candidate per-pixel shifts (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCatalog {
    shifts: Vec<[f64; 2]>,
    zero_index: usize,
    radius_mm: f64,
    step_mm: f64,
}

impl ShiftCatalog {
    /// Square grid `{-r, .., r}^2` with spacing `step`, ordered by y then x.
    pub fn square(radius_mm: f64, step_mm: f64) -> Result<Self> {
        if !(radius_mm.is_finite() && radius_mm >= 0.0) {
            return Err(Error::invalid("shift radius must be non-negative"));
        }
        if !(step_mm.is_finite() && step_mm > 0.0) {
            return Err(Error::invalid("shift step must be positive"));
        }
        let n = (radius_mm / step_mm + 1e-9).floor() as i64;
        let mut shifts = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
        for j in -n..=n {
            for i in -n..=n {
                shifts.push([i as f64 * step_mm, j as f64 * step_mm]);
            }
        }
        let zero_index = shifts.len() / 2;
        Ok(ShiftCatalog {
            shifts,
            zero_index,
            radius_mm,
            step_mm,
        })
    }

    /// Arbitrary shift list; it must contain the zero shift exactly once.
    pub fn from_shifts(shifts: Vec<[f64; 2]>) -> Result<Self> {
        if shifts.is_empty() {
            return Err(Error::invalid("shift catalog is empty"));
        }
        if shifts.iter().any(|s| !(s[0].is_finite() && s[1].is_finite())) {
            return Err(Error::invalid("shift catalog has non-finite entries"));
        }
        let zeros: Vec<usize> = (0..shifts.len()).filter(|&i| shifts[i] == [0.0, 0.0]).collect();
        if zeros.len() != 1 {
            return Err(Error::invalid("shift catalog must contain the zero shift exactly once"));
        }
        let radius_mm = shifts.iter().fold(0.0f64, |m, s| m.max(s[0].abs()).max(s[1].abs()));
        Ok(ShiftCatalog {
            zero_index: zeros[0],
            shifts,
            radius_mm,
            step_mm: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }
    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }
    pub fn shifts(&self) -> &[[f64; 2]] {
        &self.shifts
    }
    pub fn get(&self, s: usize) -> [f64; 2] {
        self.shifts[s]
    }
    pub fn zero_index(&self) -> usize {
        self.zero_index
    }
    pub fn radius_mm(&self) -> f64 {
        self.radius_mm
    }
    /// Grid step, or 0 for catalogs built from an explicit list.
    pub fn step_mm(&self) -> f64 {
        self.step_mm
    }

    /// Index of the shift closest to `d` (first on ties).
    pub fn nearest(&self, d: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (s, v) in self.shifts.iter().enumerate() {
            let e = (v[0] - d[0]).powi(2) + (v[1] - d[1]).powi(2);
            if e < best.0 {
                best = (e, s);
            }
        }
        best.1
    }
}
