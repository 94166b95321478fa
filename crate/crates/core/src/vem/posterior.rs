use crate::imagecore::GridGeom;
use crate::{Error, Result};

/// Per-pixel discrete distributions over a shift catalog, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorField {
    geom: GridGeom,
    n_shifts: usize,
    q: Vec<f64>,
}

impl PosteriorField {
    pub fn uniform(geom: GridGeom, n_shifts: usize) -> Result<Self> {
        if n_shifts == 0 {
            return Err(Error::invalid("posterior needs at least one shift"));
        }
        Ok(PosteriorField {
            geom,
            n_shifts,
            q: vec![1.0 / n_shifts as f64; geom.len() * n_shifts],
        })
    }

    /// Point mass on shift `s` at every pixel.
    pub fn point_mass(geom: GridGeom, n_shifts: usize, s: usize) -> Result<Self> {
        if s >= n_shifts {
            return Err(Error::invalid("shift index out of range"));
        }
        let mut q = vec![0.0; geom.len() * n_shifts];
        for p in 0..geom.len() {
            q[p * n_shifts + s] = 1.0;
        }
        Ok(PosteriorField { geom, n_shifts, q })
    }

    /// Takes raw per-pixel rows; each row must be a distribution.
    pub fn from_rows(geom: GridGeom, n_shifts: usize, q: Vec<f64>) -> Result<Self> {
        if n_shifts == 0 || q.len() != geom.len() * n_shifts {
            return Err(Error::invalid("posterior rows do not match grid and catalog"));
        }
        for row in q.chunks(n_shifts) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("posterior row is not a distribution"));
            }
        }
        Ok(PosteriorField { geom, n_shifts, q })
    }

    pub fn geom(&self) -> GridGeom {
        self.geom
    }
    pub fn n_shifts(&self) -> usize {
        self.n_shifts
    }
    pub fn n_pixels(&self) -> usize {
        self.geom.len()
    }

    #[inline]
    pub fn row(&self, p: usize) -> &[f64] {
        &self.q[p * self.n_shifts..(p + 1) * self.n_shifts]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.q[p * self.n_shifts..(p + 1) * self.n_shifts]
    }

    pub fn data(&self) -> &[f64] {
        &self.q
    }

    pub fn entropy(&self, p: usize) -> f64 {
        entropy(self.row(p))
    }

    pub fn argmax(&self, p: usize) -> usize {
        let row = self.row(p);
        let mut best = 0;
        for s in 1..row.len() {
            if row[s] > row[best] {
                best = s;
            }
        }
        best
    }

    /// Largest deviation of any row sum from one, and the smallest entry.
    pub fn validity(&self) -> (f64, f64) {
        let mut dev = 0.0f64;
        let mut min = f64::INFINITY;
        for row in self.q.chunks(self.n_shifts) {
            let sum: f64 = row.iter().sum();
            dev = dev.max((sum - 1.0).abs());
            min = row.iter().fold(min, |m, &v| m.min(v));
        }
        (dev, min)
    }
}

pub(crate) fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rows_and_entropy() {
        let g = GridGeom::new(4, 3, 1.0).unwrap();
        let q = PosteriorField::uniform(g, 1681).unwrap();
        assert!(q.row(5).iter().all(|&v| v == 1.0 / 1681.0));
        assert!((q.entropy(0) - (1681f64).ln()).abs() < 1e-12);
        let (dev, min) = q.validity();
        assert!(dev < 1e-12 && min > 0.0);
    }

    #[test]
    fn single_shift_is_point_mass() {
        let g = GridGeom::new(2, 2, 1.0).unwrap();
        let q = PosteriorField::uniform(g, 1).unwrap();
        assert_eq!(q.row(3), &[1.0]);
        assert_eq!(q.entropy(3), 0.0);
    }

    #[test]
    fn from_rows_validates() {
        let g = GridGeom::new(2, 2, 1.0).unwrap();
        assert!(PosteriorField::from_rows(g, 2, vec![0.5; 8]).is_ok());
        assert!(PosteriorField::from_rows(g, 2, vec![0.4; 8]).is_err());
        assert!(PosteriorField::from_rows(g, 2, vec![1.5, -0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).is_err());
    }
}
