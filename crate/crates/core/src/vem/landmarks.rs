use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imagecore::GridGeom;
use crate::{Error, Result};

/// Corresponding points in pixel coordinates: `k` on the reference image (an
/// integer pixel) and `kh` on the floating image (continuous).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub k: [f64; 2],
    pub kh: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<Landmark>,
    /// Placement standard deviation (mm).
    pub sigma_k_mm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    id: usize,
    kx_px: f64,
    ky_px: f64,
    khx_px: f64,
    khy_px: f64,
}

impl LandmarkSet {
    pub fn empty(sigma_k_mm: f64) -> Self {
        LandmarkSet {
            points: Vec::new(),
            sigma_k_mm,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// First `n` landmarks (all of them if fewer are available).
    pub fn prefix(&self, n: usize) -> LandmarkSet {
        LandmarkSet {
            points: self.points[..n.min(self.points.len())].to_vec(),
            sigma_k_mm: self.sigma_k_mm,
        }
    }

    /// Checks that the placement sigma is positive when there are points,
    /// that every `k` is an integer pixel of `geom` and every `kh`
    /// lies inside it.
    pub fn validate(&self, geom: &GridGeom) -> Result<()> {
        if !self.points.is_empty() && !(self.sigma_k_mm > 0.0) {
            return Err(Error::invalid("landmark sigma must be positive"));
        }
        for (i, l) in self.points.iter().enumerate() {
            let integer = l.k[0].fract() == 0.0 && l.k[1].fract() == 0.0;
            if !integer || !geom.contains_px(l.k[0], l.k[1]) {
                return Err(Error::invalid(format!("landmark {i}: k must be an integer pixel inside the image")));
            }
            if !geom.contains_px(l.kh[0], l.kh[1]) {
                return Err(Error::invalid(format!("landmark {i}: kh lies outside the image")));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for (id, l) in self.points.iter().enumerate() {
            w.serialize(CsvRow {
                id,
                kx_px: l.k[0],
                ky_px: l.k[1],
                khx_px: l.kh[0],
                khy_px: l.kh[1],
            })
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, sigma_k_mm: f64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut points = Vec::new();
        for row in r.deserialize::<CsvRow>() {
            let row = row.map_err(|e| csv_error(path, e))?;
            points.push(Landmark {
                k: [row.kx_px, row.ky_px],
                kh: [row.khx_px, row.khy_px],
            });
        }
        Ok(LandmarkSet { points, sigma_k_mm })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        what: "landmark csv",
        detail: format!("{}: {e}", path.display()),
    }
}
