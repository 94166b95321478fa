use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pixel grid shape and isotropic pixel spacing in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeom {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
}

impl GridGeom {
    pub fn new(width: usize, height: usize, spacing: f64) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::invalid(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(GridGeom {
            width,
            height,
            spacing,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Physical extent (mm) covered by pixel centres along x and y.
    pub fn extent_mm(&self) -> (f64, f64) {
        (
            (self.width - 1) as f64 * self.spacing,
            (self.height - 1) as f64 * self.spacing,
        )
    }

    pub fn contains_px(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// Scalar raster with isotropic physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    geom: GridGeom,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, spacing: f64, data: Vec<f64>) -> Result<Self> {
        let geom = GridGeom::new(width, height, spacing)?;
        Self::from_geom(geom, data)
    }

    pub fn from_geom(geom: GridGeom, data: Vec<f64>) -> Result<Self> {
        if data.len() != geom.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}",
                data.len(),
                geom.width,
                geom.height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity at index {i}")));
        }
        Ok(Image2D { geom, data })
    }

    pub fn filled(geom: GridGeom, value: f64) -> Self {
        Image2D {
            geom,
            data: vec![value; geom.len()],
        }
    }

    /// Builds an image from a function of pixel coordinates `(x, y)`.
    pub fn from_fn(geom: GridGeom, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(geom.len());
        for y in 0..geom.height {
            for x in 0..geom.width {
                data.push(f(x, y));
            }
        }
        Self::from_geom(geom, data)
    }

    #[inline]
    pub fn geom(&self) -> GridGeom {
        self.geom
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.geom.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.geom.height
    }
    #[inline]
    pub fn spacing(&self) -> f64 {
        self.geom.spacing
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.geom.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = self.geom.index(x, y);
        self.data[i] = v;
    }

    /// Clamped integer access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.geom.width as isize - 1) as usize;
        let yc = y.clamp(0, self.geom.height as isize - 1) as usize;
        self.data[yc * self.geom.width + xc]
    }

    /// Bilinear interpolation at a continuous pixel coordinate, clamped to the
    /// edge pixels outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> Result<f64> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample coordinate ({x}, {y})")));
        }
        Ok(self.sample_clamped(x, y))
    }

    /// Same as [`sample`](Self::sample) for callers that already guarantee
    /// finite coordinates.
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let w = self.geom.width;
        let h = self.geom.height;
        let xc = x.clamp(0.0, (w - 1) as f64);
        let yc = y.clamp(0.0, (h - 1) as f64);
        let x0 = (xc.floor() as usize).min(w - 2);
        let y0 = (yc.floor() as usize).min(h - 2);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let i = y0 * w + x0;
        let d = &self.data;
        let top = d[i] + fx * (d[i + 1] - d[i]);
        let bot = d[i + w] + fx * (d[i + w + 1] - d[i + w]);
        top + fy * (bot - top)
    }

    /// Bilinear value and its derivatives with respect to the pixel
    /// coordinates. Derivatives vanish along a clamped axis.
    #[inline]
    pub fn sample_with_gradient(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let w = self.geom.width;
        let h = self.geom.height;
        let xmax = (w - 1) as f64;
        let ymax = (h - 1) as f64;
        let (xc, x_in) = if x < 0.0 {
            (0.0, false)
        } else if x > xmax {
            (xmax, false)
        } else {
            (x, true)
        };
        let (yc, y_in) = if y < 0.0 {
            (0.0, false)
        } else if y > ymax {
            (ymax, false)
        } else {
            (y, true)
        };
        let x0 = (xc.floor() as usize).min(w - 2);
        let y0 = (yc.floor() as usize).min(h - 2);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let i = y0 * w + x0;
        let d = &self.data;
        let (v00, v10, v01, v11) = (d[i], d[i + 1], d[i + w], d[i + w + 1]);
        let top = v00 + fx * (v10 - v00);
        let bot = v01 + fx * (v11 - v01);
        let value = top + fy * (bot - top);
        let gx = if x_in {
            (v10 - v00) + fy * ((v11 - v01) - (v10 - v00))
        } else {
            0.0
        };
        let gy = if y_in { bot - top } else { 0.0 };
        (value, gx, gy)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_geom(self.geom, self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn from_parts_unchecked(geom: GridGeom, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), geom.len());
        Image2D { geom, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Image2D {
        let g = GridGeom::new(w, h, 1.0).unwrap();
        Image2D::from_fn(g, |x, y| 2.0 * x as f64 + 3.0 * y as f64).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image2D::new(1, 4, 1.0, vec![0.0; 4]).is_err());
        assert!(Image2D::new(2, 2, 0.0, vec![0.0; 4]).is_err());
        assert!(Image2D::new(2, 2, 1.0, vec![0.0; 3]).is_err());
        assert!(Image2D::new(2, 2, 1.0, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let g = GridGeom::new(8, 8, 1.0).unwrap();
        let img = Image2D::from_fn(g, |x, y| ((x * 31 + y * 17) % 23) as f64).unwrap();
        assert_eq!(img.sample(3.0, 5.0).unwrap(), img.get(3, 5));
        assert_eq!(img.sample(7.0, 7.0).unwrap(), img.get(7, 7));
    }

    #[test]
    fn midpoint_is_average() {
        let img = Image2D::new(2, 2, 1.0, vec![10.0, 20.0, 10.0, 20.0]).unwrap();
        assert_eq!(img.sample(0.5, 0.0).unwrap(), 15.0);
    }

    #[test]
    fn non_finite_coordinate_is_rejected() {
        let img = ramp(4, 4);
        assert!(img.sample(f64::NAN, 1.0).is_err());
        assert!(img.sample(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn clamps_outside() {
        let img = ramp(4, 4);
        assert_eq!(img.sample(-0.5, 0.0).unwrap(), img.get(0, 0));
        assert_eq!(img.sample(3.5, 3.0).unwrap(), img.get(3, 3));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let g = GridGeom::new(6, 5, 1.0).unwrap();
        let img = Image2D::from_fn(g, |x, y| (x as f64 * 0.7).sin() * 10.0 + (y * y) as f64).unwrap();
        let (x, y) = (2.3, 1.7);
        let (_, gx, gy) = img.sample_with_gradient(x, y);
        let h = 1e-6;
        let fdx = (img.sample_clamped(x + h, y) - img.sample_clamped(x - h, y)) / (2.0 * h);
        let fdy = (img.sample_clamped(x, y + h) - img.sample_clamped(x, y - h)) / (2.0 * h);
        assert!((gx - fdx).abs() < 1e-6);
        assert!((gy - fdy).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn bilinear_reproduces_ramp(x in 0.0f64..15.0, y in 0.0f64..11.0) {
            let img = ramp(16, 12);
            let v = img.sample(x, y).unwrap();
            let truth = 2.0 * x + 3.0 * y;
            prop_assert!((v - truth).abs() <= 1e-9 * truth.abs().max(1.0));
        }
    }
}
