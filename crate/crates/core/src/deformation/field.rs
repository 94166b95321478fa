use crate::imagecore::{GridGeom, Image2D};
use crate::{Error, Result};

/// Per-pixel 2D displacement in mm on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    geom: GridGeom,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl DeformationField {
    pub fn zeros(geom: GridGeom) -> Self {
        DeformationField {
            geom,
            ux: vec![0.0; geom.len()],
            uy: vec![0.0; geom.len()],
        }
    }

    pub fn constant(geom: GridGeom, dx_mm: f64, dy_mm: f64) -> Self {
        DeformationField {
            geom,
            ux: vec![dx_mm; geom.len()],
            uy: vec![dy_mm; geom.len()],
        }
    }

    pub fn from_components(geom: GridGeom, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        if ux.len() != geom.len() || uy.len() != geom.len() {
            return Err(Error::invalid("displacement components do not match grid"));
        }
        if ux.iter().chain(&uy).any(|v| !v.is_finite()) {
            return Err(Error::invalid("displacement field has non-finite values"));
        }
        Ok(DeformationField { geom, ux, uy })
    }

    pub fn from_fn(geom: GridGeom, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Result<Self> {
        let mut ux = Vec::with_capacity(geom.len());
        let mut uy = Vec::with_capacity(geom.len());
        for y in 0..geom.height {
            for x in 0..geom.width {
                let (a, b) = f(x, y);
                ux.push(a);
                uy.push(b);
            }
        }
        Self::from_components(geom, ux, uy)
    }

    #[inline]
    pub fn geom(&self) -> GridGeom {
        self.geom
    }
    pub fn ux(&self) -> &[f64] {
        &self.ux
    }
    pub fn uy(&self) -> &[f64] {
        &self.uy
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = self.geom.index(x, y);
        (self.ux[i], self.uy[i])
    }

    /// Bilinear, edge-clamped displacement (mm) at a continuous pixel coordinate.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let w = self.geom.width;
        let h = self.geom.height;
        let xc = x.clamp(0.0, (w - 1) as f64);
        let yc = y.clamp(0.0, (h - 1) as f64);
        let x0 = (xc.floor() as usize).min(w - 2);
        let y0 = (yc.floor() as usize).min(h - 2);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let i = y0 * w + x0;
        let lerp = |d: &[f64]| {
            let top = d[i] + fx * (d[i + 1] - d[i]);
            let bot = d[i + w] + fx * (d[i + w + 1] - d[i + w]);
            top + fy * (bot - top)
        };
        (lerp(&self.ux), lerp(&self.uy))
    }

    /// Largest displacement magnitude in pixels.
    pub fn max_norm_px(&self) -> f64 {
        self.ux
            .iter()
            .zip(&self.uy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
            / self.geom.spacing
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DeformationField {
            geom: self.geom,
            ux: self.ux.iter().map(|v| v * factor).collect(),
            uy: self.uy.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self(x) + other(x + self(x))`: the displacement of applying `self`
    /// first and then `other`, with `other` resampled bilinearly.
    pub fn compose(&self, other: &DeformationField) -> Result<Self> {
        if self.geom != other.geom {
            return Err(Error::invalid("cannot compose fields on different grids"));
        }
        let s = self.geom.spacing;
        let mut ux = Vec::with_capacity(self.geom.len());
        let mut uy = Vec::with_capacity(self.geom.len());
        for y in 0..self.geom.height {
            for x in 0..self.geom.width {
                let (a, b) = self.at(x, y);
                let (c, d) = other.sample(x as f64 + a / s, y as f64 + b / s);
                ux.push(a + c);
                uy.push(b + d);
            }
        }
        Ok(DeformationField {
            geom: self.geom,
            ux,
            uy,
        })
    }
}

/// Stationary velocity field in mm per unit time.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField(DeformationField);

impl VelocityField {
    pub fn new(field: DeformationField) -> Self {
        VelocityField(field)
    }
    pub fn as_field(&self) -> &DeformationField {
        &self.0
    }
    pub fn geom(&self) -> GridGeom {
        self.0.geom
    }
}

/// `out(x) = img(x + u(x))`, bilinear with edge clamping.
pub fn warp_image(img: &Image2D, field: &DeformationField) -> Result<Image2D> {
    let g = img.geom();
    if g.width != field.geom.width || g.height != field.geom.height {
        return Err(Error::invalid(format!(
            "field {}x{} does not match image {}x{}",
            field.geom.width, field.geom.height, g.width, g.height
        )));
    }
    let s = g.spacing;
    let data = (0..g.len())
        .map(|i| {
            let (x, y) = (i % g.width, i / g.width);
            img.sample_clamped(x as f64 + field.ux[i] / s, y as f64 + field.uy[i] / s)
        })
        .collect();
    Image2D::from_geom(g, data)
}

/// Smallest number of squarings that brings the scaled velocity below half a
/// pixel, plus two for accuracy of the resampled compositions.
pub fn auto_squarings(vel: &VelocityField) -> i32 {
    let m = vel.0.max_norm_px();
    let mut s = 0;
    while m / 2f64.powi(s) >= 0.5 {
        s += 1;
    }
    s + 2
}

/// Time-one flow of a stationary velocity field by scaling and squaring.
pub fn integrate_velocity(vel: &VelocityField, squarings: i32) -> Result<DeformationField> {
    if squarings < 0 {
        return Err(Error::invalid(format!("squarings must be >= 0, got {squarings}")));
    }
    let mut u = vel.0.scaled(1.0 / 2f64.powi(squarings));
    for _ in 0..squarings {
        u = u.compose(&u)?;
    }
    Ok(u)
}

/// Minimum of `det(I + grad u)` over interior pixels, by central differences.
pub fn min_jacobian_determinant(field: &DeformationField) -> Result<f64> {
    let g = field.geom;
    if g.width < 3 || g.height < 3 {
        return Err(Error::invalid("jacobian needs at least 3 pixels per axis"));
    }
    let inv = 0.5 / g.spacing;
    let mut min = f64::INFINITY;
    for y in 1..g.height - 1 {
        for x in 1..g.width - 1 {
            let (xp, xm) = (field.at(x + 1, y), field.at(x - 1, y));
            let (yp, ym) = (field.at(x, y + 1), field.at(x, y - 1));
            let a = 1.0 + (xp.0 - xm.0) * inv;
            let b = (yp.0 - ym.0) * inv;
            let c = (xp.1 - xm.1) * inv;
            let d = 1.0 + (yp.1 - ym.1) * inv;
            min = min.min(a * d - b * c);
        }
    }
    Ok(min)
}

/// Approximate inverse displacement `w` with `y = x + w(x)` satisfying
/// `y + u(y) = x`, by fixed-point iteration per pixel.
pub fn invert_field(field: &DeformationField, iterations: usize) -> DeformationField {
    let g = field.geom;
    let s = g.spacing;
    let mut ux = Vec::with_capacity(g.len());
    let mut uy = Vec::with_capacity(g.len());
    for y in 0..g.height {
        for x in 0..g.width {
            let (px, py) = (x as f64, y as f64);
            let (a, b) = field.at(x, y);
            let (mut qx, mut qy) = (px - a / s, py - b / s);
            for _ in 0..iterations {
                let (a, b) = field.sample(qx, qy);
                let (nx, ny) = (px - a / s, py - b / s);
                let done = (nx - qx).abs() < 1e-12 && (ny - qy).abs() < 1e-12;
                qx = nx;
                qy = ny;
                if done {
                    break;
                }
            }
            ux.push((qx - px) * s);
            uy.push((qy - py) * s);
        }
    }
    DeformationField { geom: g, ux, uy }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(n: usize) -> GridGeom {
        GridGeom::new(n, n, 1.0).unwrap()
    }

    fn ramp(n: usize) -> Image2D {
        Image2D::from_fn(geom(n), |x, y| 2.0 * x as f64 + 3.0 * y as f64).unwrap()
    }

    #[test]
    fn zero_field_is_identity_warp() {
        let img = ramp(8);
        let out = warp_image(&img, &DeformationField::zeros(img.geom())).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn unit_shift_moves_image() {
        let img = Image2D::from_fn(geom(6), |x, y| (x * 10 + y) as f64).unwrap();
        let out = warp_image(&img, &DeformationField::constant(img.geom(), 1.0, 0.0)).unwrap();
        for y in 0..6 {
            for x in 0..5 {
                assert_eq!(out.get(x, y), img.get(x + 1, y));
            }
            assert_eq!(out.get(5, y), img.get(5, y));
        }
    }

    #[test]
    fn warp_of_ramp_is_analytic() {
        let img = ramp(16);
        let f = DeformationField::from_fn(img.geom(), |x, y| {
            (0.7 * ((x + y) as f64 * 0.3).sin(), -0.4 * (y as f64 * 0.2).cos())
        })
        .unwrap();
        let out = warp_image(&img, &f).unwrap();
        for y in 1..15 {
            for x in 1..15 {
                let (a, b) = f.at(x, y);
                let truth = 2.0 * (x as f64 + a) + 3.0 * (y as f64 + b);
                assert!((out.get(x, y) - truth).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn warp_rejects_mismatch() {
        let img = ramp(8);
        assert!(warp_image(&img, &DeformationField::zeros(geom(7))).is_err());
    }

    #[test]
    fn identity_warp_then_field_equals_field() {
        let img = Image2D::from_fn(geom(12), |x, y| ((x * 7 + y * 3) % 13) as f64).unwrap();
        let f = DeformationField::from_fn(img.geom(), |x, _| (0.3 * x as f64 / 11.0, 0.25)).unwrap();
        let once = warp_image(&img, &f).unwrap();
        let twice = warp_image(&warp_image(&img, &DeformationField::zeros(img.geom())).unwrap(), &f).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn integrate_zero_and_constant() {
        let g = geom(10);
        let z = integrate_velocity(&VelocityField::new(DeformationField::zeros(g)), 4).unwrap();
        assert!(z.ux().iter().chain(z.uy()).all(|&v| v == 0.0));
        let v = VelocityField::new(DeformationField::constant(g, 1.5, -0.75));
        let u = integrate_velocity(&v, 5).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let (a, b) = u.at(x, y);
                assert!((a - 1.5).abs() < 1e-12 && (b + 0.75).abs() < 1e-12);
            }
        }
        assert!(integrate_velocity(&v, -1).is_err());
    }

    #[test]
    fn jacobian_of_identity_and_dilation() {
        let g = geom(9);
        assert_eq!(min_jacobian_determinant(&DeformationField::zeros(g)).unwrap(), 1.0);
        let d = DeformationField::from_fn(g, |x, y| (0.1 * x as f64, 0.1 * y as f64)).unwrap();
        assert!((min_jacobian_determinant(&d).unwrap() - 1.21).abs() < 1e-12);
        assert!(min_jacobian_determinant(&DeformationField::zeros(GridGeom::new(2, 5, 1.0).unwrap())).is_err());
    }

    #[test]
    fn inverse_of_smooth_field() {
        let g = geom(24);
        let f = DeformationField::from_fn(g, |x, y| {
            (1.2 * (x as f64 * 0.2).sin(), 0.8 * (y as f64 * 0.15 + 0.3).cos())
        })
        .unwrap();
        let inv = invert_field(&f, 100);
        for y in 4..20 {
            for x in 4..20 {
                let (a, b) = inv.at(x, y);
                let (qx, qy) = (x as f64 + a, y as f64 + b);
                let (c, d) = f.sample(qx, qy);
                assert!((qx + c - x as f64).abs() < 1e-9);
                assert!((qy + d - y as f64).abs() < 1e-9);
            }
        }
    }
}
