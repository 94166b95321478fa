use super::filter::{central_difference_x, central_difference_y, gaussian_blur};
use super::image::{GridGeom, Image2D};
use crate::{Error, Result};

/// Per-pixel feature vectors, pixel-major.
///
/// Layout per pixel: for each scale, for each order `k = 0..=max_order`, the
/// derivatives `d^i/dx^i d^(k-i)/dy^(k-i)` for `i = k` down to `0`; then the
/// two location features `x / (w - 1)` and `y / (h - 1)`.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    geom: GridGeom,
    n_features: usize,
    scales_mm: Vec<f64>,
    max_order: usize,
    data: Vec<f64>,
}

impl FeatureStack {
    pub fn geom(&self) -> GridGeom {
        self.geom
    }
    pub fn n_features(&self) -> usize {
        self.n_features
    }
    pub fn n_pixels(&self) -> usize {
        self.geom.len()
    }
    pub fn scales_mm(&self) -> &[f64] {
        &self.scales_mm
    }
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_features..(p + 1) * self.n_features]
    }

    /// Feature count produced for the given settings.
    pub fn count_for(n_scales: usize, max_order: usize) -> usize {
        (0..=max_order).map(|k| k + 1).sum::<usize>() * n_scales + 2
    }

    /// Builds a stack from raw rows, mainly for tests and model import.
    pub fn from_rows(geom: GridGeom, n_features: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != geom.len() * n_features {
            return Err(Error::invalid("feature data does not match grid"));
        }
        Ok(FeatureStack {
            geom,
            n_features,
            scales_mm: Vec::new(),
            max_order: 0,
            data,
        })
    }
}

/// Multi-scale Gaussian derivative features plus normalized location.
///
/// Scale `0` differentiates the raw image; other scales smooth with a
/// truncated Gaussian first. Derivatives are in intensity per mm^order.
pub fn gaussian_derivative_features(
    img: &Image2D,
    scales_mm: &[f64],
    max_order: usize,
) -> Result<FeatureStack> {
    if max_order > 3 {
        return Err(Error::invalid(format!("max_order must be <= 3, got {max_order}")));
    }
    let geom = img.geom();
    let (ex, ey) = geom.extent_mm();
    let extent = ex.min(ey);
    for &s in scales_mm {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::invalid(format!("feature scale must be >= 0, got {s}")));
        }
        if s > extent {
            return Err(Error::invalid(format!(
                "feature scale {s} mm exceeds image extent {extent} mm"
            )));
        }
    }
    let n_features = FeatureStack::count_for(scales_mm.len(), max_order);
    let n = geom.len();
    let mut columns: Vec<Image2D> = Vec::with_capacity(n_features - 2);
    for &s in scales_mm {
        let base = gaussian_blur(img, s);
        // x-derivative chains: dx_chain[i] = d^i/dx^i base
        let mut dx_chain = vec![base];
        for i in 1..=max_order {
            let next = central_difference_x(&dx_chain[i - 1]);
            dx_chain.push(next);
        }
        for k in 0..=max_order {
            for i in (0..=k).rev() {
                let mut d = dx_chain[i].clone();
                for _ in 0..(k - i) {
                    d = central_difference_y(&d);
                }
                columns.push(d);
            }
        }
    }
    let wx = (geom.width - 1) as f64;
    let wy = (geom.height - 1) as f64;
    let mut data = Vec::with_capacity(n * n_features);
    for p in 0..n {
        for c in &columns {
            data.push(c.data()[p]);
        }
        data.push((p % geom.width) as f64 / wx);
        data.push((p / geom.width) as f64 / wy);
    }
    Ok(FeatureStack {
        geom,
        n_features,
        scales_mm: scales_mm.to_vec(),
        max_order,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(w: usize, h: usize) -> GridGeom {
        GridGeom::new(w, h, 1.0).unwrap()
    }

    #[test]
    fn default_settings_give_32_features() {
        let img = Image2D::filled(geom(40, 40), 1.0);
        let f = gaussian_derivative_features(&img, &[0.0, 2.0, 4.0], 3).unwrap();
        assert_eq!(f.n_features(), 32);
        assert_eq!(FeatureStack::count_for(3, 3), 32);
    }

    #[test]
    fn constant_image_has_zero_derivatives() {
        let img = Image2D::filled(geom(24, 20), 7.5);
        let f = gaussian_derivative_features(&img, &[0.0, 2.0, 4.0], 3).unwrap();
        for p in 0..f.n_pixels() {
            let v = f.pixel(p);
            for s in 0..3 {
                let block = &v[s * 10..(s + 1) * 10];
                assert!((block[0] - 7.5).abs() < 1e-12);
                assert!(block[1..].iter().all(|&d| d == 0.0));
            }
        }
    }

    #[test]
    fn ramp_derivative_at_scale_zero() {
        let g = GridGeom::new(12, 10, 0.5).unwrap();
        let img = Image2D::from_fn(g, |x, _| 5.0 * x as f64).unwrap();
        let f = gaussian_derivative_features(&img, &[0.0], 1).unwrap();
        // [f, dx, dy, locx, locy]
        for y in 1..9 {
            for x in 1..11 {
                let v = f.pixel(y * 12 + x);
                assert!((v[1] - 5.0 / 0.5).abs() < 1e-12);
                assert_eq!(v[2], 0.0);
            }
        }
    }

    #[test]
    fn location_features_normalized() {
        let img = Image2D::filled(geom(5, 3), 0.0);
        let f = gaussian_derivative_features(&img, &[0.0], 0).unwrap();
        let last = f.pixel(14);
        assert_eq!(&last[1..], &[1.0, 1.0]);
        assert_eq!(&f.pixel(0)[1..], &[0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_settings() {
        let img = Image2D::filled(geom(8, 8), 0.0);
        assert!(gaussian_derivative_features(&img, &[0.0], 4).is_err());
        assert!(gaussian_derivative_features(&img, &[-1.0], 1).is_err());
        assert!(gaussian_derivative_features(&img, &[100.0], 1).is_err());
    }

    #[test]
    fn translation_commutes_on_interior() {
        let g = geom(48, 48);
        let blob = |x: f64, y: f64| {
            let r2 = (x - 20.0).powi(2) + 0.5 * (y - 22.0).powi(2);
            100.0 * (-r2 / 30.0).exp() + 40.0 * (-((x - 26.0).powi(2) + (y - 18.0).powi(2)) / 8.0).exp()
        };
        let a = Image2D::from_fn(g, |x, y| blob(x as f64, y as f64)).unwrap();
        let b = Image2D::from_fn(g, |x, y| blob(x as f64 - 3.0, y as f64 + 2.0)).unwrap();
        let fa = gaussian_derivative_features(&a, &[0.0, 2.0, 4.0], 3).unwrap();
        let fb = gaussian_derivative_features(&b, &[0.0, 2.0, 4.0], 3).unwrap();
        // full kernel support (4 sigma at 4 mm plus the derivative stencil) in both images
        for y in 20..30 {
            for x in 18..27 {
                let va = fa.pixel(y * 48 + x);
                let vb = fb.pixel((y - 2) * 48 + x + 3);
                for k in 0..30 {
                    assert!((va[k] - vb[k]).abs() < 1e-6, "feature {k} at ({x},{y})");
                }
            }
        }
    }
}
