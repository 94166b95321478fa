use serde::{Deserialize, Serialize};

use super::filter::{blur_slice, central_difference_x, central_difference_y};
use super::image::Image2D;
use crate::{Error, Result};

/// Harris detector settings. Neither value is fixed by the method; these are
/// common defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarrisParams {
    pub k: f64,
    pub integration_sigma_mm: f64,
}

impl Default for HarrisParams {
    fn default() -> Self {
        HarrisParams {
            k: 0.04,
            integration_sigma_mm: 2.0,
        }
    }
}

/// `det(T) - k * trace(T)^2` of the structure tensor `T` built from central
/// differences and smoothed at the integration scale.
pub fn harris_response(img: &Image2D, k: f64, integration_sigma_mm: f64) -> Result<Image2D> {
    if !(k > 0.0 && k <= 0.25) {
        return Err(Error::invalid(format!("harris k must be in (0, 0.25], got {k}")));
    }
    if !(integration_sigma_mm > 0.0) {
        return Err(Error::invalid("integration sigma must be positive"));
    }
    let geom = img.geom();
    let gx = central_difference_x(img);
    let gy = central_difference_y(img);
    let (gx, gy) = (gx.data(), gy.data());
    let xx: Vec<f64> = gx.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = gy.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = gx.iter().zip(gy).map(|(a, b)| a * b).collect();
    let xx = blur_slice(geom, &xx, integration_sigma_mm);
    let yy = blur_slice(geom, &yy, integration_sigma_mm);
    let xy = blur_slice(geom, &xy, integration_sigma_mm);
    let r = (0..geom.len())
        .map(|i| {
            let det = xx[i] * yy[i] - xy[i] * xy[i];
            let tr = xx[i] + yy[i];
            det - k * tr * tr
        })
        .collect();
    Image2D::from_geom(geom, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::GridGeom;

    fn g(n: usize) -> GridGeom {
        GridGeom::new(n, n, 1.0).unwrap()
    }

    #[test]
    fn constant_image_has_zero_response() {
        let r = harris_response(&Image2D::filled(g(10), 3.0), 0.04, 2.0).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_is_not_a_corner() {
        let img = Image2D::from_fn(g(24), |x, _| if x < 12 { 0.0 } else { 100.0 }).unwrap();
        let r = harris_response(&img, 0.04, 1.0).unwrap();
        for y in 4..20 {
            for x in 10..14 {
                assert!(r.get(x, y) <= 1e-9, "({x},{y}) -> {}", r.get(x, y));
            }
        }
    }

    #[test]
    fn checkerboard_corner_is_local_max() {
        let img = Image2D::from_fn(g(16), |x, y| if (x < 8) ^ (y < 8) { 100.0 } else { 0.0 }).unwrap();
        let r = harris_response(&img, 0.04, 1.0).unwrap();
        // the corner lies between pixels 7 and 8; the peak is one of the four
        // pixels around it and must beat everything outside that block
        let peak = [(7, 7), (8, 7), (7, 8), (8, 8)]
            .iter()
            .map(|&(x, y)| r.get(x, y))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(peak > 0.0);
        for y in 3..13 {
            for x in 3..13 {
                if (7..=8).contains(&x) && (7..=8).contains(&y) {
                    continue;
                }
                assert!(r.get(x, y) < peak);
            }
        }
    }

    #[test]
    fn invariant_to_offset() {
        let img = Image2D::from_fn(g(20), |x, y| ((x * 7 + y * 13) % 11) as f64 * 9.0).unwrap();
        let shifted = img.map(|v| v + 1234.5).unwrap();
        let a = harris_response(&img, 0.04, 2.0).unwrap();
        let b = harris_response(&shifted, 0.04, 2.0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_params() {
        let img = Image2D::filled(g(8), 0.0);
        assert!(harris_response(&img, 0.0, 1.0).is_err());
        assert!(harris_response(&img, 0.3, 1.0).is_err());
        assert!(harris_response(&img, 0.04, 0.0).is_err());
    }
}
