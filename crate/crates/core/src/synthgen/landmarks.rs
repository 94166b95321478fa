use log::info;
use rand_distr::{Distribution, Normal};

use crate::deformation::DeformationField;
use crate::imagecore::{harris_response, HarrisParams, Image2D};
use crate::rng::Rng;
use crate::vem::{Landmark, LandmarkSet};
use crate::{Error, Result};

/// Greedy Harris maxima with complementary-Gaussian suppression: after each
/// pick the response is multiplied by `1 - exp(-0.5 |x - x_max|^2 / sigma^2)`
/// (per-axis `sigma` in pixels). Ties go to the first pixel in raster order.
pub fn place_landmarks(
    img: &Image2D,
    n: usize,
    suppression_sigma_px: [f64; 2],
    harris: &HarrisParams,
) -> Result<Vec<[usize; 2]>> {
    let g = img.geom();
    if n > g.len() {
        return Err(Error::invalid("more landmarks requested than pixels"));
    }
    if !(suppression_sigma_px[0] > 0.0 && suppression_sigma_px[1] > 0.0) {
        return Err(Error::invalid("suppression sigma must be positive"));
    }
    let mut r = harris_response(img, harris.k, harris.integration_sigma_mm)?.into_data();
    let mut picked: Vec<[usize; 2]> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best = 0;
        for i in 1..r.len() {
            if r[i] > r[best] {
                best = i;
            }
        }
        let (bx, by) = (best % g.width, best / g.width);
        picked.push([bx, by]);
        for (i, v) in r.iter_mut().enumerate() {
            let dx = ((i % g.width) as f64 - bx as f64) / suppression_sigma_px[0];
            let dy = ((i / g.width) as f64 - by as f64) / suppression_sigma_px[1];
            *v *= 1.0 - (-0.5 * (dx * dx + dy * dy)).exp();
        }
        // a picked pixel must never win again, even when every response is negative
        r[best] = f64::NEG_INFINITY;
    }
    Ok(picked)
}

/// Pushes each point through `field` (pixel `k` goes to `k + field(k)`),
/// adds isotropic Gaussian noise of std `sigma_k_mm` and drops points that
/// leave the image. Returns the set and the number dropped.
pub fn project_landmarks(
    points: &[[usize; 2]],
    field: &DeformationField,
    sigma_k_mm: f64,
    rng: &mut Rng,
) -> Result<(LandmarkSet, usize)> {
    let g = field.geom();
    if !(sigma_k_mm >= 0.0) {
        return Err(Error::invalid("landmark noise must be non-negative"));
    }
    let noise = (sigma_k_mm > 0.0).then(|| Normal::new(0.0, sigma_k_mm / g.spacing).expect("positive std"));
    let mut out = Vec::with_capacity(points.len());
    let mut dropped = 0;
    for &[x, y] in points {
        if x >= g.width || y >= g.height {
            return Err(Error::invalid("landmark outside the image"));
        }
        let (ux, uy) = field.at(x, y);
        let (nx, ny) = match &noise {
            Some(n) => (n.sample(rng), n.sample(rng)),
            None => (0.0, 0.0),
        };
        let kh = [x as f64 + ux / g.spacing + nx, y as f64 + uy / g.spacing + ny];
        if g.contains_px(kh[0], kh[1]) {
            out.push(Landmark {
                k: [x as f64, y as f64],
                kh,
            });
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        info!("dropped {dropped} landmark(s) projected outside the image");
    }
    Ok((
        LandmarkSet {
            points: out,
            sigma_k_mm,
        },
        dropped,
    ))
}
