//! Procedural two-modality brain-like phantom.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::imagecore::{gaussian_blur, GridGeom, Image2D};
use crate::rng::Rng;
use crate::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const CSF: u8 = 1;
pub const GRAY: u8 = 2;
pub const WHITE: u8 = 3;

/// Class means per modality, indexed by label. The two orders differ so the
/// intensity relation between modalities is not monotonic.
const MEANS_A: [f64; 4] = [8.0, 45.0, 115.0, 175.0];
const MEANS_B: [f64; 4] = [12.0, 210.0, 130.0, 75.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub labels: Vec<u8>,
    /// Modality A (reference contrast).
    pub a: Image2D,
    /// Modality B (floating contrast), pixel-aligned with `a`.
    pub b: Image2D,
}

/// Smooth random field in roughly [-1, 1]: a sum of random plane waves.
struct SmoothNoise {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl SmoothNoise {
    fn new(rng: &mut Rng, n: usize, max_freq: f64) -> Self {
        let waves = (0..n)
            .map(|_| {
                let f = rng.random_range(0.5..max_freq);
                let th = rng.random_range(0.0..2.0 * PI);
                (f * th.cos(), f * th.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.5..1.0))
            })
            .collect();
        SmoothNoise { waves }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.3).sum();
        self.waves
            .iter()
            .map(|&(fx, fy, ph, amp)| amp * (PI * (fx * u + fy * v) + ph).sin())
            .sum::<f64>()
            / total
            * 1.6
    }
}

/// Renders a labelled phantom of `width x height` pixels twice, with
/// different class contrasts and different nonlinear texture mappings, plus
/// mild noise and smoothing.
pub fn generate_phantom_pair(geom: GridGeom, rng: &mut Rng) -> Result<Phantom> {
    if geom.width < 64 || geom.height < 64 {
        return Err(Error::invalid("phantom size must be at least 64 pixels per axis"));
    }
    let (w, h) = (geom.width as f64, geom.height as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let (rx, ry) = (0.42 * w * rng.random_range(0.95..1.05), 0.45 * h * rng.random_range(0.95..1.05));
    let harmonics: Vec<(f64, f64)> = (2..=6)
        .map(|k| (rng.random_range(0.0..0.05) / (k as f64 / 2.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let csf_noise = SmoothNoise::new(rng, 6, 4.0);
    let gm_noise = SmoothNoise::new(rng, 10, 7.0);
    let blobs = SmoothNoise::new(rng, 16, 6.0);
    let tex_a = SmoothNoise::new(rng, 8, 5.0);
    let tex_b = SmoothNoise::new(rng, 8, 5.0);
    // ventricles: two ellipses near the centre
    let vent: Vec<(f64, f64, f64, f64)> = [-1.0, 1.0]
        .iter()
        .map(|&side| {
            (
                side * rng.random_range(0.06..0.12),
                rng.random_range(-0.12..0.0),
                rng.random_range(0.05..0.08),
                rng.random_range(0.15..0.22),
            )
        })
        .collect();

    let mut labels = vec![BACKGROUND; geom.len()];
    let mut a = vec![0.0; geom.len()];
    let mut b = vec![0.0; geom.len()];
    for y in 0..geom.height {
        for x in 0..geom.width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let theta = dy.atan2(dx);
            let scale = 1.0 + harmonics.iter().enumerate().map(|(i, &(amp, ph))| amp * ((i + 2) as f64 * theta + ph).cos()).sum::<f64>();
            let r = ((dx / rx).powi(2) + (dy / ry).powi(2)).sqrt() / scale;
            let (u, v) = (dx / (w / 2.0), dy / (h / 2.0));
            let depth = 1.0 - r;
            let blob = blobs.at(u, v);
            let label = if depth < 0.0 {
                BACKGROUND
            } else if depth < 0.07 + 0.03 * csf_noise.at(u, v) {
                CSF
            } else if blob < -0.4 {
                // sulci and interior pockets
                CSF
            } else if depth < 0.22 + 0.1 * gm_noise.at(u, v) || blob > 0.22 {
                GRAY
            } else if vent.iter().any(|&(vx, vy, ax, ay)| ((u - vx) / ax).powi(2) + ((v - vy) / ay).powi(2) < 1.0) {
                CSF
            } else {
                WHITE
            };
            let i = y * geom.width + x;
            labels[i] = label;
            let l = label as usize;
            let (ta, tb) = (tex_a.at(u, v), tex_b.at(u, v));
            let inside = f64::from(u8::from(label != BACKGROUND));
            a[i] = MEANS_A[l] + inside * (10.0 * ta + 6.0 * ta * ta);
            b[i] = MEANS_B[l] + inside * 12.0 * (1.5 * tb).tanh();
        }
    }
    let noise = Normal::new(0.0, 2.0).expect("valid std");
    for v in a.iter_mut().chain(b.iter_mut()) {
        *v += noise.sample(rng);
    }
    let a = gaussian_blur(&Image2D::from_geom(geom, a)?, 0.6 * geom.spacing);
    let b = gaussian_blur(&Image2D::from_geom(geom, b)?, 0.6 * geom.spacing);
    Ok(Phantom { labels, a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn deterministic_and_contrasts_differ() {
        let g = GridGeom::new(64, 64, 1.0).unwrap();
        let p = generate_phantom_pair(g, &mut Rng::seed_from_u64(4)).unwrap();
        let q = generate_phantom_pair(g, &mut Rng::seed_from_u64(4)).unwrap();
        assert_eq!(p, q);
        let mean_of = |img: &Image2D, label: u8| {
            let v: Vec<f64> = (0..g.len()).filter(|&i| p.labels[i] == label).map(|i| img.data()[i]).collect();
            assert!(!v.is_empty(), "label {label} missing");
            v.iter().sum::<f64>() / v.len() as f64
        };
        let order = |img: &Image2D| {
            let mut l = vec![CSF, GRAY, WHITE];
            l.sort_by(|&x, &y| mean_of(img, x).total_cmp(&mean_of(img, y)));
            l
        };
        assert_ne!(order(&p.a), order(&p.b));
    }
}
