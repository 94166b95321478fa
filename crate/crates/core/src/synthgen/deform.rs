use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SynthConfig;
use crate::deformation::{auto_squarings, integrate_velocity, DeformationField, VelocityField};
use crate::imagecore::{gaussian_blur, GridGeom, Image2D};
use crate::rng::{stream, tags};
use crate::Result;

/// Random similarity about the image centre: `p -> c + s R (p - c) + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub rotation_deg: f64,
    pub translation_mm: [f64; 2],
    pub log_scale: f64,
    pub center_mm: [f64; 2],
}

impl Similarity {
    pub fn identity(center_mm: [f64; 2]) -> Self {
        Similarity {
            rotation_deg: 0.0,
            translation_mm: [0.0, 0.0],
            log_scale: 0.0,
            center_mm,
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, th) = (self.log_scale.exp(), self.rotation_deg.to_radians());
        let (c, sn) = (th.cos(), th.sin());
        let d = [p[0] - self.center_mm[0], p[1] - self.center_mm[1]];
        [
            self.center_mm[0] + s * (c * d[0] - sn * d[1]) + self.translation_mm[0],
            self.center_mm[1] + s * (sn * d[0] + c * d[1]) + self.translation_mm[1],
        ]
    }
}

/// Ground-truth deformation and the parts it was built from.
#[derive(Debug, Clone)]
pub struct SampledDeformation {
    /// Flow of the windowed smooth velocity.
    pub nonlinear: DeformationField,
    pub similarity: Similarity,
    /// `x -> S(x + nonlinear(x))` as a displacement.
    pub composed: DeformationField,
    pub squarings: i32,
}

/// Boundary window `1 - exp(-rate * D^2)`, `D` the distance to the border (mm).
pub fn boundary_window(geom: GridGeom, rate: f64) -> Vec<f64> {
    (0..geom.len())
        .map(|i| {
            let (x, y) = (i % geom.width, i / geom.width);
            let d_px = x.min(y).min(geom.width - 1 - x).min(geom.height - 1 - y) as f64;
            let d = d_px * geom.spacing;
            1.0 - (-rate * d * d).exp()
        })
        .collect()
}

/// Smoothed, windowed random velocity field (before integration).
pub fn sample_velocity(geom: GridGeom, cfg: &SynthConfig, seed: u64) -> Result<VelocityField> {
    let mut rng = stream(seed, tags::VELOCITY, 0);
    let window = boundary_window(geom, cfg.window_rate);
    let mut comps = Vec::with_capacity(2);
    for _ in 0..2 {
        let data: Vec<f64> = if cfg.sigma_v_mm > 0.0 {
            let n = Normal::new(0.0, cfg.sigma_v_mm).expect("positive std");
            (0..geom.len()).map(|_| n.sample(&mut rng)).collect()
        } else {
            vec![0.0; geom.len()]
        };
        let smooth = gaussian_blur(&Image2D::from_geom(geom, data)?, cfg.smoothing_sigma_mm);
        comps.push(smooth.data().iter().zip(&window).map(|(v, w)| v * w).collect::<Vec<f64>>());
    }
    let uy = comps.pop().expect("two components");
    let ux = comps.pop().expect("two components");
    Ok(VelocityField::new(DeformationField::from_components(geom, ux, uy)?))
}

pub fn sample_similarity(geom: GridGeom, cfg: &SynthConfig, seed: u64) -> Similarity {
    let mut rng = stream(seed, tags::SIMILARITY, 0);
    let mut draw = |std: f64| {
        if std > 0.0 {
            Normal::new(0.0, std).expect("positive std").sample(&mut rng)
        } else {
            0.0
        }
    };
    let rotation_deg = draw(cfg.rotation_std_deg);
    let tx = draw(cfg.translation_std_px) * geom.spacing;
    let ty = draw(cfg.translation_std_px) * geom.spacing;
    let log_scale = draw(cfg.log_scale_std);
    let (ex, ey) = geom.extent_mm();
    Similarity {
        rotation_deg,
        translation_mm: [tx, ty],
        log_scale,
        center_mm: [ex / 2.0, ey / 2.0],
    }
}

/// Random diffeomorphic deformation: velocity noise, smoothing, boundary
/// window, scaling and squaring, then a random similarity applied after the flow.
pub fn sample_deformation(geom: GridGeom, cfg: &SynthConfig, seed: u64) -> Result<SampledDeformation> {
    let vel = sample_velocity(geom, cfg, seed)?;
    let squarings = cfg.squarings.unwrap_or_else(|| auto_squarings(&vel));
    let nonlinear = integrate_velocity(&vel, squarings)?;
    let similarity = sample_similarity(geom, cfg, seed);
    let s = geom.spacing;
    let composed = DeformationField::from_fn(geom, |x, y| {
        let (ux, uy) = nonlinear.at(x, y);
        let p = [x as f64 * s, y as f64 * s];
        let q = similarity.apply([p[0] + ux, p[1] + uy]);
        (q[0] - p[0], q[1] - p[1])
    })?;
    Ok(SampledDeformation {
        nonlinear,
        similarity,
        composed,
        squarings,
    })
}
