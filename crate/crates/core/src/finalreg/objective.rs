//! FFD registration objective on one pyramid level: a pluggable image data
//! term, the landmark term and the transform regularizers.

use serde::Serialize;

use super::mi::ParzenMi;
use crate::deformation::{AxisWeights, FfdTransform, RegularizerWeights};
use crate::imagecore::{GridGeom, Image2D};
use crate::Result;

/// Image similarity term evaluated on moving-image samples taken at the
/// transformed positions of every level pixel.
pub trait DataTerm: Send + Sync {
    fn name(&self) -> &'static str;
    /// Energy of `warped`, and `dE/dwarped` per pixel when `grad` is given.
    fn evaluate(&self, warped: &[f64], grad: Option<&mut [f64]>) -> f64;
}

/// `alpha * sum (w - mu)^2 / (2 var)` against a synthesized prediction.
#[derive(Debug, Clone)]
pub struct SynthesisTerm {
    mean: Vec<f64>,
    inv_var: Vec<f64>,
    alpha: f64,
}

impl SynthesisTerm {
    pub fn new(mean: &Image2D, var: &Image2D, alpha: f64) -> Self {
        SynthesisTerm {
            mean: mean.data().to_vec(),
            inv_var: var.data().iter().map(|v| 1.0 / v.max(1e-12)).collect(),
            alpha,
        }
    }
}

impl DataTerm for SynthesisTerm {
    fn name(&self) -> &'static str {
        "synthesis"
    }

    fn evaluate(&self, warped: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut e = 0.0;
        match grad {
            Some(g) => {
                for i in 0..warped.len() {
                    let r = warped[i] - self.mean[i];
                    e += r * r * self.inv_var[i];
                    g[i] = self.alpha * r * self.inv_var[i];
                }
            }
            None => {
                for i in 0..warped.len() {
                    let r = warped[i] - self.mean[i];
                    e += r * r * self.inv_var[i];
                }
            }
        }
        0.5 * self.alpha * e
    }
}

/// Negative Parzen mutual information against the fixed image.
#[derive(Debug, Clone)]
pub struct MutualInformationTerm {
    mi: ParzenMi,
}

impl MutualInformationTerm {
    pub fn new(fixed: &Image2D, moving: &Image2D, bins: usize) -> Result<Self> {
        Ok(MutualInformationTerm {
            mi: ParzenMi::new(fixed, moving.min_max(), bins)?,
        })
    }
}

impl DataTerm for MutualInformationTerm {
    fn name(&self) -> &'static str {
        "mutual_information"
    }

    fn evaluate(&self, warped: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match grad {
            Some(g) => {
                let mi = self.mi.evaluate(warped, Some(g));
                g.iter_mut().for_each(|v| *v = -*v);
                -mi
            }
            None => -self.mi.evaluate(warped, None),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyTerms {
    pub data: f64,
    pub landmarks: f64,
    pub bending: f64,
    pub linear: f64,
    pub jacobian: f64,
    pub total: f64,
}

/// Landmark pair in mm: the transform should map `from` (floating) to `to`.
#[derive(Debug, Clone, Copy)]
pub struct LandmarkPairMm {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

pub struct LevelObjective<'a> {
    pub grid: GridGeom,
    pub moving: &'a Image2D,
    pub term: &'a dyn DataTerm,
    pub landmarks: &'a [LandmarkPairMm],
    pub sigma_k_mm: f64,
    pub weights: RegularizerWeights,
    template: FfdTransform,
    wx: Vec<AxisWeights>,
    wy: Vec<AxisWeights>,
    lm_weights: Vec<(AxisWeights, AxisWeights)>,
}

impl<'a> LevelObjective<'a> {
    pub fn new(
        grid: GridGeom,
        moving: &'a Image2D,
        term: &'a dyn DataTerm,
        landmarks: &'a [LandmarkPairMm],
        sigma_k_mm: f64,
        weights: RegularizerWeights,
        template: &FfdTransform,
    ) -> Self {
        let wx = (0..grid.width).map(|i| template.weights_x(i as f64 * grid.spacing)).collect();
        let wy = (0..grid.height).map(|j| template.weights_y(j as f64 * grid.spacing)).collect();
        let lm_weights = landmarks
            .iter()
            .map(|l| (template.weights_x(l.from[0]), template.weights_y(l.from[1])))
            .collect();
        LevelObjective {
            grid,
            moving,
            term,
            landmarks,
            sigma_k_mm,
            weights,
            template: template.clone(),
            wx,
            wy,
            lm_weights,
        }
    }

    fn with_params(&self, params: &[f64]) -> FfdTransform {
        let mut t = self.template.clone();
        t.set_params(params).expect("parameter length fixed by the template");
        t
    }

    /// Objective value; accumulates the gradient into `grad` (overwritten).
    pub fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(params, Some(grad)).total
    }

    pub fn terms(&self, params: &[f64]) -> EnergyTerms {
        self.evaluate(params, None)
    }

    fn evaluate(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> EnergyTerms {
        let t = self.with_params(params);
        let g = self.grid;
        let sp = self.moving.spacing();
        let n = g.len();
        let ncp = t.n_params() / 2;
        let nx = t.grid_dims().0;
        let mut warped = vec![0.0; n];
        let mut dwarp = vec![(0.0, 0.0); n];
        for (y, wy) in self.wy.iter().enumerate() {
            for (x, wx) in self.wx.iter().enumerate() {
                let (ux, uy) = t.displacement_with(wx, wy);
                let px = (x as f64 * g.spacing + ux) / sp;
                let py = (y as f64 * g.spacing + uy) / sp;
                let (v, gx, gy) = self.moving.sample_with_gradient(px, py);
                let i = y * g.width + x;
                warped[i] = v;
                dwarp[i] = (gx / sp, gy / sp);
            }
        }
        let mut terms = EnergyTerms::default();
        if let Some(gr) = grad.as_deref_mut() {
            gr.iter_mut().for_each(|v| *v = 0.0);
            let mut dw = vec![0.0; n];
            terms.data = self.term.evaluate(&warped, Some(&mut dw));
            for (y, wy) in self.wy.iter().enumerate() {
                for (x, wx) in self.wx.iter().enumerate() {
                    let i = y * g.width + x;
                    let (ex, ey) = (dw[i] * dwarp[i].0, dw[i] * dwarp[i].1);
                    if ex == 0.0 && ey == 0.0 {
                        continue;
                    }
                    scatter(gr, nx, ncp, wx, wy, ex, ey);
                }
            }
        } else {
            terms.data = self.term.evaluate(&warped, None);
        }

        let inv = 1.0 / (self.sigma_k_mm * self.sigma_k_mm);
        for (l, (wx, wy)) in self.landmarks.iter().zip(&self.lm_weights) {
            let (ux, uy) = t.displacement_with(wx, wy);
            let r = [l.from[0] + ux - l.to[0], l.from[1] + uy - l.to[1]];
            terms.landmarks += 0.5 * inv * (r[0] * r[0] + r[1] * r[1]);
            if let Some(gr) = grad.as_deref_mut() {
                scatter(gr, nx, ncp, wx, wy, inv * r[0], inv * r[1]);
            }
        }

        let regs = t.regularizers(&g);
        terms.bending = regs.bending;
        terms.linear = regs.linear;
        terms.jacobian = regs.jacobian;
        let reg_value = match grad {
            Some(gr) => t.regularizer_value_and_gradient(&g, self.weights, gr),
            None => {
                let w = self.weights;
                let j = if w.jacobian != 0.0 { w.jacobian * regs.jacobian } else { 0.0 };
                w.bending * regs.bending + w.linear * regs.linear + j
            }
        };
        terms.total = terms.data + terms.landmarks + reg_value;
        terms
    }
}

#[inline]
fn scatter(grad: &mut [f64], nx: usize, ncp: usize, wx: &AxisWeights, wy: &AxisWeights, ex: f64, ey: f64) {
    for b in 0..4 {
        let row = (wy.first + b) * nx + wx.first;
        let wb = wy.w[b];
        for a in 0..4 {
            let w = wx.w[a] * wb;
            grad[row + a] += w * ex;
            grad[ncp + row + a] += w * ey;
        }
    }
}
