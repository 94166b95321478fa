//! Final registration once the synthesis is trained: discrete MAP labeling by
//! graph-cut moves, or a regularized cubic B-spline FFD fitted to the
//! synthesis; plus the mutual-information FFD baseline.

mod graphcut;
mod maxflow;
mod mi;
mod objective;
mod optimizer;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::deformation::{DeformationField, FfdTransform, RegularizerWeights};
use crate::forest::SynthesisPrediction;
use crate::imagecore::{downsample2, Image2D};
use crate::vem::LandmarkSet;
use crate::{Error, Result};

pub use graphcut::{
    map_registration_graphcut, registration_labeling_problem, GraphCutOptions, GraphCutOutcome, LabelingProblem,
    LabelingResult,
};
pub use mi::{histogram_entropy, mutual_information, ParzenMi};
pub use objective::{DataTerm, EnergyTerms, LandmarkPairMm, LevelObjective, MutualInformationTerm, SynthesisTerm};
pub use optimizer::CgReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfdOptions {
    pub control_spacing_mm: f64,
    pub beta_bending: f64,
    pub beta_linear: f64,
    pub beta_jacobian: f64,
    /// Image-term weight; `None` uses `2 / (9 |pixels|)` at every level.
    pub alpha: Option<f64>,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub mi_bins: usize,
}

impl Default for FfdOptions {
    fn default() -> Self {
        FfdOptions {
            control_spacing_mm: 6.0,
            beta_bending: 0.001,
            beta_linear: 0.01,
            beta_jacobian: 0.0,
            alpha: None,
            pyramid_levels: 3,
            max_iterations: 300,
            grad_tol: 1e-6,
            rel_tol: 1e-9,
            mi_bins: 64,
        }
    }
}

impl FfdOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_spacing_mm > 0.0) {
            return Err(Error::invalid("control spacing must be positive"));
        }
        if [self.beta_bending, self.beta_linear, self.beta_jacobian]
            .iter()
            .any(|b| !(*b >= 0.0))
            || self.alpha.is_some_and(|a| !(a >= 0.0))
        {
            return Err(Error::invalid("FFD weights must be non-negative"));
        }
        if self.pyramid_levels == 0 || self.mi_bins < 5 {
            return Err(Error::invalid("need at least one pyramid level and five MI bins"));
        }
        Ok(())
    }

    pub fn regularizer_weights(&self) -> RegularizerWeights {
        RegularizerWeights {
            bending: self.beta_bending,
            linear: self.beta_linear,
            jacobian: self.beta_jacobian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub pixel_spacing_mm: f64,
    pub control_spacing_mm: f64,
    pub initial: EnergyTerms,
    pub last: EnergyTerms,
    pub optimizer: CgReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FfdReport {
    pub data_term: &'static str,
    pub levels: Vec<LevelReport>,
    pub final_terms: EnergyTerms,
    /// `|V(kh) - k|` in mm per landmark at the finest level.
    pub landmark_residuals_mm: Vec<f64>,
    /// False when a level stopped at the iteration limit or on a failed line search.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FfdOutcome {
    pub transform: FfdTransform,
    pub field: DeformationField,
    pub report: FfdReport,
}

/// Landmarks as mm pairs mapping the floating point to the reference point.
pub fn landmark_pairs_mm(landmarks: &LandmarkSet, spacing: f64) -> Vec<LandmarkPairMm> {
    landmarks
        .points
        .iter()
        .map(|l| LandmarkPairMm {
            from: [l.kh[0] * spacing, l.kh[1] * spacing],
            to: [l.k[0] * spacing, l.k[1] * spacing],
        })
        .collect()
}

fn pyramid(img: &Image2D, levels: usize) -> Vec<Image2D> {
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let next = downsample2(out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

/// Coarse-to-fine FFD fit. `make_term(level)` builds the data term for
/// pyramid level `level` (0 = finest).
fn optimize_with(
    moving: &Image2D,
    landmarks: &LandmarkSet,
    opts: &FfdOptions,
    term_name: &'static str,
    make_term: &dyn Fn(usize, &Image2D) -> Result<Box<dyn DataTerm>>,
) -> Result<FfdOutcome> {
    opts.validate()?;
    let fine = moving.geom();
    landmarks.validate(&fine)?;
    let levels = opts.pyramid_levels;
    let moving_pyr = pyramid(moving, levels);
    let lms = landmark_pairs_mm(landmarks, fine.spacing);
    let (ex, ey) = fine.extent_mm();
    let coarse_spacing = opts.control_spacing_mm * 2f64.powi(levels as i32 - 1);
    let mut transform = FfdTransform::identity([ex, ey], coarse_spacing)?;
    let mut reports = Vec::new();
    let mut converged = true;
    let mut last_terms = EnergyTerms::default();
    for level in (0..levels).rev() {
        if level + 1 < levels {
            transform = transform.refine();
        }
        let mov = &moving_pyr[level];
        let term = make_term(level, mov)?;
        let obj = LevelObjective::new(
            mov.geom(),
            mov,
            term.as_ref(),
            &lms,
            landmarks.sigma_k_mm,
            opts.regularizer_weights(),
            &transform,
        );
        let mut params = transform.params();
        let initial = obj.terms(&params);
        let cg = optimizer::minimize_cg(
            |p, g| obj.value_and_gradient(p, g),
            &mut params,
            &optimizer::CgOptions {
                max_iterations: opts.max_iterations,
                grad_tol: opts.grad_tol,
                rel_tol: opts.rel_tol,
                initial_step: 0.5 * mov.spacing(),
            },
        );
        transform.set_params(&params)?;
        last_terms = obj.terms(&params);
        converged &= cg.converged;
        info!(
            "ffd level {level} ({term_name}): {} iterations, energy {:.6e} -> {:.6e} ({})",
            cg.iterations, initial.total, last_terms.total, cg.stop_reason
        );
        reports.push(LevelReport {
            pixel_spacing_mm: mov.spacing(),
            control_spacing_mm: transform.control_spacing_mm(),
            initial,
            last: last_terms,
            optimizer: cg,
        });
    }
    if !converged {
        warn!("ffd optimization ({term_name}) stopped before convergence on at least one level");
    }
    let field = transform.dense_field(&fine)?;
    let residuals = lms
        .iter()
        .map(|l| {
            let v = transform.apply(l.from)?;
            Ok(((v[0] - l.to[0]).powi(2) + (v[1] - l.to[1]).powi(2)).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FfdOutcome {
        transform,
        field,
        report: FfdReport {
            data_term: term_name,
            levels: reports,
            final_terms: last_terms,
            landmark_residuals_mm: residuals,
            converged,
        },
    })
}

fn alpha_for(opts: &FfdOptions, n_pixels: usize) -> f64 {
    opts.alpha.unwrap_or(2.0 / (9.0 * n_pixels as f64))
}

/// FFD registration of `reference` to the synthesized prediction of the
/// floating image: the transform maps floating pixels into the reference.
pub fn optimize_ffd(
    reference: &Image2D,
    prediction: &SynthesisPrediction,
    landmarks: &LandmarkSet,
    opts: &FfdOptions,
) -> Result<FfdOutcome> {
    if prediction.geom != reference.geom() {
        return Err(Error::invalid("prediction grid differs from the reference grid"));
    }
    let mean_pyr = pyramid(&prediction.mean_image()?, opts.pyramid_levels.max(1));
    let var_pyr = pyramid(&prediction.var_image()?, opts.pyramid_levels.max(1));
    let make = |level: usize, _: &Image2D| -> Result<Box<dyn DataTerm>> {
        let alpha = alpha_for(opts, mean_pyr[level].geom().len());
        Ok(Box::new(SynthesisTerm::new(&mean_pyr[level], &var_pyr[level], alpha)))
    };
    optimize_with(reference, landmarks, opts, "synthesis", &make)
}

/// Baseline FFD registration maximizing Parzen mutual information between the
/// warped reference and the floating image.
pub fn optimize_ffd_mi(
    reference: &Image2D,
    floating: &Image2D,
    landmarks: &LandmarkSet,
    opts: &FfdOptions,
) -> Result<FfdOutcome> {
    if floating.geom() != reference.geom() {
        return Err(Error::invalid("floating grid differs from the reference grid"));
    }
    let fixed_pyr = pyramid(floating, opts.pyramid_levels.max(1));
    let make = |level: usize, moving: &Image2D| -> Result<Box<dyn DataTerm>> {
        Ok(Box::new(MutualInformationTerm::new(&fixed_pyr[level], moving, opts.mi_bins)?))
    };
    optimize_with(reference, landmarks, opts, "mutual_information", &make)
}
