//! Variational EM over a discrete shift field and the synthesis forest.
//!
//! For each floating pixel `x` the label `s` says that `x` corresponds to the
//! reference point `x + D_s`. The E-step updates the factorized posterior
//! `q_x(s)` by mean-field coordinate ascent, the M-step retrains the forest on
//! targets displaced by shifts drawn from `q`.

mod catalog;
mod landmarks;
mod meanfield;
mod posterior;

use std::f64::consts::PI;
use std::path::Path;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deformation::DeformationField;
use crate::forest::{train_forest, FeatureConfig, ForestHyperparams, ForestModel, SynthesisPrediction, TrainingImage};
use crate::imagecore::io::write_raster_f32;
use crate::imagecore::{FeatureStack, Image2D};
use crate::{Error, Result};

pub use catalog::ShiftCatalog;
pub use landmarks::{Landmark, LandmarkSet};
pub use meanfield::{BoundTerms, EStepOptions, EStepReport, MeanFieldProblem, Schedule};
pub use posterior::PosteriorField;

/// MRF weights (1/mm^2) on squared shift magnitude and squared shift
/// differences between 4-neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrfParams {
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for MrfParams {
    fn default() -> Self {
        MrfParams {
            beta1: 0.02,
            beta2: 0.02,
        }
    }
}

impl MrfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0 && self.beta1.is_finite() && self.beta2.is_finite()) {
            return Err(Error::invalid("MRF weights must be non-negative"));
        }
        Ok(())
    }
}

/// Log N(v; 0, sigma^2) for a 2D isotropic Gaussian evaluated at squared norm `d2`.
fn log_gauss2(d2: f64, var: f64) -> f64 {
    -(2.0 * PI * var).ln() - d2 / (2.0 * var)
}

/// Log-potential table of one pair: Gaussian likelihood of the displaced
/// reference intensity under the prediction, the shift-magnitude prior and
/// the landmark factors at the landmark pixels.
pub fn build_problem(
    reference: &Image2D,
    prediction: &SynthesisPrediction,
    landmarks: &LandmarkSet,
    mrf: &MrfParams,
    catalog: &ShiftCatalog,
) -> Result<MeanFieldProblem> {
    mrf.validate()?;
    let g = reference.geom();
    if prediction.geom != g {
        return Err(Error::invalid("prediction grid differs from the reference grid"));
    }
    landmarks.validate(&g)?;
    let s_count = catalog.len();
    let sp = g.spacing;
    let shifts = catalog.shifts();
    let mut unary = vec![0.0; g.len() * s_count];
    unary.par_chunks_mut(s_count).enumerate().for_each(|(p, row)| {
        let (x, y) = ((p % g.width) as f64, (p / g.width) as f64);
        let mu = prediction.mean[p];
        let var = prediction.var[p];
        let norm = -0.5 * (2.0 * PI * var).ln();
        for (s, r) in row.iter_mut().enumerate() {
            let d = shifts[s];
            let m = reference.sample_clamped(x + d[0] / sp, y + d[1] / sp);
            *r = norm - (m - mu) * (m - mu) / (2.0 * var) - mrf.beta1 * (d[0] * d[0] + d[1] * d[1]);
        }
    });
    let var_k = landmarks.sigma_k_mm * landmarks.sigma_k_mm;
    for l in &landmarks.points {
        let p = g.index(l.k[0] as usize, l.k[1] as usize);
        // N(kh; k - D, var_k): peaks at D = k - kh
        let base = [(l.kh[0] - l.k[0]) * sp, (l.kh[1] - l.k[1]) * sp];
        for (s, d) in shifts.iter().enumerate() {
            let e = [base[0] + d[0], base[1] + d[1]];
            unary[p * s_count + s] += log_gauss2(e[0] * e[0] + e[1] * e[1], var_k);
        }
    }
    MeanFieldProblem::new(g, shifts.to_vec(), unary, mrf.beta2)
}

/// Log-density of the Inverse-Gamma prior on every predicted variance, up to
/// terms that do not depend on the forest.
pub fn variance_prior_term(prediction: &SynthesisPrediction, a: f64, b: f64) -> f64 {
    prediction.var.iter().map(|&v| -(a + 1.0) * v.ln() - b / v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VemOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the largest change of the predicted mean.
    pub mean_tolerance: f64,
    /// Convergence threshold on the largest change of the predicted std.
    pub sigma_tolerance: f64,
    pub estep: EStepOptions,
}

impl Default for VemOptions {
    fn default() -> Self {
        VemOptions {
            max_iterations: 10,
            mean_tolerance: 0.5,
            sigma_tolerance: 0.5,
            estep: EStepOptions::default(),
        }
    }
}

/// Everything the VEM loop needs besides the images.
#[derive(Debug, Clone)]
pub struct VemSettings {
    pub features: FeatureConfig,
    pub forest: ForestHyperparams,
    pub mrf: MrfParams,
    pub catalog: ShiftCatalog,
    pub options: VemOptions,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct VemPair {
    pub id: u64,
    pub reference: Image2D,
    pub floating: Image2D,
    pub landmarks: LandmarkSet,
}

#[derive(Debug, Clone)]
pub struct VemResult {
    pub model: ForestModel,
    pub predictions: Vec<SynthesisPrediction>,
    pub posteriors: Vec<PosteriorField>,
    /// Completed E-step/M-step rounds.
    pub iterations: usize,
    pub converged: bool,
    /// Bound after each E-step, tractable terms plus the variance prior.
    pub bound_trace: Vec<f64>,
    pub estep_reports: Vec<Vec<EStepReport>>,
}

fn train(
    pairs: &[VemPair],
    features: &[FeatureStack],
    posteriors: &[PosteriorField],
    settings: &VemSettings,
) -> Result<ForestModel> {
    let images: Vec<TrainingImage<'_>> = pairs
        .iter()
        .zip(features)
        .zip(posteriors)
        .map(|((p, f), q)| TrainingImage {
            id: p.id,
            features: f,
            target: &p.reference,
            posterior: q,
        })
        .collect();
    train_forest(&images, &settings.catalog, &settings.forest, settings.seed)
}

fn predict_all(model: &ForestModel, features: &[FeatureStack]) -> Result<Vec<SynthesisPrediction>> {
    features.iter().map(|f| model.predict(f)).collect()
}

/// Joint estimation of the synthesis forest and the shift posteriors over
/// all `pairs` (one pair gives the per-pair variant).
pub fn run_vem(pairs: &[VemPair], settings: &VemSettings) -> Result<VemResult> {
    if pairs.is_empty() {
        return Err(Error::invalid("VEM needs at least one image pair"));
    }
    settings.mrf.validate()?;
    for p in pairs {
        if p.reference.geom() != p.floating.geom() {
            return Err(Error::invalid(format!("pair {}: reference and floating grids differ", p.id)));
        }
        p.landmarks.validate(&p.floating.geom())?;
    }
    let features: Vec<FeatureStack> = pairs
        .iter()
        .map(|p| settings.features.compute(&p.floating))
        .collect::<Result<_>>()?;
    let mut posteriors: Vec<PosteriorField> = pairs
        .iter()
        .map(|p| PosteriorField::uniform(p.floating.geom(), settings.catalog.len()))
        .collect::<Result<_>>()?;

    let mut model = train(pairs, &features, &posteriors, settings)?;
    let mut predictions = predict_all(&model, &features)?;
    let mut result_trace = Vec::new();
    let mut reports = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let (a, b) = (settings.forest.a, settings.forest.b);

    while iterations < settings.options.max_iterations {
        let step: Vec<(EStepReport, f64)> = pairs
            .par_iter()
            .zip(posteriors.par_iter_mut())
            .zip(predictions.par_iter())
            .map(|((pair, q), pred)| {
                let problem = build_problem(&pair.reference, pred, &pair.landmarks, &settings.mrf, &settings.catalog)?;
                let report = problem.run(q, &settings.options.estep)?;
                let bound = problem.bound_terms(q)?.total + variance_prior_term(pred, a, b);
                Ok((report, bound))
            })
            .collect::<Result<_>>()?;
        let bound: f64 = step.iter().map(|s| s.1).sum();
        result_trace.push(bound);
        reports.push(step.into_iter().map(|s| s.0).collect::<Vec<_>>());

        model = train(pairs, &features, &posteriors, settings)?;
        let next = predict_all(&model, &features)?;
        iterations += 1;
        let (dm, ds) = next
            .iter()
            .zip(&predictions)
            .map(|(n, o)| n.max_change(o))
            .fold((0.0f64, 0.0f64), |acc, c| (acc.0.max(c.0), acc.1.max(c.1)));
        predictions = next;
        debug!("vem iteration {iterations}: bound {bound:.6e}, max change mean {dm:.3} std {ds:.3}");
        if dm < settings.options.mean_tolerance && ds < settings.options.sigma_tolerance {
            converged = true;
            break;
        }
    }
    info!("vem finished after {iterations} iterations (converged: {converged})");
    Ok(VemResult {
        model,
        predictions,
        posteriors,
        iterations,
        converged,
        bound_trace: result_trace,
        estep_reports: reports,
    })
}

/// Per-pixel most probable shift (mm) as a displacement field.
pub fn posterior_argmax_field(q: &PosteriorField, catalog: &ShiftCatalog) -> Result<DeformationField> {
    if q.n_shifts() != catalog.len() {
        return Err(Error::invalid("posterior does not match the shift catalog"));
    }
    let g = q.geom();
    DeformationField::from_fn(g, |x, y| {
        let d = catalog.get(q.argmax(g.index(x, y)));
        (d[0], d[1])
    })
}

/// Writes `<stem>_argmax.raw` (two planes, mm) and `<stem>_entropy.raw`
/// (one plane, nats) next to `stem`.
pub fn export_posterior(q: &PosteriorField, catalog: &ShiftCatalog, stem: &Path) -> Result<()> {
    let field = posterior_argmax_field(q, catalog)?;
    let name = stem.file_name().and_then(|n| n.to_str()).unwrap_or("posterior");
    let dir = stem.parent().unwrap_or_else(|| Path::new("."));
    write_raster_f32(&dir.join(format!("{name}_argmax.raw")), q.geom(), &[field.ux(), field.uy()])?;
    let ent: Vec<f64> = (0..q.n_pixels()).map(|p| q.entropy(p)).collect();
    write_raster_f32(&dir.join(format!("{name}_entropy.raw")), q.geom(), &[&ent])
}
