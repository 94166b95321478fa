//! Discrete MAP registration: multi-label energy over shift labels with
//! squared-difference smoothness, minimized by expansion and swap moves.

use log::debug;
use serde::{Deserialize, Serialize};

use super::maxflow::BinaryEnergy;
use crate::deformation::DeformationField;
use crate::forest::SynthesisPrediction;
use crate::imagecore::{GridGeom, Image2D};
use crate::vem::{LandmarkSet, MrfParams, ShiftCatalog};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphCutOptions {
    pub max_passes: usize,
    /// Pairwise truncation (mm^2) used when building expansion moves; by
    /// default `(8 * step)^2` of the catalog.
    pub truncation_mm2: Option<f64>,
    /// Swap moves over all label pairs are added when the catalog has at most
    /// this many labels.
    pub swap_max_labels: usize,
}

impl Default for GraphCutOptions {
    fn default() -> Self {
        GraphCutOptions {
            max_passes: 10,
            truncation_mm2: None,
            swap_max_labels: 32,
        }
    }
}

/// `sum_x unary[x, l_x] + beta2 * sum_edges |D_lx - D_ly|^2` on a 4-connected grid.
#[derive(Debug, Clone)]
pub struct LabelingProblem {
    geom: GridGeom,
    labels: Vec<[f64; 2]>,
    unary: Vec<f64>,
    beta2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelingResult {
    pub labeling: Vec<usize>,
    pub energy: f64,
    /// Energy at the start and after every pass; never increasing.
    pub pass_energies: Vec<f64>,
}

impl LabelingProblem {
    pub fn new(geom: GridGeom, labels: Vec<[f64; 2]>, unary: Vec<f64>, beta2: f64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("empty label set"));
        }
        if unary.len() != geom.len() * labels.len() || unary.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("unary table must be finite and match grid and labels"));
        }
        if !(beta2 >= 0.0 && beta2.is_finite()) {
            return Err(Error::invalid("beta2 must be non-negative"));
        }
        Ok(LabelingProblem {
            geom,
            labels,
            unary,
            beta2,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    fn u(&self, p: usize, l: usize) -> f64 {
        self.unary[p * self.labels.len() + l]
    }

    #[inline]
    fn dist2(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.labels[a], self.labels[b]);
        (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        let (w, h) = (self.geom.width, self.geom.height);
        let mut e = Vec::with_capacity(2 * w * h);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if x + 1 < w {
                    e.push((p, p + 1));
                }
                if y + 1 < h {
                    e.push((p, p + w));
                }
            }
        }
        e
    }

    pub fn energy(&self, labeling: &[usize]) -> f64 {
        let mut e: f64 = labeling.iter().enumerate().map(|(p, &l)| self.u(p, l)).sum();
        for (p, q) in self.edges() {
            e += self.beta2 * self.dist2(labeling[p], labeling[q]);
        }
        e
    }

    fn expansion(&self, labeling: &[usize], alpha: usize, edges: &[(usize, usize)], tau: f64) -> Vec<usize> {
        let v = |a: usize, b: usize| self.beta2 * self.dist2(a, b).min(tau);
        let mut be = BinaryEnergy::new(labeling.len());
        for (p, &l) in labeling.iter().enumerate() {
            be.add_unary(p, self.u(p, l), self.u(p, alpha));
        }
        for &(p, q) in edges {
            let (lp, lq) = (labeling[p], labeling[q]);
            let e01 = v(lp, alpha);
            let e10 = v(alpha, lq);
            // over-submodular terms are clipped; the move is checked on the true energy
            let e00 = v(lp, lq).min(e01 + e10);
            be.add_pairwise(p, q, e00, e01, e10, 0.0);
        }
        let (x, _) = be.minimize();
        labeling
            .iter()
            .zip(x)
            .map(|(&l, to_alpha)| if to_alpha { alpha } else { l })
            .collect()
    }

    fn swap(&self, labeling: &[usize], alpha: usize, beta: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
        let active: Vec<usize> = (0..labeling.len())
            .filter(|&p| labeling[p] == alpha || labeling[p] == beta)
            .collect();
        if active.is_empty() {
            return None;
        }
        let mut slot = vec![usize::MAX; labeling.len()];
        for (i, &p) in active.iter().enumerate() {
            slot[p] = i;
        }
        let mut be = BinaryEnergy::new(active.len());
        for (i, &p) in active.iter().enumerate() {
            be.add_unary(i, self.u(p, alpha), self.u(p, beta));
        }
        let vab = self.beta2 * self.dist2(alpha, beta);
        for &(p, q) in edges {
            match (slot[p] != usize::MAX, slot[q] != usize::MAX) {
                (true, true) => be.add_pairwise(slot[p], slot[q], 0.0, vab, vab, 0.0),
                (true, false) => {
                    let lq = labeling[q];
                    be.add_unary(slot[p], self.beta2 * self.dist2(alpha, lq), self.beta2 * self.dist2(beta, lq));
                }
                (false, true) => {
                    let lp = labeling[p];
                    be.add_unary(slot[q], self.beta2 * self.dist2(alpha, lp), self.beta2 * self.dist2(beta, lp));
                }
                (false, false) => {}
            }
        }
        let (x, _) = be.minimize();
        let mut out = labeling.to_vec();
        for (i, &p) in active.iter().enumerate() {
            out[p] = if x[i] { beta } else { alpha };
        }
        Some(out)
    }

    /// Move-making minimization starting from the per-pixel unary minimum.
    /// Small label sets (where swaps are enabled) also restart from every
    /// constant labeling and keep the lowest energy; the reported pass
    /// energies are those of the winning start.
    pub fn solve(&self, opts: &GraphCutOptions, truncation_mm2: f64) -> LabelingResult {
        let n_labels = self.labels.len();
        let unary_min: Vec<usize> = (0..self.geom.len())
            .map(|p| {
                (0..n_labels)
                    .min_by(|&a, &b| self.u(p, a).total_cmp(&self.u(p, b)))
                    .expect("non-empty label set")
            })
            .collect();
        if self.beta2 == 0.0 || n_labels == 1 {
            let energy = self.energy(&unary_min);
            return LabelingResult {
                labeling: unary_min,
                energy,
                pass_energies: vec![energy],
            };
        }
        let edges = self.edges();
        let use_swaps = n_labels <= opts.swap_max_labels;
        let mut best = self.descend(unary_min, opts, &edges, truncation_mm2, use_swaps);
        if use_swaps {
            for l in 0..n_labels {
                let r = self.descend(vec![l; self.geom.len()], opts, &edges, truncation_mm2, use_swaps);
                if r.energy < best.energy {
                    best = r;
                }
            }
        }
        best
    }

    fn descend(
        &self,
        mut labeling: Vec<usize>,
        opts: &GraphCutOptions,
        edges: &[(usize, usize)],
        truncation_mm2: f64,
        use_swaps: bool,
    ) -> LabelingResult {
        let n_labels = self.labels.len();
        let mut energy = self.energy(&labeling);
        let mut pass_energies = vec![energy];
        for pass in 0..opts.max_passes {
            let start = energy;
            for alpha in 0..n_labels {
                let cand = self.expansion(&labeling, alpha, edges, truncation_mm2);
                let e = self.energy(&cand);
                if e < energy {
                    energy = e;
                    labeling = cand;
                }
            }
            if use_swaps {
                for alpha in 0..n_labels {
                    for beta in alpha + 1..n_labels {
                        if let Some(cand) = self.swap(&labeling, alpha, beta, edges) {
                            let e = self.energy(&cand);
                            if e < energy {
                                energy = e;
                                labeling = cand;
                            }
                        }
                    }
                }
            }
            pass_energies.push(energy);
            debug!("graph-cut pass {pass}: energy {energy:.6}");
            if energy >= start - 1e-12 * start.abs().max(1.0) {
                break;
            }
        }
        LabelingResult {
            labeling,
            energy,
            pass_energies,
        }
    }
}

/// Builds the registration labeling problem: squared residual of the displaced
/// reference against the prediction, shift-magnitude prior, and landmark
/// quadratic terms at the floating landmark pixels rounded to the grid.
pub fn registration_labeling_problem(
    reference: &Image2D,
    prediction: &SynthesisPrediction,
    landmarks: &LandmarkSet,
    mrf: &MrfParams,
    catalog: &ShiftCatalog,
) -> Result<LabelingProblem> {
    mrf.validate()?;
    let g = reference.geom();
    if prediction.geom != g {
        return Err(Error::invalid("prediction grid differs from the reference grid"));
    }
    if catalog.is_empty() {
        return Err(Error::invalid("empty shift catalog"));
    }
    landmarks.validate(&g)?;
    let s_count = catalog.len();
    let sp = g.spacing;
    let mut unary = vec![0.0; g.len() * s_count];
    for p in 0..g.len() {
        let (x, y) = ((p % g.width) as f64, (p / g.width) as f64);
        let (mu, var) = (prediction.mean[p], prediction.var[p]);
        for (s, d) in catalog.shifts().iter().enumerate() {
            let m = reference.sample_clamped(x + d[0] / sp, y + d[1] / sp);
            unary[p * s_count + s] = (m - mu) * (m - mu) / (2.0 * var) + mrf.beta1 * (d[0] * d[0] + d[1] * d[1]);
        }
    }
    let var_k = landmarks.sigma_k_mm * landmarks.sigma_k_mm;
    for l in &landmarks.points {
        let p = g.index(l.kh[0].round() as usize, l.kh[1].round() as usize);
        let base = [(l.kh[0] - l.k[0]) * sp, (l.kh[1] - l.k[1]) * sp];
        for (s, d) in catalog.shifts().iter().enumerate() {
            let e = [base[0] + d[0], base[1] + d[1]];
            unary[p * s_count + s] += (e[0] * e[0] + e[1] * e[1]) / (2.0 * var_k);
        }
    }
    LabelingProblem::new(g, catalog.shifts().to_vec(), unary, mrf.beta2)
}

#[derive(Debug, Clone)]
pub struct GraphCutOutcome {
    pub field: DeformationField,
    pub result: LabelingResult,
}

pub fn map_registration_graphcut(
    reference: &Image2D,
    prediction: &SynthesisPrediction,
    landmarks: &LandmarkSet,
    mrf: &MrfParams,
    catalog: &ShiftCatalog,
    opts: &GraphCutOptions,
) -> Result<GraphCutOutcome> {
    let problem = registration_labeling_problem(reference, prediction, landmarks, mrf, catalog)?;
    let step = if catalog.step_mm() > 0.0 {
        catalog.step_mm()
    } else {
        catalog.radius_mm().max(1e-3)
    };
    let tau = opts.truncation_mm2.unwrap_or((2.0 * step * 4.0).powi(2));
    let result = problem.solve(opts, tau);
    let g = reference.geom();
    let field = DeformationField::from_fn(g, |x, y| {
        let d = catalog.get(result.labeling[g.index(x, y)]);
        (d[0], d[1])
    })?;
    Ok(GraphCutOutcome { field, result })
}
