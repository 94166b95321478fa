//! Mean-field coordinate ascent for the shift-label MRF.
//!
//! The model over labels `s_x` has log-potentials `unary[x, s]` and a
//! pairwise penalty `-beta2 * |D_s - D_s'|^2` on every 4-neighbour edge,
//! counted once per edge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::posterior::{entropy, PosteriorField};
use crate::imagecore::GridGeom;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Raster-order pixel updates; every update increases the bound.
    #[default]
    Sequential,
    /// Two-colour updates, each colour in parallel.
    Checkerboard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EStepOptions {
    pub max_sweeps: usize,
    /// Stop once the largest per-pixel total-variation change in a sweep is
    /// below this.
    pub tolerance: f64,
    pub schedule: Schedule,
}

impl Default for EStepOptions {
    fn default() -> Self {
        EStepOptions {
            max_sweeps: 50,
            tolerance: 1e-4,
            schedule: Schedule::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EStepReport {
    pub sweeps: usize,
    pub max_change: f64,
    pub converged: bool,
}

/// Tractable parts of the variational bound for one image pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundTerms {
    pub entropy: f64,
    /// `E_q[unary log-potential]`.
    pub expected_unary: f64,
    /// `sum over edges E_q |D - D'|^2`, before multiplying by `beta2`.
    pub expected_pairwise: f64,
    /// `entropy + expected_unary - beta2 * expected_pairwise`.
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct MeanFieldProblem {
    geom: GridGeom,
    shifts: Vec<[f64; 2]>,
    sq_norms: Vec<f64>,
    unary: Vec<f64>,
    beta2: f64,
}

/// First and second moments of the shift under each pixel's posterior.
struct Moments {
    mean: Vec<[f64; 2]>,
    second: Vec<f64>,
}

impl MeanFieldProblem {
    /// `unary` is pixel-major, `geom.len() * shifts.len()` log-potentials.
    pub fn new(geom: GridGeom, shifts: Vec<[f64; 2]>, unary: Vec<f64>, beta2: f64) -> Result<Self> {
        if shifts.is_empty() {
            return Err(Error::invalid("no shifts"));
        }
        if unary.len() != geom.len() * shifts.len() {
            return Err(Error::invalid("unary table does not match grid and shifts"));
        }
        if unary.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::invalid("unary log-potentials must be finite or -inf"));
        }
        if !(beta2 >= 0.0 && beta2.is_finite()) {
            return Err(Error::invalid("beta2 must be non-negative"));
        }
        let sq_norms = shifts.iter().map(|d| d[0] * d[0] + d[1] * d[1]).collect();
        Ok(MeanFieldProblem {
            geom,
            shifts,
            sq_norms,
            unary,
            beta2,
        })
    }

    pub fn geom(&self) -> GridGeom {
        self.geom
    }
    pub fn n_shifts(&self) -> usize {
        self.shifts.len()
    }
    pub fn shifts(&self) -> &[[f64; 2]] {
        &self.shifts
    }
    pub fn beta2(&self) -> f64 {
        self.beta2
    }
    pub fn unary(&self, p: usize) -> &[f64] {
        let s = self.shifts.len();
        &self.unary[p * s..(p + 1) * s]
    }

    fn check(&self, q: &PosteriorField) -> Result<()> {
        if q.geom() != self.geom || q.n_shifts() != self.shifts.len() {
            return Err(Error::invalid("posterior does not match the problem"));
        }
        Ok(())
    }

    fn moments_of(&self, row: &[f64]) -> ([f64; 2], f64) {
        let mut m = [0.0; 2];
        let mut e2 = 0.0;
        for (s, &w) in row.iter().enumerate() {
            m[0] += w * self.shifts[s][0];
            m[1] += w * self.shifts[s][1];
            e2 += w * self.sq_norms[s];
        }
        (m, e2)
    }

    fn moments(&self, q: &PosteriorField) -> Moments {
        let (mean, second) = (0..self.geom.len()).map(|p| self.moments_of(q.row(p))).unzip();
        Moments { mean, second }
    }

    fn neighbours(&self, p: usize) -> impl Iterator<Item = usize> {
        let (w, h) = (self.geom.width, self.geom.height);
        let (x, y) = (p % w, p / w);
        [
            (x > 0).then(|| p - 1),
            (x + 1 < w).then(|| p + 1),
            (y > 0).then(|| p - w),
            (y + 1 < h).then(|| p + w),
        ]
        .into_iter()
        .flatten()
    }

    /// Optimal row for pixel `p` given the neighbour moments.
    fn update_row(&self, p: usize, mean: &[[f64; 2]], out: &mut [f64]) {
        let mut count = 0.0;
        let mut msum = [0.0; 2];
        for n in self.neighbours(p) {
            count += 1.0;
            msum[0] += mean[n][0];
            msum[1] += mean[n][1];
        }
        let unary = self.unary(p);
        let b = self.beta2;
        let mut max = f64::NEG_INFINITY;
        for (s, o) in out.iter_mut().enumerate() {
            let d = self.shifts[s];
            let v = unary[s] - b * (count * self.sq_norms[s] - 2.0 * (d[0] * msum[0] + d[1] * msum[1]));
            *o = v;
            max = max.max(v);
        }
        if max == f64::NEG_INFINITY {
            // every shift impossible: fall back to uniform rather than NaN
            out.fill(1.0 / out.len() as f64);
            return;
        }
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        let inv = 1.0 / sum;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    /// One sweep; returns the largest per-pixel total-variation change.
    fn sweep(&self, q: &mut PosteriorField, mom: &mut Moments, schedule: Schedule) -> f64 {
        let s = self.shifts.len();
        let mut max_change = 0.0f64;
        match schedule {
            Schedule::Sequential => {
                let mut buf = vec![0.0; s];
                for p in 0..self.geom.len() {
                    self.update_row(p, &mom.mean, &mut buf);
                    let row = q.row_mut(p);
                    let tv = 0.5 * row.iter().zip(&buf).map(|(a, b)| (a - b).abs()).sum::<f64>();
                    max_change = max_change.max(tv);
                    row.copy_from_slice(&buf);
                    let (m, e2) = self.moments_of(&buf);
                    mom.mean[p] = m;
                    mom.second[p] = e2;
                }
            }
            Schedule::Checkerboard => {
                let w = self.geom.width;
                for colour in 0..2 {
                    let pixels: Vec<usize> = (0..self.geom.len())
                        .filter(|p| (p % w + p / w) % 2 == colour)
                        .collect();
                    let rows: Vec<Vec<f64>> = pixels
                        .par_iter()
                        .map(|&p| {
                            let mut buf = vec![0.0; s];
                            self.update_row(p, &mom.mean, &mut buf);
                            buf
                        })
                        .collect();
                    for (&p, buf) in pixels.iter().zip(rows) {
                        let row = q.row_mut(p);
                        let tv = 0.5 * row.iter().zip(&buf).map(|(a, b)| (a - b).abs()).sum::<f64>();
                        max_change = max_change.max(tv);
                        row.copy_from_slice(&buf);
                        let (m, e2) = self.moments_of(&buf);
                        mom.mean[p] = m;
                        mom.second[p] = e2;
                    }
                }
            }
        }
        max_change
    }

    /// Runs sweeps until convergence or the sweep limit. `after_sweep` sees
    /// the posterior after every sweep.
    pub fn run_with(
        &self,
        q: &mut PosteriorField,
        opts: &EStepOptions,
        mut after_sweep: impl FnMut(usize, &PosteriorField),
    ) -> Result<EStepReport> {
        self.check(q)?;
        let mut mom = self.moments(q);
        let mut report = EStepReport {
            sweeps: 0,
            max_change: f64::INFINITY,
            converged: false,
        };
        while report.sweeps < opts.max_sweeps {
            report.max_change = self.sweep(q, &mut mom, opts.schedule);
            report.sweeps += 1;
            after_sweep(report.sweeps, q);
            if report.max_change < opts.tolerance {
                report.converged = true;
                break;
            }
        }
        Ok(report)
    }

    pub fn run(&self, q: &mut PosteriorField, opts: &EStepOptions) -> Result<EStepReport> {
        self.run_with(q, opts, |_, _| {})
    }

    pub fn bound_terms(&self, q: &PosteriorField) -> Result<BoundTerms> {
        self.check(q)?;
        let mom = self.moments(q);
        let mut ent = 0.0;
        let mut eu = 0.0;
        for p in 0..self.geom.len() {
            let row = q.row(p);
            ent += entropy(row);
            eu += row
                .iter()
                .zip(self.unary(p))
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, u)| w * u)
                .sum::<f64>();
        }
        let w = self.geom.width;
        let mut pw = 0.0;
        for p in 0..self.geom.len() {
            let (x, y) = (p % w, p / w);
            let edge = |n: usize| {
                mom.second[p] + mom.second[n] - 2.0 * (mom.mean[p][0] * mom.mean[n][0] + mom.mean[p][1] * mom.mean[n][1])
            };
            if x + 1 < w {
                pw += edge(p + 1);
            }
            if y + 1 < self.geom.height {
                pw += edge(p + w);
            }
        }
        Ok(BoundTerms {
            entropy: ent,
            expected_unary: eu,
            expected_pairwise: pw,
            total: ent + eu - self.beta2 * pw,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(beta2: f64) -> MeanFieldProblem {
        let g = GridGeom::new(3, 2, 1.0).unwrap();
        let shifts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, -1.0]];
        let unary = (0..18).map(|i| ((i * 7) % 5) as f64 * -0.3).collect();
        MeanFieldProblem::new(g, shifts, unary, beta2).unwrap()
    }

    #[test]
    fn decoupled_problem_converges_in_one_sweep() {
        let p = problem(0.0);
        let mut q = PosteriorField::uniform(p.geom(), 3).unwrap();
        let r = p.run(&mut q, &EStepOptions::default()).unwrap();
        // the second sweep confirms the fixed point
        assert_eq!(r.sweeps, 2);
        for px in 0..6 {
            let u = p.unary(px);
            let z: f64 = u.iter().map(|v| v.exp()).sum();
            for s in 0..3 {
                assert!((q.row(px)[s] - u[s].exp() / z).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_stay_normalised_and_bound_increases() {
        let p = problem(0.7);
        let mut q = PosteriorField::uniform(p.geom(), 3).unwrap();
        let mut last = p.bound_terms(&q).unwrap().total;
        let opts = EStepOptions {
            max_sweeps: 10,
            tolerance: 0.0,
            ..Default::default()
        };
        p.run_with(&mut q, &opts, |_, q| {
            let (dev, min) = q.validity();
            assert!(dev <= 1e-12 && min >= 0.0);
            let j = p.bound_terms(q).unwrap().total;
            assert!(j >= last - 1e-12 * last.abs());
            last = j;
        })
        .unwrap();
    }

    #[test]
    fn schedules_reach_the_same_fixed_point() {
        let p = problem(0.4);
        let opts = EStepOptions {
            max_sweeps: 500,
            tolerance: 1e-13,
            ..Default::default()
        };
        let mut a = PosteriorField::uniform(p.geom(), 3).unwrap();
        let mut b = a.clone();
        p.run(&mut a, &opts).unwrap();
        p.run(
            &mut b,
            &EStepOptions {
                schedule: Schedule::Checkerboard,
                ..opts
            },
        )
        .unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
