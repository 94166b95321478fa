//! Nonlinear conjugate gradient (Polak-Ribiere+) with backtracking Armijo
//! line search. Only steps that lower the objective are accepted.

use serde::Serialize;

#[derive(Debug, Clone, Copy)]
pub(crate) struct CgOptions {
    pub max_iterations: usize,
    pub grad_tol: f64,
    /// Stop after three consecutive iterations with relative decrease below this.
    pub rel_tol: f64,
    /// Largest per-coordinate change of the first trial step.
    pub initial_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CgReport {
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: &'static str,
    /// Objective before the first and after every accepted step.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x` (updated in place). `f` writes the gradient into its
/// second argument and may return `+inf` for infeasible points.
pub(crate) fn minimize_cg(
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    x: &mut [f64],
    opts: &CgOptions,
) -> CgReport {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut trace = vec![fx];
    let report = |iterations, converged, stop_reason, trace: Vec<f64>| CgReport {
        iterations,
        converged,
        stop_reason,
        trace,
    };
    if !fx.is_finite() {
        return report(0, false, "infeasible start", trace);
    }
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut step: Option<f64> = None;
    let mut small = 0;
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for it in 0..opts.max_iterations {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < opts.grad_tol {
            return report(it, true, "gradient norm", trace);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -gnorm * gnorm;
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t = step.unwrap_or(opts.initial_step / dmax.max(1e-300));
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = x[i] + t * d[i];
            }
            let ft = f(&trial, &mut g_new);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope && ft < fx {
                accepted = Some(ft);
                break;
            }
            t *= 0.5;
        }
        let Some(ft) = accepted else {
            // a failed steepest-descent search means no further progress is possible
            if slope == -gnorm * gnorm {
                return report(it, false, "line search failed", trace);
            }
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            step = None;
            continue;
        };
        x.copy_from_slice(&trial);
        let decrease = fx - ft;
        fx = ft;
        trace.push(fx);
        step = Some(2.0 * t);
        // Polak-Ribiere+
        let beta = (dot(&g_new, &g_new) - dot(&g_new, &g)) / dot(&g, &g);
        let beta = beta.max(0.0);
        for i in 0..n {
            d[i] = -g_new[i] + beta * d[i];
        }
        std::mem::swap(&mut g, &mut g_new);
        if decrease <= opts.rel_tol * fx.abs().max(1e-300) {
            small += 1;
            if small >= 3 {
                return report(it + 1, true, "relative decrease", trace);
            }
        } else {
            small = 0;
        }
    }
    let converged = dot(&g, &g).sqrt() < opts.grad_tol;
    report(opts.max_iterations, converged, "iteration limit", trace)
}
