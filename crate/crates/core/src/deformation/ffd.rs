//! Uniform cubic B-spline free-form deformation on a control grid.
//!
//! Control point `(i, j)` sits at `((i - 1) h, (j - 1) h)` mm, so the grid
//! starts one spacing before the image origin and `floor(extent / h) + 4`
//! points per axis cover the domain with full basis support.

use serde::{Deserialize, Serialize};

use super::field::DeformationField;
use crate::imagecore::GridGeom;
use crate::{Error, Result};

#[inline]
pub(crate) fn basis(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    let u2 = u * u;
    let u3 = u2 * u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

#[inline]
pub(crate) fn basis_d1(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    [
        -0.5 * v * v,
        (3.0 * u * u - 4.0 * u) / 2.0,
        (-3.0 * u * u + 2.0 * u + 1.0) / 2.0,
        0.5 * u * u,
    ]
}

#[inline]
pub(crate) fn basis_d2(u: f64) -> [f64; 4] {
    [1.0 - u, 3.0 * u - 2.0, 1.0 - 3.0 * u, u]
}

/// Basis weights of one axis at one coordinate. Derivative weights are per mm.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisWeights {
    pub first: usize,
    pub w: [f64; 4],
    pub d1: [f64; 4],
    pub d2: [f64; 4],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegularizerWeights {
    pub bending: f64,
    pub linear: f64,
    pub jacobian: f64,
}

/// Domain-averaged regularizer energies. `jacobian` is `+inf` when the
/// Jacobian determinant is non-positive somewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regularizers {
    pub bending: f64,
    pub linear: f64,
    pub jacobian: f64,
}

/// Per-point spatial derivatives of the displacement.
#[derive(Debug, Clone, Copy, Default)]
struct LocalDerivs {
    // first derivatives: [du_x/dx, du_x/dy, du_y/dx, du_y/dy]
    j: [f64; 4],
    // second derivatives per component: [xx, xy, yy]
    hx: [f64; 3],
    hy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfdTransform {
    control_spacing_mm: f64,
    /// Largest physical coordinate (mm) along x and y the grid must support.
    domain_mm: [f64; 2],
    nx: usize,
    ny: usize,
    cx: Vec<f64>,
    cy: Vec<f64>,
}

impl FfdTransform {
    /// Zero-displacement transform covering `[0, domain_mm]`.
    pub fn identity(domain_mm: [f64; 2], control_spacing_mm: f64) -> Result<Self> {
        if !(control_spacing_mm.is_finite() && control_spacing_mm > 0.0) {
            return Err(Error::invalid("control spacing must be positive"));
        }
        if !(domain_mm[0] >= 0.0 && domain_mm[1] >= 0.0) {
            return Err(Error::invalid("domain extent must be non-negative"));
        }
        let nx = (domain_mm[0] / control_spacing_mm).floor() as usize + 4;
        let ny = (domain_mm[1] / control_spacing_mm).floor() as usize + 4;
        Ok(FfdTransform {
            control_spacing_mm,
            domain_mm,
            nx,
            ny,
            cx: vec![0.0; nx * ny],
            cy: vec![0.0; nx * ny],
        })
    }

    /// Identity transform for the pixel-centre extent of `grid`.
    pub fn identity_for(grid: &GridGeom, control_spacing_mm: f64) -> Result<Self> {
        let (ex, ey) = grid.extent_mm();
        Self::identity([ex, ey], control_spacing_mm)
    }

    /// Transform whose control displacements sample the affine map
    /// `p -> a p + t`; cubic B-splines reproduce it exactly.
    pub fn from_affine(domain_mm: [f64; 2], control_spacing_mm: f64, a: [[f64; 2]; 2], t: [f64; 2]) -> Result<Self> {
        let mut f = Self::identity(domain_mm, control_spacing_mm)?;
        for j in 0..f.ny {
            for i in 0..f.nx {
                let (px, py) = f.control_position(i, j);
                let k = j * f.nx + i;
                f.cx[k] = a[0][0] * px + a[0][1] * py + t[0];
                f.cy[k] = a[1][0] * px + a[1][1] * py + t[1];
            }
        }
        Ok(f)
    }

    pub fn control_spacing_mm(&self) -> f64 {
        self.control_spacing_mm
    }
    pub fn domain_mm(&self) -> [f64; 2] {
        self.domain_mm
    }
    pub fn grid_dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }
    pub fn n_params(&self) -> usize {
        2 * self.nx * self.ny
    }

    pub fn control_position(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.control_spacing_mm;
        ((i as f64 - 1.0) * h, (j as f64 - 1.0) * h)
    }

    /// Control displacements as `[x components..., y components...]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.cx.clone();
        p.extend_from_slice(&self.cy);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let n = self.nx * self.ny;
        if p.len() != 2 * n {
            return Err(Error::invalid("parameter vector length mismatch"));
        }
        self.cx.copy_from_slice(&p[..n]);
        self.cy.copy_from_slice(&p[n..]);
        Ok(())
    }

    pub fn control_displacement(&self, i: usize, j: usize) -> (f64, f64) {
        let k = j * self.nx + i;
        (self.cx[k], self.cy[k])
    }

    pub fn set_control_displacement(&mut self, i: usize, j: usize, d: (f64, f64)) {
        let k = j * self.nx + i;
        self.cx[k] = d.0;
        self.cy[k] = d.1;
    }

    #[inline]
    pub(crate) fn axis_weights(&self, coord_mm: f64, n: usize) -> AxisWeights {
        let h = self.control_spacing_mm;
        let t = coord_mm / h;
        let first = (t.floor().max(0.0) as usize).min(n - 4);
        let u = t - first as f64;
        let d1 = basis_d1(u).map(|v| v / h);
        let d2 = basis_d2(u).map(|v| v / (h * h));
        AxisWeights {
            first,
            w: basis(u),
            d1,
            d2,
        }
    }

    #[inline]
    pub(crate) fn weights_x(&self, x_mm: f64) -> AxisWeights {
        self.axis_weights(x_mm, self.nx)
    }
    #[inline]
    pub(crate) fn weights_y(&self, y_mm: f64) -> AxisWeights {
        self.axis_weights(y_mm, self.ny)
    }

    /// Displacement (mm) from precomputed axis weights.
    #[inline]
    pub(crate) fn displacement_with(&self, wx: &AxisWeights, wy: &AxisWeights) -> (f64, f64) {
        let mut dx = 0.0;
        let mut dy = 0.0;
        for b in 0..4 {
            let row = (wy.first + b) * self.nx + wx.first;
            let mut sx = 0.0;
            let mut sy = 0.0;
            for a in 0..4 {
                sx += wx.w[a] * self.cx[row + a];
                sy += wx.w[a] * self.cy[row + a];
            }
            dx += wy.w[b] * sx;
            dy += wy.w[b] * sy;
        }
        (dx, dy)
    }

    fn in_domain(&self, p: [f64; 2]) -> bool {
        let tol = 1e-9 * (1.0 + self.domain_mm[0].max(self.domain_mm[1]));
        p[0].is_finite()
            && p[1].is_finite()
            && p[0] >= -tol
            && p[1] >= -tol
            && p[0] <= self.domain_mm[0] + tol
            && p[1] <= self.domain_mm[1] + tol
    }

    /// Maps a physical point (mm) through the transform.
    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        if !self.in_domain(p) {
            return Err(Error::invalid(format!(
                "point ({}, {}) outside transform domain [0, {}] x [0, {}]",
                p[0], p[1], self.domain_mm[0], self.domain_mm[1]
            )));
        }
        let (dx, dy) = self.displacement_with(&self.weights_x(p[0]), &self.weights_y(p[1]));
        Ok([p[0] + dx, p[1] + dy])
    }

    /// Jacobian of the full map `x -> x + u(x)`, row-major.
    pub fn jacobian(&self, p: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        if !self.in_domain(p) {
            return Err(Error::invalid("point outside transform domain"));
        }
        let d = self.local_derivs(&self.weights_x(p[0]), &self.weights_y(p[1]));
        Ok([[1.0 + d.j[0], d.j[1]], [d.j[2], 1.0 + d.j[3]]])
    }

    fn local_derivs(&self, wx: &AxisWeights, wy: &AxisWeights) -> LocalDerivs {
        let mut d = LocalDerivs::default();
        for b in 0..4 {
            let row = (wy.first + b) * self.nx + wx.first;
            for a in 0..4 {
                let (cx, cy) = (self.cx[row + a], self.cy[row + a]);
                let dxw = wx.d1[a] * wy.w[b];
                let dyw = wx.w[a] * wy.d1[b];
                let xx = wx.d2[a] * wy.w[b];
                let xy = wx.d1[a] * wy.d1[b];
                let yy = wx.w[a] * wy.d2[b];
                d.j[0] += dxw * cx;
                d.j[1] += dyw * cx;
                d.j[2] += dxw * cy;
                d.j[3] += dyw * cy;
                d.hx[0] += xx * cx;
                d.hx[1] += xy * cx;
                d.hx[2] += yy * cx;
                d.hy[0] += xx * cy;
                d.hy[1] += xy * cy;
                d.hy[2] += yy * cy;
            }
        }
        d
    }

    /// Dense displacement field sampled at the pixel centres of `grid`.
    pub fn dense_field(&self, grid: &GridGeom) -> Result<DeformationField> {
        let wxs: Vec<AxisWeights> = (0..grid.width).map(|i| self.weights_x(i as f64 * grid.spacing)).collect();
        let wys: Vec<AxisWeights> = (0..grid.height).map(|j| self.weights_y(j as f64 * grid.spacing)).collect();
        DeformationField::from_fn(*grid, |x, y| self.displacement_with(&wxs[x], &wys[y]))
    }

    /// Regularizer energies averaged over the pixel centres of `grid`.
    pub fn regularizers(&self, grid: &GridGeom) -> Regularizers {
        let mut r = [0.0; 3];
        let mut folded = false;
        self.for_each_quadrature_point(grid, |d, _, _| {
            r[0] += bending_density(&d);
            r[1] += linear_density(&d);
            match log_det(&d) {
                Some(l) => r[2] += l * l,
                None => folded = true,
            }
        });
        let n = grid.len() as f64;
        Regularizers {
            bending: r[0] / n,
            linear: r[1] / n,
            jacobian: if folded { f64::INFINITY } else { r[2] / n },
        }
    }

    /// Weighted regularizer value; its gradient with respect to
    /// [`params`](Self::params) is accumulated into `grad`. Returns `+inf`
    /// when a positive Jacobian weight meets a folded transform.
    pub fn regularizer_value_and_gradient(
        &self,
        grid: &GridGeom,
        weights: RegularizerWeights,
        grad: &mut [f64],
    ) -> f64 {
        assert_eq!(grad.len(), self.n_params());
        let n = grid.len() as f64;
        let off = self.nx * self.ny;
        let nx = self.nx;
        let mut value = 0.0;
        let mut folded = false;
        let use_j = weights.jacobian != 0.0;
        self.for_each_quadrature_point(grid, |d, wx, wy| {
            // dE/d(first derivatives) and dE/d(second derivatives), per component
            let mut gj = [0.0; 4];
            let mut gx2 = [0.0; 3];
            let mut gy2 = [0.0; 3];
            if weights.bending != 0.0 {
                value += weights.bending * bending_density(&d);
                let s = 2.0 * weights.bending / n;
                gx2 = [s * d.hx[0], 2.0 * s * d.hx[1], s * d.hx[2]];
                gy2 = [s * d.hy[0], 2.0 * s * d.hy[1], s * d.hy[2]];
            }
            if weights.linear != 0.0 {
                value += weights.linear * linear_density(&d);
                let exy = 0.5 * (d.j[1] + d.j[2]);
                let s = 2.0 * weights.linear / n;
                gj[0] += s * d.j[0];
                gj[3] += s * d.j[3];
                gj[1] += s * exy;
                gj[2] += s * exy;
            }
            if use_j {
                match log_det(&d) {
                    Some(l) => {
                        value += weights.jacobian * l * l;
                        let det = (1.0 + d.j[0]) * (1.0 + d.j[3]) - d.j[1] * d.j[2];
                        let s = 2.0 * weights.jacobian * l / (det * n);
                        gj[0] += s * (1.0 + d.j[3]);
                        gj[3] += s * (1.0 + d.j[0]);
                        gj[1] -= s * d.j[2];
                        gj[2] -= s * d.j[1];
                    }
                    None => folded = true,
                }
            }
            for b in 0..4 {
                let row = (wy.first + b) * nx + wx.first;
                for a in 0..4 {
                    let dxw = wx.d1[a] * wy.w[b];
                    let dyw = wx.w[a] * wy.d1[b];
                    let xx = wx.d2[a] * wy.w[b];
                    let xy = wx.d1[a] * wy.d1[b];
                    let yy = wx.w[a] * wy.d2[b];
                    grad[row + a] += gj[0] * dxw + gj[1] * dyw + gx2[0] * xx + gx2[1] * xy + gx2[2] * yy;
                    grad[off + row + a] += gj[2] * dxw + gj[3] * dyw + gy2[0] * xx + gy2[1] * xy + gy2[2] * yy;
                }
            }
        });
        if folded {
            f64::INFINITY
        } else {
            value / n
        }
    }

    fn for_each_quadrature_point(&self, grid: &GridGeom, mut f: impl FnMut(LocalDerivs, &AxisWeights, &AxisWeights)) {
        let wxs: Vec<AxisWeights> = (0..grid.width).map(|i| self.weights_x(i as f64 * grid.spacing)).collect();
        let wys: Vec<AxisWeights> = (0..grid.height).map(|j| self.weights_y(j as f64 * grid.spacing)).collect();
        for wy in &wys {
            for wx in &wxs {
                let d = self.local_derivs(wx, wy);
                f(d, wx, wy);
            }
        }
    }

    /// Exact B-spline subdivision to half the control spacing; the represented
    /// displacement is unchanged on the domain.
    pub fn refine(&self) -> FfdTransform {
        let mut fine = FfdTransform::identity(self.domain_mm, self.control_spacing_mm / 2.0)
            .expect("halved spacing stays valid");
        let (fnx, fny) = (fine.nx, fine.ny);
        let refine_1d = |src: &dyn Fn(usize) -> f64, n_src: usize, j: usize| -> f64 {
            let at = |i: isize| src(i.clamp(0, n_src as isize - 1) as usize);
            if j % 2 == 1 {
                let i = (j as isize + 1) / 2;
                (at(i - 1) + 6.0 * at(i) + at(i + 1)) / 8.0
            } else {
                let i = j as isize / 2;
                (at(i) + at(i + 1)) / 2.0
            }
        };
        for comp in 0..2 {
            let src = if comp == 0 { &self.cx } else { &self.cy };
            // rows first: refine along x for every coarse row
            let mut tmp = vec![0.0; fnx * self.ny];
            for jc in 0..self.ny {
                let row = |i: usize| src[jc * self.nx + i];
                for jf in 0..fnx {
                    tmp[jc * fnx + jf] = refine_1d(&row, self.nx, jf);
                }
            }
            let dst = if comp == 0 { &mut fine.cx } else { &mut fine.cy };
            for i in 0..fnx {
                let col = |j: usize| tmp[j * fnx + i];
                for jf in 0..fny {
                    dst[jf * fnx + i] = refine_1d(&col, self.ny, jf);
                }
            }
        }
        fine
    }
}

#[inline]
fn bending_density(d: &LocalDerivs) -> f64 {
    d.hx[0] * d.hx[0] + 2.0 * d.hx[1] * d.hx[1] + d.hx[2] * d.hx[2]
        + d.hy[0] * d.hy[0]
        + 2.0 * d.hy[1] * d.hy[1]
        + d.hy[2] * d.hy[2]
}

/// Squared Frobenius norm of the symmetric part of the displacement gradient.
#[inline]
fn linear_density(d: &LocalDerivs) -> f64 {
    let exy = 0.5 * (d.j[1] + d.j[2]);
    d.j[0] * d.j[0] + d.j[3] * d.j[3] + 2.0 * exy * exy
}

#[inline]
fn log_det(d: &LocalDerivs) -> Option<f64> {
    let det = (1.0 + d.j[0]) * (1.0 + d.j[3]) - d.j[1] * d.j[2];
    (det > 0.0).then(|| det.ln())
}
