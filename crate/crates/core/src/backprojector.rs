//! Voxel-driven backprojection and its vector–Jacobian product with respect
//! to the projection-matrix entries.
//!
//! For a voxel at world position `(x, y, z)` and view `γ` with homogeneous
//! detector position `(u, v, w) = P_γ · (x, y, z, 1)ᵀ`, the backprojected
//! value is `I = Σ_γ d_γ(u/w, v/w)` with bilinear interpolation `d_γ`. Its
//! derivative with respect to `P_γ` is the 3×4 matrix
//!
//! ```text
//!   row 1:   g_u / w        · (x, y, z, 1)
//!   row 2:   g_v / w        · (x, y, z, 1)
//!   row 3: -(g_u·u + g_v·v) / w² · (x, y, z, 1)
//! ```
//!
//! where `g_u`, `g_v` are detector-plane derivatives of the filtered image at
//! the projected position. The VJP contracts this with an upstream volume
//! on the fly; the `K × 12·N_p` Jacobian is never formed.
//!
//! Matrices must be oriented so that points in front of the source have
//! `w > 0`, as produced by [`build_circular_trajectory`](crate::geometry::build_circular_trajectory).
//!
//! Border rule: projections inside `[0, cols-1] × [0, rows-1]` are
//! interpolated normally. Within one pixel outside that box the value uses
//! clamped coordinates and the gradient is zero. Anything further out
//! contributes nothing.

use nalgebra::Matrix3x4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ProjectionMatrix, W_MIN};
use crate::volume::{ProjectionStack, StackState, Volume, VolumeGrid};

/// Detector-plane derivatives of every filtered view, pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImages {
    pub n_views: usize,
    pub rows: usize,
    pub cols: usize,
    pub g_u: Vec<f64>,
    pub g_v: Vec<f64>,
}

/// Central differences in the interior, one-sided differences on the edges.
pub fn detector_gradients(stack: &ProjectionStack) -> Result<GradientImages> {
    let (rows, cols) = (stack.rows, stack.cols);
    if rows < 3 || cols < 3 {
        return Err(Error::Argument(format!(
            "detector must be at least 3×3 for gradient images, got {cols}×{rows}"
        )));
    }
    let n = rows * cols;
    let mut g_u = vec![0.0; stack.data.len()];
    let mut g_v = vec![0.0; stack.data.len()];
    g_u.par_chunks_mut(n)
        .zip(g_v.par_chunks_mut(n))
        .zip(stack.data.par_chunks(n))
        .for_each(|((gu, gv), d)| {
            for r in 0..rows {
                let line = &d[r * cols..(r + 1) * cols];
                let out = &mut gu[r * cols..(r + 1) * cols];
                out[0] = line[1] - line[0];
                out[cols - 1] = line[cols - 1] - line[cols - 2];
                for c in 1..cols - 1 {
                    out[c] = 0.5 * (line[c + 1] - line[c - 1]);
                }
            }
            for c in 0..cols {
                let at = |r: usize| d[r * cols + c];
                gv[c] = at(1) - at(0);
                gv[(rows - 1) * cols + c] = at(rows - 1) - at(rows - 2);
                for r in 1..rows - 1 {
                    gv[r * cols + c] = 0.5 * (at(r + 1) - at(r - 1));
                }
            }
        });
    Ok(GradientImages {
        n_views: stack.n_views,
        rows,
        cols,
        g_u,
        g_v,
    })
}

/// How `g_u`, `g_v` are obtained at a projected position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSampling {
    /// Bilinear interpolation of the central-difference [`GradientImages`].
    CentralDifference,
    /// The analytic derivative of the bilinear interpolant used for the
    /// value, so the VJP is the exact derivative of [`backproject`].
    #[default]
    Exact,
}

/// One accumulated 3×4 derivative per view.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryGradient(pub Vec<Matrix3x4<f64>>);

impl GeometryGradient {
    pub fn views(&self) -> &[Matrix3x4<f64>] {
        &self.0
    }
}

/// Bilinear sampling location inside the detector.
#[derive(Clone, Copy)]
struct Cell {
    /// offset of the top-left pixel within a view
    base: usize,
    fu: f64,
    fv: f64,
    /// gradient active (strict interior)
    interior: bool,
}

#[inline]
fn locate(u: f64, v: f64, rows: usize, cols: usize) -> Option<Cell> {
    let (umax, vmax) = ((cols - 1) as f64, (rows - 1) as f64);
    if !(u > -1.0 && u < cols as f64 && v > -1.0 && v < rows as f64) {
        return None;
    }
    let interior = (0.0..=umax).contains(&u) && (0.0..=vmax).contains(&v);
    let uc = u.clamp(0.0, umax);
    let vc = v.clamp(0.0, vmax);
    let u0 = (uc.floor() as usize).min(cols - 2);
    let v0 = (vc.floor() as usize).min(rows - 2);
    Some(Cell {
        base: v0 * cols + u0,
        fu: uc - u0 as f64,
        fv: vc - v0 as f64,
        interior,
    })
}

#[inline]
fn bilinear(img: &[f64], cols: usize, c: &Cell) -> f64 {
    let a = img[c.base];
    let b = img[c.base + 1];
    let d = img[c.base + cols];
    let e = img[c.base + cols + 1];
    (1.0 - c.fv) * ((1.0 - c.fu) * a + c.fu * b) + c.fv * ((1.0 - c.fu) * d + c.fu * e)
}

#[inline]
fn bilinear_derivative(img: &[f64], cols: usize, c: &Cell) -> (f64, f64) {
    let a = img[c.base];
    let b = img[c.base + 1];
    let d = img[c.base + cols];
    let e = img[c.base + cols + 1];
    (
        (1.0 - c.fv) * (b - a) + c.fv * (e - d),
        (1.0 - c.fu) * (d - a) + c.fu * (e - b),
    )
}

/// A ramp-filtered stack prepared for repeated backprojection and geometry
/// VJPs. Gradient images are computed once here and reused for every call.
pub struct Backprojector<'a> {
    stack: &'a ProjectionStack,
    gradients: Option<GradientImages>,
    sampling: GradientSampling,
}

impl<'a> Backprojector<'a> {
    pub fn new(stack: &'a ProjectionStack, sampling: GradientSampling) -> Result<Self> {
        stack.expect_state(StackState::RampFiltered)?;
        if stack.rows < 2 || stack.cols < 2 {
            return Err(Error::Argument("detector must be at least 2×2".into()));
        }
        let gradients = match sampling {
            GradientSampling::CentralDifference => Some(detector_gradients(stack)?),
            GradientSampling::Exact => None,
        };
        Ok(Self {
            stack,
            gradients,
            sampling,
        })
    }

    pub fn stack(&self) -> &ProjectionStack {
        self.stack
    }

    pub fn sampling(&self) -> GradientSampling {
        self.sampling
    }

    fn check(&self, matrices: &[ProjectionMatrix], grid: &VolumeGrid) -> Result<Vec<[f64; 12]>> {
        grid.validate()?;
        if matrices.len() != self.stack.n_views {
            return Err(Error::Argument(format!(
                "{} matrices for a stack of {} views",
                matrices.len(),
                self.stack.n_views
            )));
        }
        let rows: Vec<[f64; 12]> = matrices.iter().map(ProjectionMatrix::to_row_major).collect();
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("projection matrices must be finite".into()));
        }
        Ok(rows)
    }

    fn check_behind(&self, behind: usize, grid: &VolumeGrid) -> Result<()> {
        let pairs = grid.len() * self.stack.n_views;
        if 2 * behind > pairs {
            return Err(Error::Geometry(format!(
                "{behind} of {pairs} voxel-view pairs project behind the source plane"
            )));
        }
        Ok(())
    }

    /// `I(p) = Σ_j d_j(P_j · p)` at every voxel center of `grid`.
    pub fn backproject(&self, matrices: &[ProjectionMatrix], grid: &VolumeGrid) -> Result<Volume> {
        let mats = self.check(matrices, grid)?;
        let [nx, ny, _] = grid.dims;
        let (rows, cols) = (self.stack.rows, self.stack.cols);
        let dx = grid.spacing_mm[0];
        let mut vol = Volume::zeros(*grid);

        let behind: usize = vol
            .data
            .par_chunks_mut(nx * ny)
            .enumerate()
            .map(|(iz, slab)| {
                let mut behind = 0usize;
                for (j, m) in mats.iter().enumerate() {
                    let img = self.stack.view(j);
                    for iy in 0..ny {
                        let p = grid.voxel_center(0, iy, iz);
                        let mut u = m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3];
                        let mut v = m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7];
                        let mut w = m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11];
                        let (su, sv, sw) = (m[0] * dx, m[4] * dx, m[8] * dx);
                        let out = &mut slab[iy * nx..(iy + 1) * nx];
                        for o in out.iter_mut() {
                            if w > W_MIN {
                                if let Some(c) = locate(u / w, v / w, rows, cols) {
                                    *o += bilinear(img, cols, &c);
                                }
                            } else {
                                behind += 1;
                            }
                            u += su;
                            v += sv;
                            w += sw;
                        }
                    }
                }
                behind
            })
            .sum();
        self.check_behind(behind, grid)?;
        Ok(vol)
    }

    /// `Σ_p upstream(p) · ∂I(p)/∂P_γ` for every view `γ`.
    ///
    /// Partial sums are formed per z-slab and reduced in slab order, so the
    /// result does not depend on the thread count.
    pub fn geometry_vjp(
        &self,
        matrices: &[ProjectionMatrix],
        grid: &VolumeGrid,
        upstream: &Volume,
    ) -> Result<GeometryGradient> {
        let mats = self.check(matrices, grid)?;
        if upstream.grid.dims != grid.dims {
            return Err(Error::Argument(format!(
                "upstream dims {:?} do not match grid dims {:?}",
                upstream.grid.dims, grid.dims
            )));
        }
        if upstream.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("upstream gradient must be finite".into()));
        }
        let [nx, ny, nz] = grid.dims;
        let (rows, cols) = (self.stack.rows, self.stack.cols);
        let dx = grid.spacing_mm[0];
        let n_views = mats.len();

        let partials: Vec<(Vec<[f64; 12]>, usize)> = (0..nz)
            .into_par_iter()
            .map(|iz| {
                let mut acc = vec![[0.0; 12]; n_views];
                let mut behind = 0usize;
                let up = &upstream.data[iz * nx * ny..(iz + 1) * nx * ny];
                for (j, m) in mats.iter().enumerate() {
                    let img = self.stack.view(j);
                    let grads = self.gradients.as_ref().map(|g| {
                        let n = rows * cols;
                        (&g.g_u[j * n..(j + 1) * n], &g.g_v[j * n..(j + 1) * n])
                    });
                    let a = &mut acc[j];
                    for iy in 0..ny {
                        let p0 = grid.voxel_center(0, iy, iz);
                        let mut u = m[0] * p0[0] + m[1] * p0[1] + m[2] * p0[2] + m[3];
                        let mut v = m[4] * p0[0] + m[5] * p0[1] + m[6] * p0[2] + m[7];
                        let mut w = m[8] * p0[0] + m[9] * p0[1] + m[10] * p0[2] + m[11];
                        let (su, sv, sw) = (m[0] * dx, m[4] * dx, m[8] * dx);
                        for ix in 0..nx {
                            let weight = up[iy * nx + ix];
                            if w <= W_MIN {
                                behind += 1;
                            } else if weight != 0.0 {
                                if let Some(c) = locate(u / w, v / w, rows, cols).filter(|c| c.interior) {
                                    let (gu, gv) = match grads {
                                        Some((gu, gv)) => (bilinear(gu, cols, &c), bilinear(gv, cols, &c)),
                                        None => bilinear_derivative(img, cols, &c),
                                    };
                                    let inv_w = 1.0 / w;
                                    let c1 = weight * gu * inv_w;
                                    let c2 = weight * gv * inv_w;
                                    let c3 = -weight * (gu * u + gv * v) * inv_w * inv_w;
                                    let x = p0[0] + ix as f64 * dx;
                                    let h = [x, p0[1], p0[2], 1.0];
                                    for k in 0..4 {
                                        a[k] += c1 * h[k];
                                        a[4 + k] += c2 * h[k];
                                        a[8 + k] += c3 * h[k];
                                    }
                                }
                            }
                            u += su;
                            v += sv;
                            w += sw;
                        }
                    }
                }
                (acc, behind)
            })
            .collect();

        let mut total = vec![[0.0; 12]; n_views];
        let mut behind = 0;
        for (acc, b) in partials {
            behind += b;
            for (t, a) in total.iter_mut().zip(&acc) {
                for k in 0..12 {
                    t[k] += a[k];
                }
            }
        }
        self.check_behind(behind, grid)?;
        Ok(GeometryGradient(
            total.iter().map(|t| Matrix3x4::from_row_slice(t)).collect(),
        ))
    }
}

/// Backproject a ramp-filtered stack onto `grid`.
pub fn backproject(
    stack: &ProjectionStack,
    matrices: &[ProjectionMatrix],
    grid: &VolumeGrid,
) -> Result<Volume> {
    Backprojector::new(stack, GradientSampling::Exact)?.backproject(matrices, grid)
}

/// Geometry VJP of [`backproject`] using the given gradient sampling.
pub fn backproject_geometry_vjp(
    stack: &ProjectionStack,
    matrices: &[ProjectionMatrix],
    grid: &VolumeGrid,
    upstream: &Volume,
    sampling: GradientSampling,
) -> Result<GeometryGradient> {
    Backprojector::new(stack, sampling)?.geometry_vjp(matrices, grid, upstream)
}

/// Central finite-difference check of the geometry VJP over every matrix
/// entry. Entry `(j, r, c)` is perturbed by `±rel_step·|P_j[r][c]|`, or by
/// `rel_step` times the largest of `|P_j[r][0..3]|` when the entry is
/// (near) zero. Returns the worst `|vjp − fd| / max(|fd|, 1e-2·max|fd|)`.
pub fn geometry_vjp_fd_check(
    stack: &ProjectionStack,
    matrices: &[ProjectionMatrix],
    grid: &VolumeGrid,
    upstream: &Volume,
    sampling: GradientSampling,
    rel_step: f64,
) -> Result<f64> {
    let bp = Backprojector::new(stack, sampling)?;
    let analytic = bp.geometry_vjp(matrices, grid, upstream)?;
    let value = |m: &[ProjectionMatrix]| -> Result<f64> {
        let v = bp.backproject(m, grid)?;
        Ok(v.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum())
    };
    let mut pairs = Vec::with_capacity(12 * matrices.len());
    for (j, p) in matrices.iter().enumerate() {
        let base = p.to_row_major();
        for e in 0..12 {
            let row = e / 4;
            let lin = base[4 * row..4 * row + 3].iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let eps = rel_step * if base[e].abs() > 1e-3 * lin { base[e].abs() } else { lin.max(1.0) };
            let mut shifted = matrices.to_vec();
            let mut b = base;
            b[e] = base[e] + eps;
            shifted[j] = ProjectionMatrix::from_row_major(&b);
            let plus = value(&shifted)?;
            b[e] = base[e] - eps;
            shifted[j] = ProjectionMatrix::from_row_major(&b);
            let minus = value(&shifted)?;
            pairs.push((analytic.0[j][(row, e % 4)], (plus - minus) / (2.0 * eps)));
        }
    }
    let floor = 1e-2 * pairs.iter().fold(0.0f64, |a, &(_, f)| a.max(f.abs()));
    Ok(pairs
        .iter()
        .map(|&(a, f)| (a - f).abs() / f.abs().max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max))
}
