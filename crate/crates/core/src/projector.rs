//! Simulation side of the pipeline: phantoms, a ray-driven cone-beam forward
//! projector, cosine weighting and the ramp filter.
//!
//! The angular weight `π / N_p` and the detector sampling factors are folded
//! into [`ramp_filter`], so backprojection is a plain sum over views. Images
//! come out in attenuation units divided by the isocenter magnification; the
//! distance weighting of exact FDK is not applied.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ProjectionMatrix, ScanGeometry};
use crate::volume::{ProjectionStack, StackState, Volume, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SheppLogan3d,
    Spheres,
    Uniform,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp_logan_3d" => Ok(Self::SheppLogan3d),
            "spheres" => Ok(Self::Spheres),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Argument(format!("unknown phantom kind `{other}`"))),
        }
    }
}

/// Modified 3D Shepp–Logan ellipsoids in half-FOV units:
/// intensity, semi-axes (a, b, c), center (x0, y0, z0), Euler angles (φ, θ, ψ) in degrees.
const SHEPP_LOGAN_3D: [[f64; 10]; 10] = [
    [1.0, 0.6900, 0.920, 0.810, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.780, 0.0, -0.0184, 0.0, 0.0, 0.0, 0.0],
    [-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0, 0.0, -18.0, 0.0, 10.0],
    [-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0, 0.0, 18.0, 0.0, 10.0],
    [0.1, 0.2100, 0.250, 0.410, 0.0, 0.35, -0.15, 0.0, 0.0, 0.0],
    [0.1, 0.0460, 0.046, 0.050, 0.0, 0.1, 0.25, 0.0, 0.0, 0.0],
    [0.1, 0.0460, 0.046, 0.050, 0.0, -0.1, 0.25, 0.0, 0.0, 0.0],
    [0.1, 0.0460, 0.023, 0.050, -0.08, -0.605, 0.0, 0.0, 0.0, 0.0],
    [0.1, 0.0230, 0.023, 0.020, 0.0, -0.606, 0.0, 0.0, 0.0, 0.0],
    [0.1, 0.0230, 0.046, 0.020, 0.06, -0.605, 0.0, 0.0, 0.0, 0.0],
];

/// Spheres phantom: center (x, y, z), radius (half-FOV units), intensity.
const SPHERES: [[f64; 5]; 5] = [
    [0.0, 0.0, 0.0, 0.70, 0.5],
    [0.30, 0.25, 0.0, 0.15, 0.5],
    [-0.30, 0.10, 0.20, 0.20, 0.3],
    [0.05, -0.35, -0.20, 0.10, 0.4],
    [-0.10, -0.10, -0.40, 0.08, 0.25],
];

fn euler_zxz(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sp, cp) = phi.to_radians().sin_cos();
    let (st, ct) = theta.to_radians().sin_cos();
    let (ss, cs) = psi.to_radians().sin_cos();
    Matrix3::new(
        cs * cp - ct * sp * ss,
        cs * sp + ct * cp * ss,
        ss * st,
        -ss * cp - ct * sp * cs,
        -ss * sp + ct * cp * cs,
        cs * st,
        st * sp,
        -st * cp,
        ct,
    )
}

/// Build a test phantom on a grid centered at the isocenter.
pub fn make_phantom(kind: PhantomKind, dims: [usize; 3], spacing_mm: f64) -> Result<Volume> {
    if dims.iter().any(|&d| d < 8) {
        return Err(Error::Argument(format!("phantom dims must be >= 8 per axis, got {dims:?}")));
    }
    let grid = VolumeGrid::centered(dims, spacing_mm);
    grid.validate()?;
    let half_fov: [f64; 3] = std::array::from_fn(|a| dims[a] as f64 * spacing_mm / 2.0);
    let center = grid.center_mm();
    let ellipsoids: Vec<(Matrix3<f64>, [f64; 10])> = SHEPP_LOGAN_3D
        .iter()
        .map(|e| (euler_zxz(e[7], e[8], e[9]), *e))
        .collect();
    let ball_radius = 0.8 * half_fov.iter().copied().fold(f64::INFINITY, f64::min);

    let mut vol = Volume::zeros(grid);
    vol.data.par_chunks_mut(dims[0]).enumerate().for_each(|(line, out)| {
        let (iy, iz) = (line % dims[1], line / dims[1]);
        for (ix, v) in out.iter_mut().enumerate() {
            let w = grid.voxel_center(ix, iy, iz);
            let rel: [f64; 3] = std::array::from_fn(|a| w[a] - center[a]);
            *v = match kind {
                PhantomKind::SheppLogan3d => {
                    let p = Vector3::new(rel[0] / half_fov[0], rel[1] / half_fov[1], rel[2] / half_fov[2]);
                    ellipsoids
                        .iter()
                        .filter(|(rot, e)| {
                            let q = rot * p;
                            let d = [(q.x - e[4]) / e[1], (q.y - e[5]) / e[2], (q.z - e[6]) / e[3]];
                            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= 1.0
                        })
                        .map(|(_, e)| e[0])
                        .sum()
                }
                PhantomKind::Spheres => {
                    let p: [f64; 3] = std::array::from_fn(|a| rel[a] / half_fov[a]);
                    SPHERES
                        .iter()
                        .filter(|s| {
                            let d = [p[0] - s[0], p[1] - s[1], p[2] - s[2]];
                            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= s[3] * s[3]
                        })
                        .map(|s| s[4])
                        .sum()
                }
                PhantomKind::Uniform => {
                    let r2 = rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2];
                    if r2 <= ball_radius * ball_radius {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
    });
    Ok(vol)
}

/// Trilinear interpolation with zero outside the voxel centers' hull.
#[inline]
fn trilinear(vol: &Volume, p: [f64; 3]) -> f64 {
    let g = &vol.grid;
    let mut base = [0isize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let f = (p[a] - g.origin_mm[a]) / g.spacing_mm[a];
        let fl = f.floor();
        base[a] = fl as isize;
        frac[a] = f - fl;
        if base[a] < -1 || base[a] >= g.dims[a] as isize {
            return 0.0;
        }
    }
    let mut acc = 0.0;
    for dz in 0..2 {
        let iz = base[2] + dz;
        if iz < 0 || iz >= g.dims[2] as isize {
            continue;
        }
        let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
        for dy in 0..2 {
            let iy = base[1] + dy;
            if iy < 0 || iy >= g.dims[1] as isize {
                continue;
            }
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            for dx in 0..2 {
                let ix = base[0] + dx;
                if ix < 0 || ix >= g.dims[0] as isize {
                    continue;
                }
                let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                acc += wx * wy * wz * vol.get(ix as usize, iy as usize, iz as usize);
            }
        }
    }
    acc
}

/// Ray parameter interval `[t0, t1]` where `origin + t·dir` is inside the box.
fn clip_ray(origin: &Vector3<f64>, dir: &Vector3<f64>, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = 0.0_f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let ta = (lo[a] - origin[a]) / dir[a];
        let tb = (hi[a] - origin[a]) / dir[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 > t0).then_some((t0, t1))
}

/// Ray-driven line integrals in mm: rays from the source through every pixel
/// center, trilinear samples every half of the smallest voxel spacing.
pub fn forward_project(
    vol: &Volume,
    matrices: &[ProjectionMatrix],
    geom: &ScanGeometry,
) -> Result<ProjectionStack> {
    geom.validate()?;
    vol.grid.validate()?;
    if matrices.len() != geom.n_views {
        return Err(Error::Argument(format!(
            "{} matrices for {} views",
            matrices.len(),
            geom.n_views
        )));
    }
    let (rows, cols) = (geom.detector_rows, geom.detector_cols);
    let views: Vec<(Vector3<f64>, Matrix3<f64>)> = matrices
        .iter()
        .map(|p| {
            let m: Matrix3<f64> = p.0.fixed_columns::<3>(0).into_owned();
            let inv = m
                .try_inverse()
                .ok_or_else(|| Error::Geometry("degenerate projection matrix: singular 3×3 block".into()))?;
            Ok((-(inv * p.0.column(3)), inv))
        })
        .collect::<Result<_>>()?;

    let g = &vol.grid;
    let lo: [f64; 3] = std::array::from_fn(|a| g.origin_mm[a] - 0.5 * g.spacing_mm[a]);
    let hi: [f64; 3] =
        std::array::from_fn(|a| g.origin_mm[a] + (g.dims[a] as f64 - 0.5) * g.spacing_mm[a]);
    let step = g.spacing_mm.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;

    let mut stack = ProjectionStack::zeros(geom.n_views, rows, cols, geom.pixel_spacing_mm, StackState::Raw);
    stack.data.par_chunks_mut(cols).enumerate().for_each(|(line, out)| {
        let (view, row) = (line / rows, line % rows);
        let (source, inv) = &views[view];
        for (col, px) in out.iter_mut().enumerate() {
            let d = inv * Vector3::new(col as f64, row as f64, 1.0);
            let dir = d / d.norm();
            let Some((t0, t1)) = clip_ray(source, &dir, lo, hi) else {
                continue;
            };
            let mut sum = 0.0;
            let mut t = t0 + 0.5 * step;
            while t < t1 {
                let p = source + dir * t;
                sum += trilinear(vol, [p.x, p.y, p.z]);
                t += step;
            }
            *px = sum * step;
        }
    });
    Ok(stack)
}

/// Cosine weight of a pixel at physical offset `(du, dv)` mm from the
/// principal point.
#[inline]
pub fn cosine_weight_at(sdd: f64, du: f64, dv: f64) -> f64 {
    sdd / (sdd * sdd + du * du + dv * dv).sqrt()
}

pub fn cosine_weight(stack: &ProjectionStack, geom: &ScanGeometry) -> Result<ProjectionStack> {
    stack.expect_state(StackState::Raw)?;
    if stack.rows != geom.detector_rows || stack.cols != geom.detector_cols || stack.n_views != geom.n_views {
        return Err(Error::Argument("stack shape does not match the scan geometry".into()));
    }
    let (cu, cv) = geom.principal_point();
    let ds = stack.pixel_spacing_mm;
    let weights: Vec<f64> = (0..stack.rows)
        .flat_map(|r| {
            (0..stack.cols).map(move |c| {
                cosine_weight_at(geom.source_to_detector_mm, (c as f64 - cu) * ds, (r as f64 - cv) * ds)
            })
        })
        .collect();
    let mut out = stack.clone();
    out.state = StackState::CosineWeighted;
    out.data
        .par_chunks_mut(weights.len())
        .for_each(|view| view.iter_mut().zip(&weights).for_each(|(v, w)| *v *= w));
    Ok(out)
}

/// Ramp kernel sample `h[n]` for detector spacing `du` (mm).
#[inline]
pub fn ramp_kernel_tap(n: i64, du: f64) -> f64 {
    if n == 0 {
        1.0 / (4.0 * du * du)
    } else if n % 2 == 0 {
        0.0
    } else {
        let nf = n as f64;
        -1.0 / (std::f64::consts::PI * std::f64::consts::PI * nf * nf * du * du)
    }
}

/// FFT length for filtering rows of `cols` samples.
pub fn ramp_fft_len(cols: usize) -> usize {
    (2 * cols).next_power_of_two()
}

/// Convolves every detector row with the band-limited ramp kernel via a
/// zero-padded FFT and applies the `du · π / N_p` quadrature weight.
pub fn ramp_filter(stack: &ProjectionStack) -> Result<ProjectionStack> {
    stack.expect_state(StackState::CosineWeighted)?;
    let cols = stack.cols;
    let len = ramp_fft_len(cols);
    let du = stack.pixel_spacing_mm;
    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(len);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(len);

    let mut kernel: Vec<Complex<f64>> = (0..len)
        .map(|i| {
            let n = if i < len / 2 { i as i64 } else { i as i64 - len as i64 };
            Complex::new(ramp_kernel_tap(n, du), 0.0)
        })
        .collect();
    forward.process(&mut kernel);
    let scale = du * std::f64::consts::PI / stack.n_views as f64 / len as f64;
    for k in kernel.iter_mut() {
        *k *= scale;
    }

    let mut out = stack.clone();
    out.state = StackState::RampFiltered;
    out.data.par_chunks_mut(cols).for_each_init(
        || vec![Complex::new(0.0, 0.0); len],
        |buf, row| {
            for (b, v) in buf.iter_mut().zip(row.iter().chain(std::iter::repeat(&0.0))) {
                *b = Complex::new(*v, 0.0);
            }
            forward.process(buf);
            for (b, k) in buf.iter_mut().zip(&kernel) {
                *b *= k;
            }
            inverse.process(buf);
            for (r, b) in row.iter_mut().zip(buf.iter()) {
                *r = b.re;
            }
        },
    );
    Ok(out)
}
