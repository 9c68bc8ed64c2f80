//! Autofocus metrics with exact volume gradients, and reference-based
//! quality maps (MSE, SSIM, VIF).
//!
//! Metrics expect intensities normalized to roughly `[0, 1]`; [`Normalized`]
//! applies a fixed affine normalization in front of any metric.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::gaussian_blur;
use crate::volume::Volume;

/// A scalar image-quality function with its exact derivative.
pub trait DifferentiableMetric: Sync {
    /// Returns `(q(I), ∂q/∂I)`; the gradient has the dims of `vol`.
    fn evaluate(&self, vol: &Volume) -> Result<(f64, Volume)>;
}

impl<M: DifferentiableMetric + ?Sized> DifferentiableMetric for &M {
    fn evaluate(&self, vol: &Volume) -> Result<(f64, Volume)> {
        (**self).evaluate(vol)
    }
}

impl<M: DifferentiableMetric + ?Sized + Send> DifferentiableMetric for Box<M> {
    fn evaluate(&self, vol: &Volume) -> Result<(f64, Volume)> {
        (**self).evaluate(vol)
    }
}

pub const TV_EPS: f64 = 1e-6;

/// Anisotropic total variation `(1/K) Σ_axes Σ_p √(Δ² + ε²)` over forward
/// differences, with a zero difference past the last voxel of each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedTv {
    pub eps: f64,
}

impl Default for SmoothedTv {
    fn default() -> Self {
        Self { eps: TV_EPS }
    }
}

impl DifferentiableMetric for SmoothedTv {
    fn evaluate(&self, vol: &Volume) -> Result<(f64, Volume)> {
        let [nx, ny, nz] = vol.dims();
        let k = vol.len();
        if k == 0 {
            return Err(Error::Argument("TV of an empty volume".into()));
        }
        let eps2 = self.eps * self.eps;
        let strides = [1, nx, nx * ny];
        let d = &vol.data;
        let inv_k = 1.0 / k as f64;

        // dq/dI accumulates +t at p and -t at p+stride for each term
        // t = Δ/√(Δ²+ε²); slabs are independent after gathering per voxel.
        let slab = nx * ny;
        let (value, grad): (Vec<f64>, Vec<Vec<f64>>) = (0..nz)
            .into_par_iter()
            .map(|iz| {
                let mut sum = 0.0;
                let mut g = vec![0.0; slab];
                for iy in 0..ny {
                    for ix in 0..nx {
                        let p = iz * slab + iy * nx + ix;
                        let pos = [ix, iy, iz];
                        let lens = [nx, ny, nz];
                        for a in 0..3 {
                            // term owned by p
                            let delta = if pos[a] + 1 < lens[a] { d[p + strides[a]] - d[p] } else { 0.0 };
                            let r = (delta * delta + eps2).sqrt();
                            sum += r;
                            g[iy * nx + ix] -= delta / r;
                            // term owned by the predecessor along a
                            if pos[a] > 0 {
                                let q = p - strides[a];
                                let delta = d[p] - d[q];
                                g[iy * nx + ix] += delta / (delta * delta + eps2).sqrt();
                            }
                        }
                    }
                }
                (sum, g)
            })
            .unzip();
        let value = value.iter().sum::<f64>() * inv_k;
        let data: Vec<f64> = grad.into_iter().flatten().map(|g| g * inv_k).collect();
        Ok((value, Volume { grid: vol.grid, data }))
    }
}

/// Smoothed TV with the default `ε`.
pub fn smoothed_tv(vol: &Volume) -> Result<(f64, Volume)> {
    SmoothedTv::default().evaluate(vol)
}

/// Evaluates `inner` on `slope · I + offset`.
#[derive(Debug, Clone)]
pub struct Normalized<M> {
    pub inner: M,
    pub slope: f64,
    pub offset: f64,
}

impl<M: DifferentiableMetric> DifferentiableMetric for Normalized<M> {
    fn evaluate(&self, vol: &Volume) -> Result<(f64, Volume)> {
        let (v, mut g) = self.inner.evaluate(&vol.affine(self.slope, self.offset))?;
        g.data.iter_mut().for_each(|x| *x *= self.slope);
        Ok((v, g))
    }
}

/// Mean squared difference to a fixed reference volume.
#[derive(Debug, Clone)]
pub struct MseToReference {
    pub reference: Volume,
}

impl DifferentiableMetric for MseToReference {
    fn evaluate(&self, vol: &Volume) -> Result<(f64, Volume)> {
        vol.check_same_dims(&self.reference)?;
        let inv_k = 1.0 / vol.len() as f64;
        let mut value = 0.0;
        let data = vol
            .data
            .iter()
            .zip(&self.reference.data)
            .map(|(a, b)| {
                value += (a - b) * (a - b);
                2.0 * (a - b) * inv_k
            })
            .collect();
        Ok((value * inv_k, Volume { grid: vol.grid, data }))
    }
}

/// Worst-case disagreement between a metric gradient and central
/// differences over every voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdErrors {
    pub max_abs: f64,
    pub grad_inf_norm: f64,
}

impl FdErrors {
    /// `max_abs / ‖g‖∞`, or `max_abs` when the gradient vanishes.
    pub fn relative(&self) -> f64 {
        if self.grad_inf_norm > 0.0 {
            self.max_abs / self.grad_inf_norm
        } else {
            self.max_abs
        }
    }
}

pub fn metric_gradient_fd_errors<M: DifferentiableMetric + ?Sized>(
    metric: &M,
    vol: &Volume,
    step: f64,
) -> Result<FdErrors> {
    if vol.len() > 16 * 16 * 16 {
        return Err(Error::Argument(format!(
            "finite-difference check needs at most 16³ voxels, got {}",
            vol.len()
        )));
    }
    let (_, grad) = metric.evaluate(vol)?;
    let fd: Vec<f64> = (0..vol.len())
        .into_par_iter()
        .map(|k| {
            let mut v = vol.clone();
            v.data[k] = vol.data[k] + step;
            let plus = metric.evaluate(&v)?.0;
            v.data[k] = vol.data[k] - step;
            let minus = metric.evaluate(&v)?.0;
            Ok((plus - minus) / (2.0 * step))
        })
        .collect::<Result<_>>()?;
    let max_abs = fd.iter().zip(&grad.data).map(|(f, g)| (f - g).abs()).fold(0.0, f64::max);
    let grad_inf_norm = grad.data.iter().map(|g| g.abs()).fold(0.0, f64::max);
    Ok(FdErrors { max_abs, grad_inf_norm })
}

/// Worst voxel error of the metric gradient relative to its largest entry.
pub fn metric_gradient_fd_check<M: DifferentiableMetric + ?Sized>(metric: &M, vol: &Volume, step: f64) -> Result<f64> {
    Ok(metric_gradient_fd_errors(metric, vol, step)?.relative())
}

/// A per-voxel quality map with `scalar() = scale · Σ data`.
///
/// `score` holds the underlying quality value (MSE, SSIM or VIF) computed
/// directly. For SSIM and VIF the map holds the complement form, so
/// `scalar() = 1 − score`; for MSE `scalar() = score`.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityMap {
    pub map: Volume,
    pub scale: f64,
    pub score: f64,
}

impl QualityMap {
    pub fn scalar(&self) -> f64 {
        self.scale * self.map.data.iter().sum::<f64>()
    }
}

pub fn mse_map(dist: &Volume, reference: &Volume) -> Result<QualityMap> {
    dist.check_same_dims(reference)?;
    let data: Vec<f64> = dist.data.iter().zip(&reference.data).map(|(a, b)| (a - b) * (a - b)).collect();
    let k = data.len() as f64;
    let score = data.iter().sum::<f64>() / k;
    Ok(QualityMap {
        map: Volume { grid: dist.grid, data },
        scale: 1.0 / k,
        score,
    })
}

pub const SSIM_SIGMA: f64 = 1.5;
pub const WINDOW_RADIUS: usize = 5;
const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

struct Moments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn local_moments(x: &[f64], y: &[f64], dims: [usize; 3], sigma: f64) -> Moments {
    let blur = |v: &[f64]| gaussian_blur(v, dims, sigma, WINDOW_RADIUS);
    let mu_x = blur(x);
    let mu_y = blur(y);
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let var_x = blur(&xx).iter().zip(&mu_x).map(|(s, m)| s - m * m).collect();
    let var_y = blur(&yy).iter().zip(&mu_y).map(|(s, m)| s - m * m).collect();
    let cov = blur(&xy).iter().zip(mu_x.iter().zip(&mu_y)).map(|(s, (a, b))| s - a * b).collect();
    Moments { mu_x, mu_y, var_x, var_y, cov }
}

/// SSIM with a 3D Gaussian window (σ = 1.5, radius 5) and `L = 1`.
/// The map stores `1 − SSIM(p)`.
pub fn ssim_map(dist: &Volume, reference: &Volume) -> Result<QualityMap> {
    dist.check_same_dims(reference)?;
    let m = local_moments(&dist.data, &reference.data, dist.dims(), SSIM_SIGMA);
    let ssim: Vec<f64> = (0..dist.len())
        .map(|p| {
            let (a, b) = (m.mu_x[p], m.mu_y[p]);
            ((2.0 * a * b + SSIM_C1) * (2.0 * m.cov[p] + SSIM_C2))
                / ((a * a + b * b + SSIM_C1) * (m.var_x[p] + m.var_y[p] + SSIM_C2))
        })
        .collect();
    let k = ssim.len() as f64;
    let score = ssim.iter().sum::<f64>() / k;
    Ok(QualityMap {
        map: Volume {
            grid: dist.grid,
            data: ssim.iter().map(|s| 1.0 - s).collect(),
        },
        scale: 1.0 / k,
        score,
    })
}

pub const VIF_SCALES: usize = 4;
pub const VIF_NOISE_VAR: f64 = 2.0;
/// Intensities are mapped from `[0, 1]` to the 8-bit range so that the
/// noise variance keeps its usual meaning.
pub const VIF_INTENSITY_RANGE: f64 = 255.0;
const VIF_WINDOW_SIGMA: f64 = 1.5;
const VIF_DOWNSAMPLE_SIGMA: f64 = 1.0;
const VIF_TINY: f64 = 1e-10;

fn downsample(data: &[f64], dims: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let nd = dims.map(|n| n.div_ceil(2));
    let mut out = Vec::with_capacity(nd.iter().product());
    for z in 0..nd[2] {
        for y in 0..nd[1] {
            for x in 0..nd[0] {
                out.push(data[((2 * z) * dims[1] + 2 * y) * dims[0] + 2 * x]);
            }
        }
    }
    (out, nd)
}

/// Spreads a coarse map onto the full grid; each coarse value is divided
/// evenly among the fine voxels it covers, so sums are preserved.
fn spread(coarse: &[f64], level: usize, coarse_dims: [usize; 3], fine_dims: [usize; 3]) -> Vec<f64> {
    let f = 1usize << level;
    let mut counts = vec![0usize; coarse.len()];
    let cell = |x: usize, y: usize, z: usize| ((z / f) * coarse_dims[1] + y / f) * coarse_dims[0] + x / f;
    for z in 0..fine_dims[2] {
        for y in 0..fine_dims[1] {
            for x in 0..fine_dims[0] {
                counts[cell(x, y, z)] += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(fine_dims.iter().product());
    for z in 0..fine_dims[2] {
        for y in 0..fine_dims[1] {
            for x in 0..fine_dims[0] {
                let c = cell(x, y, z);
                out.push(coarse[c] / counts[c] as f64);
            }
        }
    }
    out
}

/// Pixel-domain VIF over four scales. With `m` the per-voxel share of the
/// information ratio (`Σ m = VIF`), the map stores `1 − K·m(p)`.
pub fn vif_map(dist: &Volume, reference: &Volume) -> Result<QualityMap> {
    dist.check_same_dims(reference)?;
    let first = reference.data[0];
    if reference.data.iter().all(|&v| v == first) {
        return Err(Error::DegenerateReference);
    }
    let fine_dims = dist.dims();
    let mut r: Vec<f64> = reference.data.iter().map(|v| v * VIF_INTENSITY_RANGE).collect();
    let mut d: Vec<f64> = dist.data.iter().map(|v| v * VIF_INTENSITY_RANGE).collect();
    let mut dims = fine_dims;
    let mut numerator = vec![0.0; dist.len()];
    let mut denominator = 0.0;

    for level in 0..VIF_SCALES {
        if level > 0 {
            let (rr, nd) = downsample(&gaussian_blur(&r, dims, VIF_DOWNSAMPLE_SIGMA, WINDOW_RADIUS), dims);
            let (dd, _) = downsample(&gaussian_blur(&d, dims, VIF_DOWNSAMPLE_SIGMA, WINDOW_RADIUS), dims);
            r = rr;
            d = dd;
            dims = nd;
        }
        let m = local_moments(&r, &d, dims, VIF_WINDOW_SIGMA);
        let mut num = vec![0.0; r.len()];
        for p in 0..r.len() {
            let s_ref = m.var_x[p].max(0.0);
            let s_dist = m.var_y[p].max(0.0);
            let mut g = m.cov[p] / (s_ref + VIF_TINY);
            let mut sv = s_dist - g * m.cov[p];
            if s_ref < VIF_TINY {
                g = 0.0;
                sv = s_dist;
            }
            if s_dist < VIF_TINY {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s_dist;
                g = 0.0;
            }
            let sv = sv.max(VIF_TINY);
            num[p] = (1.0 + g * g * s_ref / (sv + VIF_NOISE_VAR)).log2();
            denominator += (1.0 + s_ref / VIF_NOISE_VAR).log2();
        }
        for (acc, v) in numerator.iter_mut().zip(spread(&num, level, dims, fine_dims)) {
            *acc += v;
        }
    }
    if !(denominator > VIF_TINY) {
        return Err(Error::DegenerateReference);
    }
    let k = dist.len() as f64;
    let share: Vec<f64> = numerator.iter().map(|n| n / denominator).collect();
    let score = numerator.iter().sum::<f64>() / denominator;
    Ok(QualityMap {
        map: Volume {
            grid: dist.grid,
            data: share.iter().map(|m| 1.0 - k * m).collect(),
        },
        scale: 1.0 / k,
        score,
    })
}
