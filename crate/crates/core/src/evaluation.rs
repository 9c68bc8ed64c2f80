//! Ground-truth scoring: reprojection error, motion-parameter MAE and
//! image metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_point, ProjectionMatrix};
use crate::motion::{motion_curves, SplineMotion, N_PARAMS, PARAM_NAMES};
use crate::objectives::{mse_map, ssim_map, vif_map};
use crate::volume::Volume;

pub const EVAL_RADII_MM: [f64; 3] = [25.0, 50.0, 100.0];
pub const POINTS_PER_RADIUS: usize = 100;

/// 300 points on spheres of radius 25, 50 and 100 mm about the isocenter,
/// each sphere covered by a Fibonacci lattice.
pub fn eval_points() -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let n = POINTS_PER_RADIUS;
    let mut out = Vec::with_capacity(n * EVAL_RADII_MM.len());
    for (s, &r) in EVAL_RADII_MM.iter().enumerate() {
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            // offset each shell so the spheres do not share directions
            let phi = golden * i as f64 + s as f64;
            let dir = Vector3::new(rho * phi.cos(), rho * phi.sin(), z).normalize();
            out.push(dir * r);
        }
    }
    out
}

/// Mean detector distance (mm) between projections of `points` under two
/// geometries, over every point and view.
pub fn reprojection_error(
    est: &[ProjectionMatrix],
    gt: &[ProjectionMatrix],
    points: &[Vector3<f64>],
    pixel_spacing_mm: f64,
) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::Argument(format!("{} vs {} views", est.len(), gt.len())));
    }
    if est.is_empty() || points.is_empty() {
        return Err(Error::Argument("reprojection error needs views and points".into()));
    }
    let mut sum = 0.0;
    for (a, b) in est.iter().zip(gt) {
        for p in points {
            let (_, ua) = project_point(a, p)?;
            let (_, ub) = project_point(b, p)?;
            sum += (ua - ub).norm();
        }
    }
    Ok(sum / (est.len() * points.len()) as f64 * pixel_spacing_mm)
}

/// Per-parameter mean absolute error of zero-centered motion curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterMae {
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
    /// Mean of `t_x`, `t_y`, `r_z`.
    pub in_plane: f64,
    /// Mean of `t_z`, `r_x`, `r_y`.
    pub out_of_plane: f64,
}

impl ParameterMae {
    pub fn from_array(a: [f64; N_PARAMS]) -> Self {
        Self {
            t_x: a[0],
            t_y: a[1],
            t_z: a[2],
            r_x: a[3],
            r_y: a[4],
            r_z: a[5],
            in_plane: (a[0] + a[1] + a[5]) / 3.0,
            out_of_plane: (a[2] + a[3] + a[4]) / 3.0,
        }
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [self.t_x, self.t_y, self.t_z, self.r_x, self.r_y, self.r_z]
    }
}

fn centered_curves(x: &SplineMotion, n_views: usize) -> Result<[Vec<f64>; N_PARAMS]> {
    let curves = motion_curves(x, n_views)?;
    Ok(std::array::from_fn(|p| {
        let c: Vec<f64> = curves.iter().map(|r| r.to_array()[p]).collect();
        let mean = c.iter().sum::<f64>() / n_views as f64;
        c.into_iter().map(|v| v - mean).collect()
    }))
}

/// MAE between estimated and true motion over every view, after removing
/// each curve's mean. The two splines may use different node counts.
pub fn parameter_mae(x_est: &SplineMotion, x_gt: &SplineMotion, n_views: usize) -> Result<ParameterMae> {
    let a = centered_curves(x_est, n_views)?;
    let b = centered_curves(x_gt, n_views)?;
    Ok(ParameterMae::from_array(std::array::from_fn(|p| {
        a[p].iter().zip(&b[p]).map(|(u, v)| (u - v).abs()).sum::<f64>() / n_views as f64
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub rmse: f64,
    pub ssim: f64,
    pub vif: f64,
}

/// RMSE, SSIM and VIF of `recon` against `reference`.
pub fn image_metrics(recon: &Volume, reference: &Volume) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        rmse: mse_map(recon, reference)?.score.sqrt(),
        ssim: ssim_map(recon, reference)?.score,
        vif: vif_map(recon, reference)?.score,
    })
}

/// Scores of one experiment, before (`*_initial`) and after compensation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub rpe_initial_mm: f64,
    pub rpe_mm: f64,
    pub mae_initial: ParameterMae,
    pub mae: ParameterMae,
    pub image_initial: ImageMetrics,
    pub image: ImageMetrics,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub eval_count: usize,
}

impl EvalReport {
    pub fn csv_header() -> String {
        let mut cols = vec!["metric".to_string(), "rpe_initial_mm".into(), "rpe_mm".into()];
        for prefix in ["mae_initial", "mae"] {
            cols.extend(PARAM_NAMES.iter().map(|n| format!("{prefix}_{n}")));
            cols.push(format!("{prefix}_in_plane"));
            cols.push(format!("{prefix}_out_of_plane"));
        }
        for prefix in ["initial", "final"] {
            cols.extend(["rmse", "ssim", "vif"].iter().map(|n| format!("{prefix}_{n}")));
        }
        cols.extend(["objective_initial".into(), "objective_final".into(), "eval_count".into()]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.metric.clone(), self.rpe_initial_mm.to_string(), self.rpe_mm.to_string()];
        for m in [&self.mae_initial, &self.mae] {
            cols.extend(m.to_array().iter().map(f64::to_string));
            cols.push(m.in_plane.to_string());
            cols.push(m.out_of_plane.to_string());
        }
        for i in [&self.image_initial, &self.image] {
            cols.extend([i.rmse, i.ssim, i.vif].iter().map(f64::to_string));
        }
        cols.extend([
            self.objective_initial.to_string(),
            self.objective_final.to_string(),
            self.eval_count.to_string(),
        ]);
        cols.join(",")
    }
}
