//! Spline motion model: six Akima curves over the view index that turn a
//! small parameter vector into one rigid transform, and hence one corrected
//! projection matrix, per view.

mod akima;

pub use akima::{akima_eval, AkimaSpline};

use nalgebra::{Matrix3x4, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_motion, rigid_params_to_matrix, rotation_with_derivatives, ProjectionMatrix, RigidParams,
};

/// Number of rigid parameters per view.
pub const N_PARAMS: usize = 6;

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; N_PARAMS] = ["t_x", "t_y", "t_z", "r_x", "r_y", "r_z"];

/// Akima node values for each rigid parameter.
///
/// Rows are ordered `t_x, t_y, t_z, r_x, r_y, r_z`; translations in mm and
/// rotations in degrees. The same shape doubles as the gradient with respect
/// to the node values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SplineMotionRepr", try_from = "SplineMotionRepr")]
pub struct SplineMotion {
    pub node_times: Vec<f64>,
    pub node_values: [Vec<f64>; N_PARAMS],
}

#[derive(Serialize, Deserialize)]
struct SplineMotionRepr {
    n_nodes: usize,
    node_times: Vec<f64>,
    node_values: Vec<Vec<f64>>,
    units: String,
}

impl From<SplineMotion> for SplineMotionRepr {
    fn from(m: SplineMotion) -> Self {
        Self {
            n_nodes: m.n_nodes(),
            node_times: m.node_times,
            node_values: m.node_values.to_vec(),
            units: "mm/deg".into(),
        }
    }
}

impl TryFrom<SplineMotionRepr> for SplineMotion {
    type Error = Error;

    fn try_from(r: SplineMotionRepr) -> Result<Self> {
        if r.node_times.len() != r.n_nodes {
            return Err(Error::format("node_times", format!(
                "expected {} entries, found {}",
                r.n_nodes,
                r.node_times.len()
            )));
        }
        let rows: [Vec<f64>; N_PARAMS] = r.node_values.try_into().map_err(|v: Vec<Vec<f64>>| {
            Error::format("node_values", format!("expected 6 rows, found {}", v.len()))
        })?;
        if let Some(row) = rows.iter().find(|row| row.len() != r.n_nodes) {
            return Err(Error::format("node_values", format!(
                "row has {} entries, expected {}",
                row.len(),
                r.n_nodes
            )));
        }
        if r.units != "mm/deg" {
            return Err(Error::format("units", format!("expected \"mm/deg\", found {:?}", r.units)));
        }
        Ok(SplineMotion {
            node_times: r.node_times,
            node_values: rows,
        })
    }
}

/// Node times evenly spaced over `[0, n_views - 1]`, both ends included.
pub fn even_node_times(n_nodes: usize, n_views: usize) -> Vec<f64> {
    let last = n_views.saturating_sub(1) as f64;
    let denom = n_nodes.saturating_sub(1).max(1) as f64;
    (0..n_nodes)
        .map(|k| if k + 1 == n_nodes { last } else { k as f64 * last / denom })
        .collect()
}

impl SplineMotion {
    /// Zero motion with evenly spaced nodes.
    pub fn zeros(n_nodes: usize, n_views: usize) -> Self {
        Self {
            node_times: even_node_times(n_nodes, n_views),
            node_values: std::array::from_fn(|_| vec![0.0; n_nodes]),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_times.len()
    }

    /// Row-major `6 × N_n` copy of the node values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.node_values.concat()
    }

    pub fn from_flat(node_times: Vec<f64>, flat: &[f64]) -> Result<Self> {
        let n = node_times.len();
        if flat.len() != N_PARAMS * n {
            return Err(Error::Argument(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                N_PARAMS * n
            )));
        }
        Ok(Self {
            node_values: std::array::from_fn(|p| flat[p * n..(p + 1) * n].to_vec()),
            node_times,
        })
    }

    /// Check the structural invariants against a scan of `n_views` views.
    pub fn validate(&self, n_views: usize) -> Result<()> {
        let n = self.n_nodes();
        if n < 3 {
            return Err(Error::Argument(format!("spline motion needs >= 3 nodes, got {n}")));
        }
        if self.node_values.iter().any(|row| row.len() != n) {
            return Err(Error::Argument("node value rows must have one entry per node".into()));
        }
        if self.node_times[0] != 0.0 || self.node_times[n - 1] != (n_views as f64 - 1.0) {
            return Err(Error::Argument(format!(
                "node times must span [0, {}], got [{}, {}]",
                n_views as f64 - 1.0,
                self.node_times[0],
                self.node_times[n - 1]
            )));
        }
        if self.node_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("node times must be strictly increasing".into()));
        }
        Ok(())
    }

    /// The motion curves sampled at `node_times`, as a new spline.
    pub fn resample(&self, node_times: Vec<f64>) -> Result<Self> {
        let splines = self.splines()?;
        let mut rows: [Vec<f64>; N_PARAMS] = std::array::from_fn(|_| Vec::with_capacity(node_times.len()));
        for (row, s) in rows.iter_mut().zip(&splines) {
            for &t in &node_times {
                row.push(s.eval(t)?);
            }
        }
        Ok(Self {
            node_times,
            node_values: rows,
        })
    }

    fn splines(&self) -> Result<Vec<AkimaSpline>> {
        self.node_values
            .iter()
            .map(|row| AkimaSpline::new(&self.node_times, row))
            .collect()
    }
}

/// Per-view rigid parameters: every spline evaluated at `t = j`.
pub fn motion_curves(x: &SplineMotion, n_views: usize) -> Result<Vec<RigidParams>> {
    x.validate(n_views)?;
    let splines = x.splines()?;
    (0..n_views)
        .map(|j| {
            let mut a = [0.0; N_PARAMS];
            for (v, s) in a.iter_mut().zip(&splines) {
                *v = s.eval(j as f64)?;
            }
            Ok(RigidParams::from_array(a))
        })
        .collect()
}

/// `P̂_j = P_j · T_j(x)` for every view.
pub fn motion_to_matrices(
    x: &SplineMotion,
    p_init: &[ProjectionMatrix],
) -> Result<Vec<ProjectionMatrix>> {
    motion_curves(x, p_init.len())?
        .iter()
        .zip(p_init)
        .map(|(params, p)| Ok(apply_motion(p, &rigid_params_to_matrix(params)?)))
        .collect()
}

/// Vector–Jacobian product of [`motion_to_matrices`]: maps `dL/dP̂` (one 3×4
/// matrix per view) to `dL/dx`, returned in the shape of the node values.
pub fn motion_vjp(
    x: &SplineMotion,
    p_init: &[ProjectionMatrix],
    upstream: &[Matrix3x4<f64>],
) -> Result<SplineMotion> {
    let n_views = p_init.len();
    if upstream.len() != n_views {
        return Err(Error::Argument(format!(
            "upstream has {} views, expected {n_views}",
            upstream.len()
        )));
    }
    x.validate(n_views)?;
    let splines = x.splines()?;
    let n = x.n_nodes();
    let mut out = SplineMotion {
        node_times: x.node_times.clone(),
        node_values: std::array::from_fn(|_| vec![0.0; n]),
    };
    let mut weights: [Vec<f64>; N_PARAMS] = std::array::from_fn(|_| vec![0.0; n]);
    let deg = std::f64::consts::PI / 180.0;

    for j in 0..n_views {
        let mut params = [0.0; N_PARAMS];
        for p in 0..N_PARAMS {
            params[p] = splines[p].eval_with_gradient(j as f64, &mut weights[p])?;
        }
        // P̂ = P·T  ⇒  dL/dT = Pᵀ·G
        let d_t: Matrix4<f64> = p_init[j].0.transpose() * upstream[j];
        let (_, d_rot) =
            rotation_with_derivatives(params[3] * deg, params[4] * deg, params[5] * deg);
        let mut d_params = [0.0; N_PARAMS];
        for k in 0..3 {
            d_params[k] = d_t[(k, 3)];
        }
        for (k, dr) in d_rot.iter().enumerate() {
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    acc += d_t[(a, b)] * dr[(a, b)];
                }
            }
            d_params[3 + k] = acc * deg;
        }
        for p in 0..N_PARAMS {
            if d_params[p] == 0.0 {
                continue;
            }
            for (o, w) in out.node_values[p].iter_mut().zip(&weights[p]) {
                *o += d_params[p] * w;
            }
        }
    }
    Ok(out)
}

/// Random smooth motion: node values uniform in `[-amp, amp]` (translation
/// amplitude in mm for `t_*`, rotation amplitude in degrees for `r_*`), each
/// curve then shifted so its mean over the `n_views` views is zero.
///
/// Values are drawn as `amp · U(-1, 1)`, so equal seeds with different
/// amplitudes give proportional motion.
pub fn sample_random_motion(
    amp_t_mm: f64,
    amp_r_deg: f64,
    n_nodes: usize,
    n_views: usize,
    seed: u64,
) -> Result<SplineMotion> {
    if !(amp_t_mm >= 0.0 && amp_r_deg >= 0.0) {
        return Err(Error::Argument("motion amplitudes must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut motion = SplineMotion::zeros(n_nodes, n_views);
    motion.validate(n_views)?;
    for (p, row) in motion.node_values.iter_mut().enumerate() {
        let amp = if p < 3 { amp_t_mm } else { amp_r_deg };
        for v in row.iter_mut() {
            *v = amp * rng.random_range(-1.0..=1.0);
        }
    }
    // Akima curves shift exactly with their node values, so subtracting the
    // curve mean from every node zero-centers the curve.
    let curves = motion_curves(&motion, n_views)?;
    for p in 0..N_PARAMS {
        let mean = curves.iter().map(|c| c.to_array()[p]).sum::<f64>() / n_views as f64;
        for v in motion.node_values[p].iter_mut() {
            *v -= mean;
        }
    }
    Ok(motion)
}
