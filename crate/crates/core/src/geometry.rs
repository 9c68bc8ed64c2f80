//! Projection matrices, rigid transforms and the circular cone-beam trajectory.
//!
//! Conventions shared by every module:
//!
//! * World coordinates are millimetres with the isocenter at the origin and
//!   the source rotating in the `z = 0` plane.
//! * Rigid rotations are `R = Rz(r_z) * Ry(r_y) * Rx(r_x)` about the
//!   isocenter; angles are degrees at every external interface and radians
//!   internally.
//! * Projection matrices map homogeneous world points to homogeneous detector
//!   points in **pixel** units. Column index is `u`, row index is `v`. The
//!   physical pixel size only enters through [`ScanGeometry::pixel_spacing_mm`].

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest `|w|` accepted by the homogeneous divide.
pub const W_MIN: f64 = 1e-9;

/// Convention string recorded next to serialized matrices.
pub const CONVENTION: &str = "Rz*Ry*Rx about isocenter, pixel detector units";

/// Circular cone-beam acquisition geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub source_to_iso_mm: f64,
    pub source_to_detector_mm: f64,
    pub n_views: usize,
    #[serde(rename = "angular_range_deg", with = "degrees")]
    pub angular_range_rad: f64,
    pub detector_rows: usize,
    pub detector_cols: usize,
    pub pixel_spacing_mm: f64,
}

mod degrees {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rad: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(rad.to_degrees())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d).map(f64::to_radians)
    }
}

impl ScanGeometry {
    /// Full-scale clinical-like setup: 360 views over 2π, 500 × 700 detector
    /// (cols × rows) at 0.64 mm, SID 785 mm, SDD 1200 mm.
    pub fn paper() -> Self {
        Self {
            source_to_iso_mm: 785.0,
            source_to_detector_mm: 1200.0,
            n_views: 360,
            angular_range_rad: 2.0 * std::f64::consts::PI,
            detector_rows: 700,
            detector_cols: 500,
            pixel_spacing_mm: 0.64,
        }
    }

    /// Laptop-scale setup: same distances, 120 views, 128 × 160 detector
    /// (cols × rows) with 2.5 mm pixels so the physical detector size matches.
    pub fn desk() -> Self {
        Self {
            n_views: 120,
            detector_rows: 160,
            detector_cols: 128,
            pixel_spacing_mm: 2.5,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("source_to_iso_mm", self.source_to_iso_mm),
            ("source_to_detector_mm", self.source_to_detector_mm),
            ("pixel_spacing_mm", self.pixel_spacing_mm),
        ];
        for (name, value) in lengths {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if self.source_to_detector_mm <= self.source_to_iso_mm {
            return Err(Error::Config(
                "source_to_detector_mm must exceed source_to_iso_mm".into(),
            ));
        }
        if self.n_views < 2 {
            return Err(Error::Config(format!("n_views must be >= 2, got {}", self.n_views)));
        }
        let range = self.angular_range_rad;
        if !(range > 0.0 && range <= 2.0 * std::f64::consts::PI + 1e-12) {
            return Err(Error::Config(format!(
                "angular range must lie in (0, 360] degrees, got {}",
                range.to_degrees()
            )));
        }
        if self.detector_rows == 0 || self.detector_cols == 0 {
            return Err(Error::Config("detector must have at least one pixel".into()));
        }
        Ok(())
    }

    /// Principal point `(u, v)` in pixels: the detector center.
    pub fn principal_point(&self) -> (f64, f64) {
        (
            (self.detector_cols as f64 - 1.0) / 2.0,
            (self.detector_rows as f64 - 1.0) / 2.0,
        )
    }

    /// Geometric magnification at the isocenter.
    pub fn magnification(&self) -> f64 {
        self.source_to_detector_mm / self.source_to_iso_mm
    }

    pub fn view_angle(&self, view: usize) -> f64 {
        view as f64 * self.angular_range_rad / self.n_views as f64
    }
}

/// A 3×4 projection matrix. Only defined up to a nonzero scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn from_row_major(entries: &[f64; 12]) -> Self {
        Self(Matrix3x4::from_row_slice(entries))
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let m = &self.0;
        std::array::from_fn(|k| m[(k / 4, k % 4)])
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0 * alpha)
    }

    /// Divide by the entry of largest magnitude so that entry becomes `+1`.
    pub fn normalized(&self) -> Self {
        let pivot = self
            .0
            .iter()
            .copied()
            .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot == 0.0 {
            return *self;
        }
        Self(self.0 / pivot)
    }

    /// Max absolute entry difference after normalizing both matrices.
    pub fn normalized_distance(&self, other: &Self) -> f64 {
        (self.normalized().0 - other.normalized().0).amax()
    }

    /// Source position: the right null space of the matrix, `C = -M⁻¹ p₄`.
    pub fn source_position(&self) -> Result<Vector3<f64>> {
        let m: Matrix3<f64> = self.0.fixed_columns::<3>(0).into_owned();
        let p4: Vector3<f64> = self.0.column(3).into_owned();
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Geometry("projection matrix has a singular 3×3 block".into()))?;
        Ok(-(inv * p4))
    }
}

/// Rigid motion parameters: translations in mm, rotations in degrees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
}

impl RigidParams {
    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            t_x: a[0],
            t_y: a[1],
            t_z: a[2],
            r_x: a[3],
            r_y: a[4],
            r_z: a[5],
        }
    }

    /// Ordered `t_x, t_y, t_z, r_x, r_y, r_z`.
    pub fn to_array(self) -> [f64; 6] {
        [self.t_x, self.t_y, self.t_z, self.r_x, self.r_y, self.r_z]
    }
}

/// A proper rigid transform `[R | t; 0 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform(pub Matrix4<f64>);

impl RigidTransform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rotation `Rz*Ry*Rx` for angles in radians together with its partial
/// derivatives with respect to `(r_x, r_y, r_z)`, also per radian.
pub(crate) fn rotation_with_derivatives(
    rx: f64,
    ry: f64,
    rz: f64,
) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let (x, y, z) = (rot_x(rx), rot_y(ry), rot_z(rz));
    let r = z * y * x;
    let d = [z * y * drot_x(rx), z * drot_y(ry) * x, drot_z(rz) * y * x];
    (r, d)
}

pub fn rigid_params_to_matrix(params: &RigidParams) -> Result<RigidTransform> {
    let a = params.to_array();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("rigid parameters must be finite: {a:?}")));
    }
    let r = rot_z(params.r_z.to_radians()) * rot_y(params.r_y.to_radians()) * rot_x(params.r_x.to_radians());
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    t[(0, 3)] = params.t_x;
    t[(1, 3)] = params.t_y;
    t[(2, 3)] = params.t_z;
    Ok(RigidTransform(t))
}

/// `P̂ = P · T`.
pub fn apply_motion(p: &ProjectionMatrix, t: &RigidTransform) -> ProjectionMatrix {
    ProjectionMatrix(p.0 * t.0)
}

/// Homogeneous and euclidean detector position of a world point.
pub fn project_point(
    p: &ProjectionMatrix,
    point: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector2<f64>)> {
    let h = p.0 * Vector4::new(point.x, point.y, point.z, 1.0);
    if !(h.z.abs() > W_MIN) {
        return Err(Error::PointAtInfinity { w: h.z });
    }
    Ok((h, Vector2::new(h.x / h.z, h.y / h.z)))
}

/// One projection matrix per view for a circular trajectory in the `z = 0`
/// plane. The detector `u` axis follows the source's direction of travel and
/// `v` is parallel to world `z`.
pub fn build_circular_trajectory(geom: &ScanGeometry) -> Result<Vec<ProjectionMatrix>> {
    geom.validate()?;
    let focal_px = geom.source_to_detector_mm / geom.pixel_spacing_mm;
    let (cu, cv) = geom.principal_point();
    let intrinsics = Matrix3::new(focal_px, 0.0, cu, 0.0, focal_px, cv, 0.0, 0.0, 1.0);
    let matrices = (0..geom.n_views)
        .map(|j| {
            let (s, c) = geom.view_angle(j).sin_cos();
            let source = Vector3::new(c, s, 0.0) * geom.source_to_iso_mm;
            // rows: detector u axis, detector v axis, viewing direction
            let r = Matrix3::new(-s, c, 0.0, 0.0, 0.0, 1.0, -c, -s, 0.0);
            let mut extrinsic = Matrix3x4::zeros();
            extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            extrinsic.set_column(3, &(-(r * source)));
            ProjectionMatrix(intrinsics * extrinsic)
        })
        .collect();
    Ok(matrices)
}
