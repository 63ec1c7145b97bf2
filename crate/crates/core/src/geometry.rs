//! Poses, rotations, surface frames and the frame alignment used when
//! hypotheses are initialized.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Body-frame location or direction.
pub type Vec3 = Vector3<f64>;

/// Tolerance used when checking that externally supplied frames are
/// orthonormal. Fitted frames carry a little round-off, so this is looser
/// than the 1e-9 that constructed rotations satisfy.
pub const FRAME_TOLERANCE: f64 = 1e-6;

/// Number of rotations sampled about the normal when the curvature
/// direction is undefined.
pub const DEFAULT_DEGENERATE_SAMPLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("frame is not orthonormal: {0}")]
    NotOrthonormal(&'static str),
    #[error("degenerate frame: {0}")]
    DegenerateFrame(&'static str),
    #[error("n_samples must be at least 1")]
    NoSamples,
}

/// A proper rotation, exposed as a 3x3 orthonormal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Rotation3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Rotation3::identity())
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        match Unit::try_new(*axis, 1e-15) {
            Some(axis) => Self(Rotation3::from_axis_angle(&axis, angle)),
            None => Self::identity(),
        }
    }

    /// Euler angles in degrees about x, y, z, composed as `Rz·Ry·Rx`.
    pub fn from_euler_deg(x: f64, y: f64, z: f64) -> Self {
        Self(Rotation3::from_euler_angles(
            x.to_radians(),
            y.to_radians(),
            z.to_radians(),
        ))
    }

    /// Wraps a matrix that must already be a proper rotation.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let r = Self(Rotation3::from_matrix_unchecked(m));
        if r.is_valid(1e-9) {
            Ok(r)
        } else {
            Err(GeometryError::NotOrthonormal("rotation matrix"))
        }
    }

    /// Projects an approximately orthonormal matrix onto SO(3).
    pub fn from_matrix_approx(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut fix = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            fix[(2, 2)] = -1.0;
        }
        Self(Rotation3::from_matrix_unchecked(u * fix * v_t))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        self.0.matrix()
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = self.matrix();
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Self(Rotation3::from_matrix_unchecked(Matrix3::from_row_slice(
            &rows.concat(),
        )))
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Applies the inverse rotation (the transpose).
    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.inverse_transform_vector(v)
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let m = self.matrix();
        let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // acos loses precision near 0 and π; atan2 of the skew part does not.
        let skew = Vec3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
        (skew.norm() / 2.0).atan2(cos)
    }

    /// Geodesic distance: the angle of `self · other⁻¹`.
    pub fn geodesic_distance(&self, other: &Rotation) -> f64 {
        self.compose(&other.inverse()).angle()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let m = self.matrix();
        if m.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let gram = m.transpose() * m;
        (gram - Matrix3::identity()).abs().max() <= tol && (m.determinant() - 1.0).abs() <= tol
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Self::from_rows(rows))
    }
}

/// Serde adapter writing a [`Vec3`] as `[x, y, z]`.
pub mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(x, y, z))
    }
}

/// Point normal plus the two principal curvature directions.
///
/// Frames built by this crate are right-handed: `dir2 = normal × dir1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFrame {
    #[serde(with = "vec3_serde")]
    pub normal: Vec3,
    /// Maximum-curvature direction.
    #[serde(with = "vec3_serde")]
    pub dir1: Vec3,
    /// Minimum-curvature direction.
    #[serde(with = "vec3_serde")]
    pub dir2: Vec3,
}

impl SurfaceFrame {
    /// Frame from a normal and a max-curvature direction; `dir2` is derived.
    pub fn from_normal_dir1(normal: Vec3, dir1: Vec3) -> Self {
        Self {
            normal,
            dir1,
            dir2: normal.cross(&dir1),
        }
    }

    /// Any frame with the given normal.
    pub fn from_normal(normal: &Vec3) -> Self {
        let n = normal.normalize();
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let d1 = (helper - n * helper.dot(&n)).normalize();
        Self::from_normal_dir1(n, d1)
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let vs = [self.normal, self.dir1, self.dir2];
        vs.iter().all(|v| v.iter().all(|c| c.is_finite()) && (v.norm() - 1.0).abs() <= tol)
            && self.normal.dot(&self.dir1).abs() <= tol
            && self.normal.dot(&self.dir2).abs() <= tol
            && self.dir1.dot(&self.dir2).abs() <= tol
    }

    /// Columns `[normal, dir1, normal × dir1]`.
    fn basis(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.normal, self.dir1, self.normal.cross(&self.dir1)])
    }

    pub fn rotated(&self, r: &Rotation) -> Self {
        Self {
            normal: r.apply(&self.normal),
            dir1: r.apply(&self.dir1),
            dir2: r.apply(&self.dir2),
        }
    }

    pub fn rotated_inverse(&self, r: &Rotation) -> Self {
        Self {
            normal: r.apply_inverse(&self.normal),
            dir1: r.apply_inverse(&self.dir1),
            dir2: r.apply_inverse(&self.dir2),
        }
    }

    /// The frame as a rotation whose columns are `[dir1, dir2, normal]`.
    pub fn as_rotation(&self) -> Rotation {
        Rotation::from_matrix_approx(&Matrix3::from_columns(&[
            self.dir1,
            self.normal.cross(&self.dir1),
            self.normal,
        ]))
    }
}

/// A location plus an orientation in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    #[serde(with = "vec3_serde")]
    pub location: Vec3,
    pub orientation: Rotation,
}

impl Pose {
    pub fn new(location: Vec3, orientation: Rotation) -> Self {
        Self {
            location,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.inverse();
        Self::new(-inv.apply(&self.location), inv)
    }

    /// `self ∘ other`: transform by `other`, then by `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            transform_point(self, &other.location),
            self.orientation.compose(&other.orientation),
        )
    }
}

/// Applies `pose` to a point: `R·p + t`.
pub fn transform_point(pose: &Pose, p: &Vec3) -> Vec3 {
    pose.orientation.apply(p) + pose.location
}

/// A movement between two sensed locations, in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Displacement {
    pub delta: Vec3,
}

impl Displacement {
    pub fn is_finite(&self) -> bool {
        self.delta.iter().all(|c| c.is_finite())
    }
}

pub fn displacement_between(prev: &Vec3, cur: &Vec3) -> Displacement {
    Displacement { delta: cur - prev }
}

/// Candidate rotations `R` with `R·stored.normal = sensed.normal`.
///
/// For a well-defined curvature direction there are two: one aligning
/// `dir1` and one flipping it (the curvature direction has no sign). When
/// `degenerate` is set the curvature direction carries no information and
/// `n_samples` rotations are spread evenly about the sensed normal.
pub fn align_frames(
    sensed: &SurfaceFrame,
    stored: &SurfaceFrame,
    degenerate: bool,
    n_samples: usize,
) -> Result<Vec<Rotation>, GeometryError> {
    if !sensed.is_orthonormal(FRAME_TOLERANCE) {
        return Err(GeometryError::NotOrthonormal("sensed frame"));
    }
    if !stored.is_orthonormal(FRAME_TOLERANCE) {
        return Err(GeometryError::NotOrthonormal("stored frame"));
    }
    if degenerate && n_samples == 0 {
        return Err(GeometryError::NoSamples);
    }
    // Both bases are orthonormal and right-handed, so the product is a rotation.
    let base = Rotation(Rotation3::from_matrix_unchecked(
        sensed.basis() * stored.basis().transpose(),
    ));
    let spins: Vec<f64> = if degenerate {
        (0..n_samples)
            .map(|k| std::f64::consts::TAU * k as f64 / n_samples as f64)
            .collect()
    } else {
        vec![0.0, std::f64::consts::PI]
    };
    Ok(spins
        .into_iter()
        .map(|angle| {
            if angle == 0.0 {
                base
            } else {
                Rotation::from_axis_angle(&sensed.normal, angle).compose(&base)
            }
        })
        .collect())
}

/// Gram-Schmidt on a noisy (normal, dir1, dir2) triple.
///
/// The normal direction is kept; `dir1` loses its normal component and
/// `dir2` is rebuilt as `normal × dir1`.
pub fn orthonormalize_frame(
    normal: &Vec3,
    dir1: &Vec3,
    dir2: &Vec3,
) -> Result<SurfaceFrame, GeometryError> {
    let min_sin = 1f64.to_radians().sin();
    let vs = [normal, dir1, dir2];
    if vs.iter().any(|v| !(v.norm() > 1e-12) || v.iter().any(|c| !c.is_finite())) {
        return Err(GeometryError::DegenerateFrame("zero or non-finite vector"));
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let sin = vs[i].normalize().cross(&vs[j].normalize()).norm();
        if sin < min_sin {
            return Err(GeometryError::DegenerateFrame("near-collinear vectors"));
        }
    }
    let n = normal.normalize();
    let d1 = (dir1 - n * dir1.dot(&n)).normalize();
    Ok(SurfaceFrame {
        normal: n,
        dir1: d1,
        dir2: n.cross(&d1),
    })
}
