//! Rigid transforms and rotation-vector helpers.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};

/// Quaternions whose norm is this close to one are taken as-is on ingest.
/// Keeps already-normalized data bit-stable across save/load cycles.
const UNIT_NORM_SLACK: f64 = 1e-12;

/// A rigid transform: translation in meters plus a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_rotation(orientation: UnitQuaternion<f64>) -> Self {
        Self::new(Vector3::zeros(), orientation)
    }

    /// Builds a pose from raw arrays, quaternion ordered `[w, x, y, z]`.
    ///
    /// The quaternion is renormalized unless it is already unit to within
    /// `1e-12`. Returns `None` for non-finite input or a zero quaternion.
    pub fn from_arrays(position: [f64; 3], wxyz: [f64; 4]) -> Option<Self> {
        if position.iter().chain(wxyz.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if norm < 1e-9 {
            return None;
        }
        let orientation = if (norm - 1.0).abs() <= UNIT_NORM_SLACK {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Some(Self::new(Vector3::from(position), orientation))
    }

    pub fn position_array(&self) -> [f64; 3] {
        [self.position.x, self.position.y, self.position.z]
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applies `other` first, expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        let orientation = renormalize(self.orientation * other.orientation);
        Pose {
            position: self.position + self.orientation * other.position,
            orientation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * v
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }

    /// Local x-axis expressed in the parent frame.
    pub fn x_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::x()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let norm = q.quaternion().norm();
    if (norm - 1.0).abs() <= UNIT_NORM_SLACK {
        q
    } else {
        UnitQuaternion::new_normalize(q.into_inner())
    }
}

/// Rotation about `axis` (need not be normalized) by `angle` radians.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// Rotation-vector (log) map. Angle lies in `[0, π]`.
///
/// Computed via `atan2` rather than `acos(w)` so small rotations keep full
/// relative precision.
pub fn rotation_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let s = v.norm();
    if s < 1e-12 {
        // 2·atan2(s, w)/s → 2/w as s → 0
        return v * (2.0 / w);
    }
    v * (2.0 * s.atan2(w) / s)
}

/// Inverse of [`rotation_log`].
pub fn rotation_exp(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*v)
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Inverse left Jacobian of SO(3) at rotation vector `phi`.
///
/// If `R' = exp(δ)·exp(phi)` then `log(R') ≈ phi + J_l⁻¹(phi)·δ`.
pub fn so3_left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * k + coeff * k * k
}

/// Signed twist angle of `q` about unit `axis` (swing-twist decomposition).
pub fn twist_angle(q: &UnitQuaternion<f64>, axis: &Vector3<f64>) -> f64 {
    let q = q.quaternion();
    let proj = q.imag().dot(axis);
    let angle = 2.0 * proj.atan2(q.w);
    wrap_angle(angle)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
