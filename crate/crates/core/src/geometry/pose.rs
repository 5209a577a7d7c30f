use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::ad::{Frame, Real, M3, V3};
use crate::error::{Error, Result};

/// Pitch distance from ±π/2 below which an Euler decomposition is flagged.
pub const GIMBAL_TOLERANCE: f64 = 1e-6;

/// End-effector pose: translation in meters plus a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspPose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl GraspPose {
    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Result<Self> {
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("pose", "translation must be finite"));
        }
        Ok(Self {
            translation,
            rotation,
        })
    }

    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Build from `(w, x, y, z)`; the quaternion is renormalized.
    pub fn from_parts(translation: [f64; 3], wxyz: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid("pose", "quaternion has zero or non-finite norm"));
        }
        Self::new(
            Vector3::from(translation),
            UnitQuaternion::from_quaternion(q),
        )
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn compose(&self, other: &GraspPose) -> GraspPose {
        GraspPose {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> GraspPose {
        let inv = self.rotation.inverse();
        GraspPose {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_euler(&self) -> EulerGrasp {
        EulerGrasp {
            translation: self.translation,
            euler: quat_to_euler(&self.rotation).angles,
        }
    }

    pub(crate) fn frame<T: Real>(&self) -> Frame<T> {
        Frame {
            rotation: M3::from_f64(matrix_rows(&self.rotation_matrix())),
            translation: V3::from_f64(self.translation.into()),
        }
    }
}

pub(crate) fn matrix_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Grasp in refinement coordinates: translation plus intrinsic XYZ Euler
/// angles, i.e. `R = Rx(e0) * Ry(e1) * Rz(e2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerGrasp {
    pub translation: Vector3<f64>,
    pub euler: Vector3<f64>,
}

impl EulerGrasp {
    pub fn new(translation: Vector3<f64>, euler: Vector3<f64>) -> Self {
        Self { translation, euler }
    }

    /// `[tx, ty, tz, ex, ey, ez]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.euler.x,
            self.euler.y,
            self.euler.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            translation: Vector3::new(v[0], v[1], v[2]),
            euler: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().chain(self.euler.iter()).all(|x| x.is_finite())
    }

    pub fn to_pose(&self) -> GraspPose {
        GraspPose {
            translation: self.translation,
            rotation: euler_to_quat(&self.euler),
        }
    }

    /// Lift into a generic scalar with the given coordinates.
    pub(crate) fn lift<T: Real>(coords: [T; 6]) -> (V3<T>, V3<T>) {
        (
            V3([coords[0], coords[1], coords[2]]),
            V3([coords[3], coords[4], coords[5]]),
        )
    }
}

/// Result of an Euler decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles {
    pub angles: Vector3<f64>,
    /// Pitch within [`GIMBAL_TOLERANCE`] of ±π/2; roll and yaw are then
    /// not separately determined and yaw is reported as zero.
    pub degenerate: bool,
}

/// Intrinsic XYZ Euler angles of a unit quaternion. `q` and `-q` map to the
/// same angles.
pub fn quat_to_euler(q: &UnitQuaternion<f64>) -> EulerAngles {
    let r = q.to_rotation_matrix();
    let m = r.matrix();
    let cos_pitch = m[(1, 2)].hypot(m[(2, 2)]);
    let pitch = m[(0, 2)].atan2(cos_pitch);
    let degenerate = (pitch.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_TOLERANCE;
    let (roll, yaw) = if cos_pitch < 1e-12 {
        if pitch > 0.0 {
            (m[(1, 0)].atan2(m[(1, 1)]), 0.0)
        } else {
            ((-m[(1, 0)]).atan2(m[(1, 1)]), 0.0)
        }
    } else {
        ((-m[(1, 2)]).atan2(m[(2, 2)]), (-m[(0, 1)]).atan2(m[(0, 0)]))
    };
    EulerAngles {
        angles: Vector3::new(roll, pitch, yaw),
        degenerate,
    }
}

pub fn euler_to_quat(e: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), e.x)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), e.y)
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), e.z)
}

/// Geodesic angle between two rotations, in `[0, π]`.
pub fn geodesic_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let rel = a.inverse() * b;
    let q = rel.quaternion();
    2.0 * q.vector().norm().atan2(q.w.abs())
}

/// On-disk pose: translation plus `(w, x, y, z)` quaternion.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub quaternion: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl From<&GraspPose> for PoseRecord {
    fn from(p: &GraspPose) -> Self {
        PoseRecord {
            translation: p.translation.into(),
            quaternion: p.wxyz(),
        }
    }
}

impl TryFrom<PoseRecord> for GraspPose {
    type Error = Error;
    fn try_from(r: PoseRecord) -> Result<Self> {
        GraspPose::from_parts(r.translation, r.quaternion)
    }
}
