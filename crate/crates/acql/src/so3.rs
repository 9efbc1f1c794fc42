//! Rotation utilities: skew maps, exp/log on SO(3), and quaternion-based
//! orientation error.
//!
//! The logarithm follows the two-branch form: near the identity the
//! antisymmetric part is used directly, elsewhere the arccos-scaled form.
//! Rotations with angle at or near pi are rejected rather than approximated;
//! the controller never operates there.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type UnitQuat = UnitQuaternion<f64>;

/// Branch switch for the logarithm: |1 - d| below this uses the
/// small-angle form, d = (trace - 1) / 2.
const LOG_SMALL_ANGLE: f64 = 1e-9;
/// d at or below -1 + this margin means the angle is too close to pi for
/// the arccos form to be meaningful.
const LOG_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum So3Error {
    #[error("rotation angle too close to pi for the logarithm")]
    AngleNearPi,
}

/// Skew-symmetric matrix of `v`, so that `skew(v) * u == v.cross(&u)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Vee map: extracts the vector from a skew-symmetric matrix.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula. Falls back to the second-order series for tiny angles.
pub fn exp_rotation(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-8 {
        Mat3::identity() + k + k * k * 0.5
    } else {
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Mat3::identity() + k * a + k * k * b
    }
}

/// Rotation-vector logarithm of a rotation matrix.
///
/// Two branches on d = (trace - 1) / 2: near d = 1 the antisymmetric part
/// is already the skew of the rotation vector to leading order; otherwise
/// the vector is recovered as arccos(d) (R - R^T)^vee / (2 sqrt(1 - d^2)).
pub fn log_rotation(r: &Mat3) -> Result<Vec3, So3Error> {
    let d = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    if d <= -1.0 + LOG_PI_MARGIN {
        return Err(So3Error::AngleNearPi);
    }
    let antisym = (r - r.transpose()) * 0.5;
    if (1.0 - d).abs() < LOG_SMALL_ANGLE {
        Ok(vee(&antisym))
    } else {
        let theta = d.acos();
        Ok(vee(&antisym) * (theta / (1.0 - d * d).sqrt()))
    }
}

/// Canonicalize a unit quaternion to the w >= 0 hemisphere.
pub fn canonical(q: &UnitQuat) -> UnitQuat {
    if q.w < 0.0 {
        UnitQuat::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// World-frame rotation-vector error log(q_d * q_a^-1).
///
/// Zero when the actual orientation matches the desired one; for a small
/// yaw offset of the desired frame the z component equals that offset.
pub fn orientation_error(qd: &UnitQuat, qa: &UnitQuat) -> Result<Vec3, So3Error> {
    let rel = qd * qa.inverse();
    log_rotation(&rel.to_rotation_matrix().into_inner())
}
