//! Rigid transforms in SE(3).
//!
//! A [`Pose`] maps points from a local frame (sensor or camera) into the
//! world frame: `p_world = R * p_local + t`.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for orthonormality and unit determinant of rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Tolerance accepted when reading poses from text files before the rotation
/// is projected back onto SO(3). Printed poses carry ~7 significant digits.
pub const FILE_ROTATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 12]", into = "[f64; 12]")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let deviation = rotation_deviation(&rotation);
        if !(deviation <= ROTATION_TOLERANCE) {
            return Err(Error::Invalid(format!(
                "rotation is not orthonormal (deviation {deviation:e})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("translation is not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Builds a pose from a rotation that is orthonormal by construction
    /// (products of rotations, look-at frames). Not validated.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Parses a row-major 3x4 `[R | t]` matrix, requiring a proper rotation.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Self> {
        let (rotation, translation) = split_row_major(values);
        Self::new(rotation, translation)
    }

    /// Parses a row-major 3x4 matrix read from a text file. Rotations within
    /// [`FILE_ROTATION_TOLERANCE`] of SO(3) are projected onto it.
    pub fn from_row_major_lenient(values: &[f64; 12]) -> Result<Self> {
        let (rotation, translation) = split_row_major(values);
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("pose contains non-finite values".into()));
        }
        let deviation = rotation_deviation(&rotation);
        if deviation <= ROTATION_TOLERANCE {
            return Ok(Self { rotation, translation });
        }
        if deviation > FILE_ROTATION_TOLERANCE {
            return Err(Error::Invalid(format!(
                "rotation is not orthonormal (deviation {deviation:e})"
            )));
        }
        Ok(Self { rotation: project_to_rotation(&rotation), translation })
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Maps a world point into the local frame.
    pub fn inverse_transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.tr_mul(&(p.coords - self.translation)))
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.transpose();
        Self { rotation, translation: -(rotation * self.translation) }
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Applies a rotation expressed in the local frame (right multiplication).
    pub fn rotated_locally(&self, local: &Matrix3<f64>) -> Self {
        Self { rotation: self.rotation * local, translation: self.translation }
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self { rotation: self.rotation, translation: self.translation + offset }
    }
}

impl TryFrom<[f64; 12]> for Pose {
    type Error = Error;

    fn try_from(values: [f64; 12]) -> Result<Self> {
        Pose::from_row_major(&values)
    }
}

impl From<Pose> for [f64; 12] {
    fn from(pose: Pose) -> Self {
        pose.to_row_major()
    }
}

fn split_row_major(v: &[f64; 12]) -> (Matrix3<f64>, Vector3<f64>) {
    let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    (rotation, Vector3::new(v[3], v[7], v[11]))
}

/// Largest of `max|RᵀR - I|` and `|det R - 1|`; NaN for non-finite input.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    if !r.iter().all(|v| v.is_finite()) {
        return f64::NAN;
    }
    let gram = r.tr_mul(r) - Matrix3::identity();
    let ortho = gram.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Rotation about the x axis by `angle` radians.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn yaw_quarter_turn_maps_x_to_y() {
        let pose = Pose::new(rot_z(FRAC_PI_2), Vector3::zeros()).unwrap();
        let p = pose.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn inverse_round_trip() {
        let pose = Pose::new(rot_x(0.3) * rot_z(-1.1), Vector3::new(1.0, -2.0, 3.5)).unwrap();
        let p = Point3::new(0.2, 4.0, -7.0);
        let back = pose.inverse().transform_point(&pose.transform_point(&p));
        assert!((back - p).norm() < 1e-12);
        let local = pose.inverse_transform_point(&pose.transform_point(&p));
        assert!((local - p).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.1;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn lenient_parse_projects_printed_rotations() {
        let mut values = Pose::new(rot_z(0.7), Vector3::new(1.0, 2.0, 3.0)).unwrap().to_row_major();
        for v in values.iter_mut() {
            *v = (*v * 1e6).round() / 1e6;
        }
        let pose = Pose::from_row_major_lenient(&values).unwrap();
        assert!(rotation_deviation(pose.rotation()) <= ROTATION_TOLERANCE);
        values[0] = 2.0;
        assert!(Pose::from_row_major_lenient(&values).is_err());
    }

    #[test]
    fn serde_as_row_major_array() {
        let pose = Pose::new(rot_y(0.25), Vector3::new(4.0, 5.0, 6.0)).unwrap();
        let json = serde_json::to_string(&pose).unwrap();
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pose);
    }
}
