use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Row-major JSON layout: `{"rotation": [[..],[..],[..]], "translation": [x, y, z]}`.
#[derive(Serialize, Deserialize)]
struct RawTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = Error;

    fn try_from(raw: RawTransform) -> Result<Self> {
        let r = raw.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        RigidTransform::new(rotation, Vector3::from(raw.translation))
    }
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        let m = t.rotation;
        RawTransform {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl RigidTransform {
    /// Builds a transform, checking that `rotation` is orthonormal with
    /// determinant +1 to within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("rotation", "non-finite entry"));
        }
        let gram = rotation.transpose() * rotation;
        let off = (gram - Matrix3::identity()).abs().max();
        if off > ORTHONORMAL_TOL {
            return Err(Error::invalid(
                "rotation",
                format!("not orthonormal (max |RᵀR − I| = {off:e})"),
            ));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(
                "rotation",
                format!("determinant {det} is not +1"),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about +z by `yaw` followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Heading of the transformed x axis in the xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn rejects_scaled_rotation() {
        let m = Matrix3::identity() * 1.001;
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn json_layout_is_row_major() {
        let t = RigidTransform::from_yaw(std::f64::consts::FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0));
        let v: serde_json::Value = serde_json::to_value(t).unwrap();
        // first row of a +90° yaw is (0, -1, 0)
        let row0 = &v["rotation"][0];
        assert!(row0[0].as_f64().unwrap().abs() < 1e-15);
        assert!((row0[1].as_f64().unwrap() + 1.0).abs() < 1e-15);
        let back: RigidTransform = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(
            roll in -3.1f64..3.1, pitch in -1.5f64..1.5, yaw in -3.1f64..3.1,
            tx in -100.0f64..100.0, ty in -100.0f64..100.0, tz in -10.0f64..10.0,
        ) {
            let r = *Rotation3::from_euler_angles(roll, pitch, yaw).matrix();
            let t = RigidTransform::new(r, Vector3::new(tx, ty, tz)).unwrap();
            for c in [t.compose(&t.inverse()), t.inverse().compose(&t)] {
                prop_assert!((c.rotation - Matrix3::identity()).abs().max() < 1e-9);
                prop_assert!(c.translation.abs().max() < 1e-9);
            }
        }

        #[test]
        fn yaw_round_trips(yaw in -3.1f64..3.1) {
            let t = RigidTransform::from_yaw(yaw, Vector3::zeros());
            prop_assert!((t.yaw() - yaw).abs() < 1e-12);
        }
    }
}
