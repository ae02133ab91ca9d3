//! Shared domain types and planar geometry helpers.
//!
//! World frame is right-handed, z up, meters and seconds. Yaw is measured
//! about +z. Interaction distances (drone to chest, drone to palm) are
//! evaluated in the horizontal plane; altitude is a separate channel.

use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DroneState;
use crate::planner::{PlannerStatus, Setpoint};

pub type Vec3 = Vector3<f64>;

/// Tolerance used when deciding whether a raw quaternion is a rotation.
pub const UNIT_QUATERNION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Distance between `a` and `b` ignoring altitude.
pub fn horizontal_distance(a: &Vec3, b: &Vec3) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Horizontal component of `v`.
pub fn horizontal(v: &Vec3) -> Vec3 {
    Vec3::new(v.x, v.y, 0.0)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Heading of a quaternion about +z, in (-pi, pi].
pub fn quaternion_yaw(q: &Quaternion<f64>) -> Result<f64, ModelError> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_QUATERNION_TOL {
        return Err(ModelError::InvalidInput(format!(
            "quaternion norm {norm} is not unit"
        )));
    }
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    Ok(if yaw <= -PI { yaw + 2.0 * PI } else { yaw })
}

/// Pure rotation about +z.
pub fn yaw_rotation(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
}

/// How interaction distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    #[default]
    Planar,
    #[serde(rename = "3d")]
    Spatial,
}

impl DistanceMode {
    pub fn measure(self, a: &Vec3, b: &Vec3) -> f64 {
        match self {
            DistanceMode::Planar => horizontal_distance(a, b),
            DistanceMode::Spatial => (a - b).norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_yaw(position: Vec3, yaw: f64) -> Self {
        Self::new(position, yaw_rotation(yaw))
    }

    pub fn yaw(&self) -> f64 {
        // A UnitQuaternion is normalized by construction.
        quaternion_yaw(self.orientation.quaternion()).unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
            && self.orientation.coords.iter().all(|c| c.is_finite())
    }
}

/// Slack allowed between the measured palm reach and the nominal arm length.
pub const ARM_REACH_SLACK: f64 = 0.05;

/// The virtual user: tracked chest and palm plus the body geometry the
/// planner needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    pub chest: Pose,
    pub palm: Pose,
    /// Radius of the arm-length circle centered at the chest.
    pub arm_length: f64,
    pub elbow_height: f64,
    pub eye_height: f64,
}

impl UserModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.chest.is_finite() && self.palm.is_finite()) {
            return Err(ModelError::InvalidInput("non-finite user pose".into()));
        }
        if !(self.arm_length > 0.0) {
            return Err(ModelError::InvalidInput(format!(
                "arm_length must be positive, got {}",
                self.arm_length
            )));
        }
        if !(self.eye_height > self.elbow_height && self.elbow_height > 0.0) {
            return Err(ModelError::InvalidInput(format!(
                "expected eye_height > elbow_height > 0, got eye {} elbow {}",
                self.eye_height, self.elbow_height
            )));
        }
        let reach = (self.palm.position - self.chest.position).norm();
        if reach > self.arm_length + ARM_REACH_SLACK {
            return Err(ModelError::InvalidInput(format!(
                "palm is {reach:.3} m from chest, beyond arm length {}",
                self.arm_length
            )));
        }
        Ok(())
    }

    /// Yaw the chest is facing.
    pub fn facing(&self) -> f64 {
        self.chest.yaw()
    }
}

/// Snapshot of everything in the simulated world at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: f64,
    pub user: UserModel,
    pub drone: DroneState,
    pub planner: PlannerStatus,
    pub setpoint: Setpoint,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn horizontal_distance_examples() {
        let d = horizontal_distance(&Vec3::new(0.0, 0.0, 0.0), &Vec3::new(3.0, 4.0, 7.0));
        assert_eq!(d, 5.0);
        let d = horizontal_distance(&Vec3::new(1.0, 1.0, 1.0), &Vec3::new(1.0, 1.0, 5.0));
        assert_eq!(d, 0.0);
        // 0.3, 0.4 offsets in xy.
        let d = horizontal_distance(&Vec3::new(0.2, 0.0, 1.0), &Vec3::new(-0.1, 0.4, 1.0));
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn yaw_examples() {
        assert_eq!(quaternion_yaw(&Quaternion::identity()).unwrap(), 0.0);
        let q = yaw_rotation(PI / 2.0);
        assert_abs_diff_eq!(quaternion_yaw(q.quaternion()).unwrap(), PI / 2.0, epsilon = 1e-12);
        let q = yaw_rotation(PI);
        assert_abs_diff_eq!(quaternion_yaw(q.quaternion()).unwrap(), PI, epsilon = 1e-12);
        let q = yaw_rotation(-PI);
        let yaw = quaternion_yaw(q.quaternion()).unwrap();
        assert!(yaw > 0.0, "yaw {yaw} must lie in (-pi, pi]");
    }

    #[test]
    fn yaw_rejects_non_unit() {
        let q = Quaternion::new(1.1, 0.0, 0.0, 0.0);
        assert!(matches!(quaternion_yaw(&q), Err(ModelError::InvalidInput(_))));
        let q = Quaternion::new(1.0 + 5e-7, 0.0, 0.0, 0.0);
        assert!(quaternion_yaw(&q).is_ok());
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-0.5 - 2.0 * PI), -0.5, epsilon = 1e-12);
    }

    fn user(palm: Vec3) -> UserModel {
        UserModel {
            chest: Pose::from_yaw(Vec3::new(0.0, 0.0, 1.3), 0.0),
            palm: Pose::from_yaw(palm, 0.0),
            arm_length: 0.7,
            elbow_height: 1.1,
            eye_height: 1.6,
        }
    }

    #[test]
    fn user_validation() {
        assert!(user(Vec3::new(0.7, 0.0, 1.1)).validate().is_ok());
        assert!(user(Vec3::new(0.9, 0.0, 1.1)).validate().is_err());
        let mut u = user(Vec3::new(0.3, 0.0, 1.1));
        u.eye_height = 1.0;
        assert!(u.validate().is_err());
        u = user(Vec3::new(f64::NAN, 0.0, 1.1));
        assert!(u.validate().is_err());
    }

    #[test]
    fn distance_modes() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(3.0, 4.0, 12.0);
        assert_eq!(DistanceMode::Planar.measure(&a, &b), 5.0);
        assert_eq!(DistanceMode::Spatial.measure(&a, &b), 13.0);
    }

    fn finite_vec() -> impl Strategy<Value = Vec3> {
        (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn horizontal_distance_is_a_metric(a in finite_vec(), b in finite_vec(), c in finite_vec()) {
            let ab = horizontal_distance(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, horizontal_distance(&b, &a));
            let ac = horizontal_distance(&a, &c);
            let cb = horizontal_distance(&c, &b);
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn quaternion_matrix_round_trip(
            axis in finite_vec().prop_filter("nonzero", |v| v.norm() > 1e-3),
            angle in -PI..PI,
            v in finite_vec(),
        ) {
            let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let back = UnitQuaternion::from_rotation_matrix(&q.to_rotation_matrix());
            let lhs = q * v;
            let rhs = back * v;
            prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + v.norm()));
            prop_assert!((back.norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn yaw_rotation_round_trip(yaw in -(PI - 1e-5)..(PI - 1e-5)) {
            let got = quaternion_yaw(yaw_rotation(yaw).quaternion()).unwrap();
            prop_assert!((wrap_angle(got - yaw)).abs() < 1e-9);
        }
    }
}
