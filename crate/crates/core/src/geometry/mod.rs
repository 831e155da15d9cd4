//! Lie-group arithmetic for SO(3)/Sim(3) and closed-form similarity alignment.

pub mod so3;
mod sim3;
mod umeyama;

pub use nalgebra::{Rotation3, UnitQuaternion, Vector3};
pub use sim3::{Matrix7, Sim3, Sim3Tangent, Vector7, LOG_ANGLE_MARGIN};
pub use umeyama::{umeyama, weighted_umeyama};

/// Rigid camera pose (rotation + translation, meters).
pub type Pose = nalgebra::Isometry3<f64>;

/// Promotes a rigid pose to a unit-scale similarity.
pub fn pose_to_sim3(pose: &Pose) -> Sim3 {
    Sim3::new(1.0, pose.rotation.to_rotation_matrix(), pose.translation.vector)
        .expect("rigid poses are valid similarities")
}
