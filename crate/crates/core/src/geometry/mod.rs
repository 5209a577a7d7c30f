//! Poses, rotation conversions, primitive signed-distance fields and scenes.

pub mod pose;
pub mod scene;
pub mod sdf;

pub use pose::{
    euler_to_quat, geodesic_distance, quat_to_euler, EulerAngles, EulerGrasp, GraspPose,
    PoseRecord,
};
pub use scene::{Scene, SceneObject};
pub use sdf::{sdf, sdf_gradient, Primitive, Shape};
