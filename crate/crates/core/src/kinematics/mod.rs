//! Serial revolute chains: forward kinematics, geometric Jacobian,
//! manipulability volume and damped-least-squares inverse kinematics.

pub mod chain;
pub mod forward;
pub mod ik;

pub use chain::{DhJoint, JointConfig, JointLimits, KinematicChain, TaskSpace};
pub use forward::{forward_kinematics, jacobian, manipulability_volume};
pub use ik::{inverse_kinematics, inverse_kinematics_with, IkOptions, IkSolution};
