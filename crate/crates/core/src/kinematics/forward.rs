use nalgebra::{Matrix3, Matrix6xX, Rotation3, UnitQuaternion, Vector3};

use crate::ad::{determinant, Frame, Real, M3, V3};
use crate::error::Result;
use crate::geometry::GraspPose;
use crate::kinematics::chain::{DhJoint, JointConfig, KinematicChain, TaskSpace};

fn dh_transform<T: Real>(joint: &DhJoint, q: T) -> Frame<T> {
    let theta = q + joint.theta_offset;
    let (st, ct) = (theta.sin(), theta.cos());
    let (sa, ca) = joint.alpha.sin_cos();
    Frame {
        rotation: M3([
            [ct, -(st * ca), st * sa],
            [st, ct * ca, -(ct * sa)],
            [T::zero(), T::cst(sa), T::cst(ca)],
        ]),
        translation: V3([ct * joint.a, st * joint.a, T::cst(joint.d)]),
    }
}

/// Frames `0..=n` in the chain base frame; frame `i` sits after joint `i`.
pub(crate) fn link_frames<T: Real>(chain: &KinematicChain, q: &[T]) -> Vec<Frame<T>> {
    let mut frames = Vec::with_capacity(q.len() + 1);
    let mut cur = Frame::identity();
    frames.push(cur);
    for (joint, &angle) in chain.joints().iter().zip(q) {
        cur = cur.compose(&dh_transform(joint, angle));
        frames.push(cur);
    }
    frames
}

/// Geometric Jacobian in the base frame as columns `[linear; angular]`.
pub(crate) fn jacobian_columns<T: Real>(frames: &[Frame<T>]) -> Vec<[T; 6]> {
    let end = frames[frames.len() - 1].translation;
    frames[..frames.len() - 1]
        .iter()
        .map(|f| {
            let axis = f.rotation.column(2);
            let lin = axis.cross(&(end - f.translation));
            [lin.0[0], lin.0[1], lin.0[2], axis.0[0], axis.0[1], axis.0[2]]
        })
        .collect()
}

/// Task rows of the base-frame Jacobian, row-major `rows × n`.
pub(crate) fn task_jacobian<T: Real>(task: TaskSpace, columns: &[[T; 6]]) -> Vec<T> {
    let n = columns.len();
    let rows = task.rows();
    let mut out = Vec::with_capacity(rows * n);
    for r in 0..rows {
        out.extend(columns.iter().map(|c| c[r]));
    }
    debug_assert_eq!(out.len(), rows * n);
    out
}

/// `sqrt(det(J Jᵀ))` of a row-major `rows × n` Jacobian, zero when the
/// determinant is not positive.
pub(crate) fn volume_of<T: Real>(jac: &[T], rows: usize) -> T {
    let n = jac.len() / rows;
    if n == rows {
        // Square Jacobian: |det J| avoids squaring the condition number.
        return determinant(jac.to_vec(), rows).abs();
    }
    let mut gram = Vec::with_capacity(rows * rows);
    for i in 0..rows {
        for j in 0..rows {
            let mut acc = T::zero();
            for k in 0..n {
                acc += jac[i * n + k] * jac[j * n + k];
            }
            gram.push(acc);
        }
    }
    let det = determinant(gram, rows);
    if det.value() <= 0.0 {
        T::zero()
    } else {
        det.sqrt()
    }
}

pub(crate) fn manipulability_generic<T: Real>(chain: &KinematicChain, q: &[T]) -> T {
    let frames = link_frames(chain, q);
    let jac = task_jacobian(chain.task(), &jacobian_columns(&frames));
    volume_of(&jac, chain.task().rows())
}

pub(crate) fn frame_to_pose(f: &Frame<f64>) -> GraspPose {
    let m = f.rotation.0;
    let rot = Rotation3::from_matrix_unchecked(Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    ));
    GraspPose {
        translation: Vector3::from(f.translation.0),
        rotation: UnitQuaternion::from_rotation_matrix(&rot),
    }
}

/// End-effector pose in the world frame.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointConfig) -> Result<GraspPose> {
    chain.check(q)?;
    let frames = link_frames(chain, q.angles());
    Ok(chain.base().compose(&frame_to_pose(&frames[frames.len() - 1])))
}

/// Geometric Jacobian in the world frame: rows 0..3 map joint rates to the
/// end-effector linear velocity, rows 3..6 to its angular velocity.
pub fn jacobian(chain: &KinematicChain, q: &JointConfig) -> Result<Matrix6xX<f64>> {
    chain.check(q)?;
    let cols = jacobian_columns(&link_frames(chain, q.angles()));
    let base = chain.base().rotation;
    let mut out = Matrix6xX::zeros(cols.len());
    for (j, c) in cols.iter().enumerate() {
        let lin = base * Vector3::new(c[0], c[1], c[2]);
        let ang = base * Vector3::new(c[3], c[4], c[5]);
        out.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        out.fixed_view_mut::<3, 1>(3, j).copy_from(&ang);
    }
    Ok(out)
}

/// Manipulability-ellipsoid volume `sqrt(det(J Jᵀ))` over the task rows
/// (all six for spatial chains, base-frame x and y for planar ones).
pub fn manipulability_volume(chain: &KinematicChain, q: &JointConfig) -> Result<f64> {
    chain.check(q)?;
    Ok(manipulability_generic(chain, q.angles()))
}
