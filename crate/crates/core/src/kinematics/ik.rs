use crate::ad::{solve_in_place, Frame, Real, M3, V3};
use crate::error::{Error, Result};
use crate::geometry::GraspPose;
use crate::kinematics::chain::{JointConfig, KinematicChain, TaskSpace};
use crate::kinematics::forward::{jacobian_columns, link_frames, task_jacobian};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkOptions {
    /// Converged when translation error (m) plus rotation angle (rad) drops
    /// below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Minimum damping λ in `(J Jᵀ + λ² I)`.
    pub damping: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: 200,
            damping: 1e-3,
        }
    }
}

impl IkOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.damping > 0.0 && self.max_iterations > 0) {
            return Err(Error::invalid(
                "ik options",
                "tolerance, damping and max_iterations must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    /// Converged config, or the lowest-error config seen when unreachable.
    pub config: JointConfig,
    pub reachable: bool,
    pub iterations: usize,
    /// Final translation error plus rotation angle (planar chains: position
    /// error only).
    pub error: f64,
    /// Some joint ended exactly on a limit.
    pub at_limit: bool,
}

pub(crate) struct IkRun<T> {
    pub q: Vec<T>,
    pub reachable: bool,
    pub iterations: usize,
    pub error: f64,
    pub at_limit: bool,
}

const MAX_DAMPING: f64 = 1e6;
/// Largest single-iteration joint move (rad); longer steps are scaled down.
const MAX_JOINT_STEP: f64 = 0.25;

/// Damped least squares with Levenberg–Marquardt damping adaptation. Steps
/// that do not reduce the squared residual are rejected and the damping
/// raised. Joints resting on a limit whose step would push them further out
/// are frozen for that step.
pub(crate) fn solve<T: Real>(
    chain: &KinematicChain,
    target: &Frame<T>,
    seed: &[f64],
    opts: &IkOptions,
) -> IkRun<T> {
    let limits = chain.limits();
    let task = chain.task();
    let rows = task.rows();
    let n = chain.dof();

    let mut q: Vec<T> = seed
        .iter()
        .zip(limits)
        .map(|(v, l)| T::cst(l.clamp(*v)))
        .collect();
    let (mut frames, mut residual, mut error) = residual_at(chain, &q, target);
    let mut sq = squared_norm(&residual);
    let mut best = (q.clone(), error);
    let mut lambda = opts.damping;
    let mut iterations = 0;

    while best.1 >= opts.tolerance && iterations < opts.max_iterations && lambda <= MAX_DAMPING {
        iterations += 1;
        let jac = task_jacobian(task, &jacobian_columns(&frames));
        let Some(step) = damped_step(&jac, &residual, rows, n, lambda, |k, dq| {
            let v = q[k].value();
            (v <= limits[k].lower && dq < 0.0) || (v >= limits[k].upper && dq > 0.0)
        }) else {
            lambda *= 10.0;
            continue;
        };
        let largest = step
            .iter()
            .fold(T::zero(), |m, v| m.max_v(v.abs()));
        let shrink = if largest.value() > MAX_JOINT_STEP {
            T::cst(MAX_JOINT_STEP) / largest
        } else {
            T::one()
        };
        let candidate: Vec<T> = (0..n)
            .map(|k| clamp(q[k] + step[k] * shrink, limits[k].lower, limits[k].upper))
            .collect();
        let (cf, cr, ce) = residual_at(chain, &candidate, target);
        let csq = squared_norm(&cr);
        if csq < sq {
            q = candidate;
            frames = cf;
            residual = cr;
            error = ce;
            sq = csq;
            lambda = (lambda * 0.25).max(opts.damping);
            if error < best.1 {
                best = (q.clone(), error);
            }
        } else {
            lambda *= 10.0;
        }
    }

    let (q, error) = best;
    let at_limit = q
        .iter()
        .zip(limits)
        .any(|(v, l)| v.value() <= l.lower || v.value() >= l.upper);
    IkRun {
        q,
        reachable: error < opts.tolerance,
        iterations,
        error,
        at_limit,
    }
}

fn squared_norm<T: Real>(r: &[T]) -> f64 {
    r.iter().map(|v| v.value() * v.value()).sum()
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹ r` over the unfrozen columns. A column is frozen when
/// `blocked(joint, step)` holds for its tentative step; the solve is repeated
/// until no new column freezes.
fn damped_step<T: Real>(
    jac: &[T],
    residual: &[T],
    rows: usize,
    n: usize,
    lambda: f64,
    blocked: impl Fn(usize, f64) -> bool,
) -> Option<Vec<T>> {
    let mut frozen = vec![false; n];
    loop {
        let mut gram = Vec::with_capacity(rows * rows);
        for i in 0..rows {
            for j in 0..rows {
                let mut acc = T::cst(if i == j { lambda * lambda } else { 0.0 });
                for k in (0..n).filter(|&k| !frozen[k]) {
                    acc += jac[i * n + k] * jac[j * n + k];
                }
                gram.push(acc);
            }
        }
        let mut y = residual.to_vec();
        if !solve_in_place(&mut gram, &mut y, rows) {
            return None;
        }
        let step: Vec<T> = (0..n)
            .map(|k| {
                let mut acc = T::zero();
                if !frozen[k] {
                    for r in 0..rows {
                        acc += jac[r * n + k] * y[r];
                    }
                }
                acc
            })
            .collect();
        let mut changed = false;
        for k in 0..n {
            if !frozen[k] && blocked(k, step[k].value()) {
                frozen[k] = true;
                changed = true;
            }
        }
        if !changed {
            return Some(step);
        }
    }
}

fn clamp<T: Real>(v: T, lo: f64, hi: f64) -> T {
    if v.value() < lo {
        T::cst(lo)
    } else if v.value() > hi {
        T::cst(hi)
    } else {
        v
    }
}

/// Frames, task-space residual and scalar error of `q` against `target`
/// (both in the chain base frame).
fn residual_at<T: Real>(
    chain: &KinematicChain,
    q: &[T],
    target: &Frame<T>,
) -> (Vec<Frame<T>>, Vec<T>, f64) {
    let frames = link_frames(chain, q);
    let end = &frames[frames.len() - 1];
    let dp = target.translation - end.translation;
    match chain.task() {
        TaskSpace::Planar => {
            let r = vec![dp.0[0], dp.0[1]];
            let err = r[0].value().hypot(r[1].value());
            (frames, r, err)
        }
        TaskSpace::Spatial => {
            let rel = target.rotation.mul_m(&end.rotation.transpose());
            let rot = rotation_residual(&rel);
            let sin_angle = rot.norm().value();
            let cos_angle = ((rel.trace().value() - 1.0) * 0.5).clamp(-1.0, 1.0);
            let err = dp.norm().value() + sin_angle.atan2(cos_angle);
            let r = vec![dp.0[0], dp.0[1], dp.0[2], rot.0[0], rot.0[1], rot.0[2]];
            (frames, r, err)
        }
    }
}

/// `½ vee(R − Rᵀ)`: the axis scaled by the sine of the rotation angle.
fn rotation_residual<T: Real>(r: &M3<T>) -> V3<T> {
    let m = &r.0;
    V3([
        (m[2][1] - m[1][2]) * 0.5,
        (m[0][2] - m[2][0]) * 0.5,
        (m[1][0] - m[0][1]) * 0.5,
    ])
}

/// Express a world-frame target in the chain base frame.
pub(crate) fn to_base<T: Real>(chain: &KinematicChain, world: &Frame<T>) -> Frame<T> {
    chain.base().inverse().frame::<T>().compose(world)
}

pub fn inverse_kinematics(
    chain: &KinematicChain,
    target: &GraspPose,
    seed: &JointConfig,
) -> Result<IkSolution> {
    inverse_kinematics_with(chain, target, seed, &IkOptions::default())
}

pub fn inverse_kinematics_with(
    chain: &KinematicChain,
    target: &GraspPose,
    seed: &JointConfig,
    opts: &IkOptions,
) -> Result<IkSolution> {
    chain.check(seed)?;
    opts.validate()?;
    let run = solve::<f64>(chain, &to_base(chain, &target.frame()), seed.angles(), opts);
    Ok(IkSolution {
        config: JointConfig::new(run.q),
        reachable: run.reachable,
        iterations: run.iterations,
        error: run.error,
        at_limit: run.at_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_distance;
    use crate::kinematics::forward::forward_kinematics;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};

    fn panda() -> KinematicChain {
        KinematicChain::from_toml_str(
            include_str!("../../data/chains/panda.toml"),
            "panda.toml",
        )
        .unwrap()
    }

    fn pose_error(a: &GraspPose, b: &GraspPose) -> f64 {
        (a.translation - b.translation).norm() + geodesic_distance(&a.rotation, &b.rotation)
    }

    #[test]
    fn target_at_seed_needs_no_iterations() {
        let chain = panda();
        let target = forward_kinematics(&chain, chain.home()).unwrap();
        let sol = inverse_kinematics(&chain, &target, chain.home()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.reachable);
        assert_eq!(sol.config, *chain.home());
    }

    #[test]
    fn unreachable_planar_target_stretches_the_arm() {
        let chain = KinematicChain::planar_2r(1.0, 1.0).unwrap();
        let target = GraspPose {
            translation: Vector3::new(2.5 * 0.6, 2.5 * 0.8, 0.0),
            rotation: UnitQuaternion::identity(),
        };
        let sol = inverse_kinematics(&chain, &target, &JointConfig::new(vec![0.2, 0.9])).unwrap();
        assert!(!sol.reachable);
        assert!(sol.config.angles()[1].abs() < 1e-3, "{:?}", sol.config);
        assert!((sol.error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn planar_round_trip() {
        let chain = KinematicChain::planar_2r(1.0, 1.0).unwrap();
        let truth = JointConfig::new(vec![0.4, 1.1]);
        let target = forward_kinematics(&chain, &truth).unwrap();
        let sol = inverse_kinematics(&chain, &target, &JointConfig::new(vec![0.6, 0.9])).unwrap();
        assert!(sol.reachable);
        let got = forward_kinematics(&chain, &sol.config).unwrap();
        assert!((got.translation - target.translation).norm() < 1e-4);
    }

    #[test]
    fn spatial_round_trip_from_nearby_seeds() {
        let chain = panda();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut failures = 0;
        for _ in 0..1000 {
            let truth: Vec<f64> = chain
                .limits()
                .iter()
                .map(|l| rng.random_range(l.lower + 0.3..l.upper - 0.3))
                .collect();
            let dir: Vec<f64> = (0..truth.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let radius = rng.random_range(0.0..0.3);
            let seed: Vec<f64> = truth.iter().zip(&dir).map(|(v, d)| v + radius * d / len).collect();
            let target = forward_kinematics(&chain, &JointConfig::new(truth)).unwrap();
            let sol = inverse_kinematics(&chain, &target, &JointConfig::new(seed)).unwrap();
            let got = forward_kinematics(&chain, &sol.config).unwrap();
            if !sol.reachable || pose_error(&got, &target) >= 1e-4 {
                failures += 1;
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn rebased_chain_solves_rebased_target() {
        let chain = panda();
        let base = GraspPose {
            translation: Vector3::new(0.3, -0.2, 0.5),
            rotation: UnitQuaternion::from_scaled_axis(Vector3::new(0.1, 0.4, -1.2)),
        };
        let moved = chain.clone().with_base(base);
        let truth = JointConfig::new(vec![0.2, -0.5, 0.1, -2.0, 0.3, 1.8, 0.5]);
        let local = forward_kinematics(&chain, &truth).unwrap();
        let world = forward_kinematics(&moved, &truth).unwrap();
        let a = inverse_kinematics(&chain, &local, chain.home()).unwrap();
        let b = inverse_kinematics(&moved, &world, chain.home()).unwrap();
        assert!(a.reachable && b.reachable);
        for (x, y) in a.config.angles().iter().zip(b.config.angles()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn respects_joint_limits() {
        let chain = panda();
        let far = GraspPose {
            translation: Vector3::new(3.0, 0.0, 0.3),
            rotation: UnitQuaternion::identity(),
        };
        let sol = inverse_kinematics(&chain, &far, chain.home()).unwrap();
        assert!(!sol.reachable);
        for (v, l) in sol.config.angles().iter().zip(chain.limits()) {
            assert!(l.contains(*v));
        }
    }

    #[test]
    fn rejects_bad_seed() {
        let chain = KinematicChain::planar_2r(1.0, 1.0).unwrap();
        let seed = JointConfig::new(vec![0.0]);
        assert!(inverse_kinematics(&chain, &GraspPose::identity(), &seed).is_err());
    }
}
