use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::ad::{euler_xyz_matrix, Frame, Real, V3};
use crate::classifiers::{clamp_prob, dual_gradient, lift_grasp, ContextClassifier};
use crate::error::Result;
use crate::geometry::{EulerGrasp, Scene};
use crate::kinematics::forward::manipulability_generic;
use crate::kinematics::ik::{self, IkOptions, IkRun};
use crate::kinematics::{JointConfig, KinematicChain};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionParams {
    /// Logistic gain `C` on the manipulability volume.
    pub gain: f64,
    /// Volume `ω_th` at the logistic midpoint.
    pub threshold: f64,
    /// IK convergence tolerance. Tighter than the IK default so that the
    /// score is smooth at the scale of finite-difference steps.
    pub ik_tolerance: f64,
    /// Unreachable targets with best-effort IK error below this are near the
    /// reachability boundary; there the dual gradient is cross-checked
    /// against central differences.
    pub fallback_error: f64,
}

impl Default for ExecutionParams {
    fn default() -> Self {
        Self {
            gain: 100.0,
            threshold: 0.04,
            ik_tolerance: 1e-10,
            fallback_error: 0.05,
        }
    }
}

/// `σ(C (ω(θ) − ω_th))` with `θ` the IK solution for the grasp (best effort
/// when unreachable).
#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionClassifier {
    chain: KinematicChain,
    seed: JointConfig,
    params: ExecutionParams,
    ik: IkOptions,
}

const FD_STEP: f64 = 1e-6;
const FALLBACK_DISAGREEMENT: f64 = 0.1;

impl ExecutionClassifier {
    /// IK is seeded from the chain's home configuration.
    pub fn new(chain: KinematicChain, params: ExecutionParams) -> Result<Self> {
        let seed = chain.home().clone();
        Self::with_seed(chain, seed, params)
    }

    pub fn with_seed(
        chain: KinematicChain,
        seed: JointConfig,
        params: ExecutionParams,
    ) -> Result<Self> {
        chain.check(&seed)?;
        let ik = IkOptions {
            tolerance: params.ik_tolerance,
            ..IkOptions::default()
        };
        ik.validate()?;
        Ok(Self {
            chain,
            seed,
            params,
            ik,
        })
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    fn solve<T: Real>(&self, t: V3<T>, e: V3<T>) -> IkRun<T> {
        let world = Frame {
            rotation: euler_xyz_matrix(&e),
            translation: t,
        };
        ik::solve(
            &self.chain,
            &ik::to_base(&self.chain, &world),
            self.seed.angles(),
            &self.ik,
        )
    }

    fn score_generic<T: Real>(&self, t: V3<T>, e: V3<T>) -> (T, IkRun<T>) {
        let run = self.solve(t, e);
        let omega = manipulability_generic(&self.chain, &run.q);
        (
            ((omega - self.params.threshold) * self.params.gain).log_sigmoid(),
            run,
        )
    }

    /// IK solution used for scoring `g`.
    pub fn joint_solution(&self, g: &EulerGrasp) -> (JointConfig, bool) {
        let run = self.solve::<f64>(
            V3::from_f64(g.translation.into()),
            V3::from_f64(g.euler.into()),
        );
        (JointConfig::new(run.q), run.reachable)
    }

    fn fd_gradient(&self, g: &EulerGrasp, scene: &Scene) -> Vector6<f64> {
        let v = g.to_vector();
        Vector6::from_fn(|i, _| {
            let mut p = v;
            let mut m = v;
            p[i] += FD_STEP;
            m[i] -= FD_STEP;
            (self.log_prob(&EulerGrasp::from_vector(&p), scene)
                - self.log_prob(&EulerGrasp::from_vector(&m), scene))
                / (2.0 * FD_STEP)
        })
    }
}

impl ContextClassifier for ExecutionClassifier {
    fn name(&self) -> &str {
        "execution"
    }

    fn log_prob(&self, g: &EulerGrasp, _scene: &Scene) -> f64 {
        self.score_generic::<f64>(
            V3::from_f64(g.translation.into()),
            V3::from_f64(g.euler.into()),
        )
        .0
    }

    fn log_prob_gradient(&self, g: &EulerGrasp, scene: &Scene) -> (f64, Vector6<f64>) {
        let (t, e) = EulerGrasp::lift(lift_grasp(g));
        let (lp, run) = self.score_generic(t, e);
        let ad = dual_gradient(&lp);
        if !run.reachable && run.error < self.params.fallback_error {
            let fd = self.fd_gradient(g, scene);
            let gap = (ad - fd).norm() / fd.norm().max(1e-12);
            if gap > FALLBACK_DISAGREEMENT {
                log::debug!(
                    "execution gradient: dual and finite differences disagree by {:.1}% near \
                     the reachability boundary (IK error {:.3e}); using finite differences",
                    100.0 * gap,
                    run.error
                );
                return (lp.re, fd);
            }
        }
        (lp.re, ad)
    }

    fn is_regular(&self, g: &EulerGrasp, _scene: &Scene) -> bool {
        let run = self.solve::<f64>(
            V3::from_f64(g.translation.into()),
            V3::from_f64(g.euler.into()),
        );
        run.reachable && !run.at_limit && manipulability_generic(&self.chain, &run.q) > 1e-6
    }
}

/// Clamped execution probability with default parameters.
pub fn execution_score(g: &EulerGrasp, chain: &KinematicChain, seed: &JointConfig) -> Result<f64> {
    let c = ExecutionClassifier::with_seed(chain.clone(), seed.clone(), ExecutionParams::default())?;
    Ok(clamp_prob(c.log_prob(g, &Scene::empty()).exp()))
}
