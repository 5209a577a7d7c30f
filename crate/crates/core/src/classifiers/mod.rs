//! Differentiable context classifiers `p(c = 1 | g, o)` and their product.
//!
//! Gradients are taken with respect to the refinement coordinates
//! `[tx, ty, tz, ex, ey, ez]` of an [`EulerGrasp`].

mod execution;
mod handover;
mod set;
mod stability;
mod toy;

use nalgebra::Vector6;

use crate::geometry::{EulerGrasp, Scene};

pub use execution::{execution_score, ExecutionClassifier, ExecutionParams};
pub use handover::{handover_score, HandoverClassifier, HandoverParams, HandoverUnits};
pub use set::{
    corrector_ratio, density_ratio, ClassifierSet, EvalCounts, Evaluation, GradientEvaluation,
};
pub use stability::{
    stability_factors, stability_surrogate, GripperModel, StabilityClassifier, StabilityFactors,
    StabilityParams,
};
pub use toy::{ConstantClassifier, QuadraticLogistic};

/// Probability clamp applied by [`ContextClassifier::evaluate`].
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// A scorer of one grasp-quality criterion.
///
/// Implementors supply a smooth, unclamped log-probability and its gradient;
/// the clamped probability and its gradient follow from those.
pub trait ContextClassifier: Send + Sync {
    fn name(&self) -> &str;

    /// Unclamped `ln p(c = 1 | g, o)`.
    fn log_prob(&self, g: &EulerGrasp, scene: &Scene) -> f64;

    /// `ln p` together with its gradient.
    fn log_prob_gradient(&self, g: &EulerGrasp, scene: &Scene) -> (f64, Vector6<f64>);

    /// Probability clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    fn evaluate(&self, g: &EulerGrasp, scene: &Scene) -> f64 {
        clamp_prob(self.log_prob(g, scene).exp())
    }

    /// Gradient of [`evaluate`](Self::evaluate); zero where the clamp is
    /// active.
    fn gradient(&self, g: &EulerGrasp, scene: &Scene) -> Vector6<f64> {
        let (lp, grad) = self.log_prob_gradient(g, scene);
        let p = lp.exp();
        if clamp_prob(p) != p {
            Vector6::zeros()
        } else {
            grad * p
        }
    }

    /// `false` near kinks of the score (branch switches, IK failure, joint
    /// limits) where finite differences are not meaningful.
    fn is_regular(&self, _g: &EulerGrasp, _scene: &Scene) -> bool {
        true
    }
}

/// Seed the six refinement coordinates as dual variables.
pub(crate) fn lift_grasp(g: &EulerGrasp) -> [crate::ad::Dual<6>; 6] {
    let v = g.to_vector();
    std::array::from_fn(|i| crate::ad::Dual::variable(v[i], i))
}

pub(crate) fn dual_gradient(d: &crate::ad::Dual<6>) -> Vector6<f64> {
    Vector6::from(d.eps)
}
