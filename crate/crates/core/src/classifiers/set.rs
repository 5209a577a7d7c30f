use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::Vector6;

use crate::classifiers::{clamp_prob, ContextClassifier};
use crate::error::{Error, Result};
use crate::geometry::{EulerGrasp, Scene};

/// Number of set-level calls made so far. A value call scores every
/// classifier once; a gradient call also differentiates them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub value_calls: u64,
    pub gradient_calls: u64,
}

impl EvalCounts {
    /// Cost in evaluate-equivalents, a value-plus-gradient call costing 3.
    pub fn budget(&self) -> u64 {
        self.value_calls + 3 * self.gradient_calls
    }
}

/// Scores of one grasp under every classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Clamped per-classifier probabilities, in set order.
    pub scores: Vec<f64>,
    /// Product of the clamped probabilities, clamped again.
    pub joint: f64,
    /// `Σ ln p_i` over the clamped probabilities.
    pub log_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEvaluation {
    pub evaluation: Evaluation,
    /// `Σ ∇ ln p_i` of the unclamped log-probabilities. Inside the clamp
    /// region this keeps pointing uphill instead of vanishing.
    pub log_gradient: Vector6<f64>,
}

/// An ordered, nonempty list of classifiers with unique names whose product
/// is the joint score `D`.
pub struct ClassifierSet {
    classifiers: Vec<Arc<dyn ContextClassifier>>,
    value_calls: AtomicU64,
    gradient_calls: AtomicU64,
}

impl fmt::Debug for ClassifierSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierSet")
            .field("names", &self.names())
            .field("counts", &self.counts())
            .finish()
    }
}

impl ClassifierSet {
    pub fn new(classifiers: Vec<Arc<dyn ContextClassifier>>) -> Result<Self> {
        if classifiers.is_empty() {
            return Err(Error::invalid("classifier set", "at least one classifier is required"));
        }
        for (i, c) in classifiers.iter().enumerate() {
            if classifiers[..i].iter().any(|o| o.name() == c.name()) {
                return Err(Error::invalid(
                    "classifier set",
                    format!("duplicate classifier name `{}`", c.name()),
                ));
            }
        }
        Ok(Self {
            classifiers,
            value_calls: AtomicU64::new(0),
            gradient_calls: AtomicU64::new(0),
        })
    }

    pub fn single(c: impl ContextClassifier + 'static) -> Self {
        Self::new(vec![Arc::new(c)]).expect("one classifier always forms a valid set")
    }

    pub fn classifiers(&self) -> &[Arc<dyn ContextClassifier>] {
        &self.classifiers
    }

    pub fn names(&self) -> Vec<&str> {
        self.classifiers.iter().map(|c| c.name()).collect()
    }

    pub fn len(&self) -> usize {
        self.classifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classifiers.is_empty()
    }

    /// The same classifiers with fresh call counters.
    pub fn fresh(&self) -> Self {
        Self::new(self.classifiers.clone()).expect("already validated")
    }

    pub fn counts(&self) -> EvalCounts {
        EvalCounts {
            value_calls: self.value_calls.load(Ordering::Relaxed),
            gradient_calls: self.gradient_calls.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counts(&self) {
        self.value_calls.store(0, Ordering::Relaxed);
        self.gradient_calls.store(0, Ordering::Relaxed);
    }

    pub fn evaluate(&self, g: &EulerGrasp, scene: &Scene) -> Evaluation {
        self.value_calls.fetch_add(1, Ordering::Relaxed);
        let scores = self.classifiers.iter().map(|c| c.evaluate(g, scene)).collect();
        assemble(scores)
    }

    pub fn evaluate_with_gradient(&self, g: &EulerGrasp, scene: &Scene) -> GradientEvaluation {
        self.gradient_calls.fetch_add(1, Ordering::Relaxed);
        let mut scores = Vec::with_capacity(self.classifiers.len());
        let mut log_gradient = Vector6::zeros();
        for c in &self.classifiers {
            let (lp, grad) = c.log_prob_gradient(g, scene);
            scores.push(clamp_prob(lp.exp()));
            log_gradient += grad;
        }
        GradientEvaluation {
            evaluation: assemble(scores),
            log_gradient,
        }
    }

    /// Joint probability `D = Π p_i`, clamped.
    pub fn joint_probability(&self, g: &EulerGrasp, scene: &Scene) -> f64 {
        self.evaluate(g, scene).joint
    }

    /// `Σ ln p_i` and `Σ ∇ ln p_i`.
    pub fn joint_log_score(&self, g: &EulerGrasp, scene: &Scene) -> (f64, Vector6<f64>) {
        let e = self.evaluate_with_gradient(g, scene);
        (e.evaluation.log_score, e.log_gradient)
    }

    /// `(1 − D) / D`.
    pub fn density_ratio(&self, g: &EulerGrasp, scene: &Scene) -> f64 {
        density_ratio(self.joint_probability(g, scene))
    }

    /// Density ratio multiplied by the odds of `base_discriminator`.
    pub fn corrector_ratio(
        &self,
        base_discriminator: &dyn ContextClassifier,
        g: &EulerGrasp,
        scene: &Scene,
    ) -> f64 {
        corrector_ratio(
            base_discriminator.evaluate(g, scene),
            self.joint_probability(g, scene),
        )
    }

    /// `true` when every classifier is away from its kinks at `g`.
    pub fn is_regular(&self, g: &EulerGrasp, scene: &Scene) -> bool {
        self.classifiers.iter().all(|c| c.is_regular(g, scene))
    }
}

fn assemble(scores: Vec<f64>) -> Evaluation {
    let log_score = scores.iter().map(|p| p.ln()).sum();
    let joint = clamp_prob(scores.iter().product());
    Evaluation {
        scores,
        joint,
        log_score,
    }
}

/// `(1 − D) / D` with `D` clamped to `[PROB_EPS, 1 − PROB_EPS]`.
pub fn density_ratio(joint: f64) -> f64 {
    let d = clamp_prob(joint);
    (1.0 - d) / d
}

/// `p̂ / (1 − p̂) · (1 − D) / D`, both probabilities clamped.
pub fn corrector_ratio(base_prob: f64, joint: f64) -> f64 {
    let p = clamp_prob(base_prob);
    p / (1.0 - p) * density_ratio(joint)
}
