use nalgebra::Vector6;

use crate::ad::{log_sigmoid, sigmoid};
use crate::classifiers::ContextClassifier;
use crate::error::{Error, Result};
use crate::geometry::{EulerGrasp, Scene};

/// `p = σ(offset − Σ_{i<dims} t_i²)` over the first `dims` translation
/// coordinates. Used for low-dimensional checks against grid quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticLogistic {
    name: String,
    offset: f64,
    dims: usize,
}

impl QuadraticLogistic {
    pub fn new(name: impl Into<String>, offset: f64, dims: usize) -> Result<Self> {
        if !(1..=3).contains(&dims) || !offset.is_finite() {
            return Err(Error::invalid("toy classifier", "dims must be 1..=3 and offset finite"));
        }
        Ok(Self {
            name: name.into(),
            offset,
            dims,
        })
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Probability at a point given by its first `dims` coordinates.
    pub fn prob_at(&self, x: &[f64]) -> f64 {
        sigmoid(self.argument(x))
    }

    fn argument(&self, x: &[f64]) -> f64 {
        self.offset - x.iter().take(self.dims).map(|v| v * v).sum::<f64>()
    }
}

impl ContextClassifier for QuadraticLogistic {
    fn name(&self) -> &str {
        &self.name
    }

    fn log_prob(&self, g: &EulerGrasp, _scene: &Scene) -> f64 {
        log_sigmoid(self.argument(g.translation.as_slice()))
    }

    fn log_prob_gradient(&self, g: &EulerGrasp, _scene: &Scene) -> (f64, Vector6<f64>) {
        let u = self.argument(g.translation.as_slice());
        let outer = sigmoid(-u);
        let mut grad = Vector6::zeros();
        for i in 0..self.dims {
            grad[i] = -2.0 * g.translation[i] * outer;
        }
        (log_sigmoid(u), grad)
    }
}

/// Returns the same probability everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantClassifier {
    name: String,
    prob: f64,
}

impl ConstantClassifier {
    pub fn new(name: impl Into<String>, prob: f64) -> Result<Self> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::invalid("constant classifier", "probability must be in (0, 1)"));
        }
        Ok(Self {
            name: name.into(),
            prob,
        })
    }
}

impl ContextClassifier for ConstantClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn log_prob(&self, _g: &EulerGrasp, _scene: &Scene) -> f64 {
        self.prob.ln()
    }

    fn log_prob_gradient(&self, _g: &EulerGrasp, _scene: &Scene) -> (f64, Vector6<f64>) {
        (self.prob.ln(), Vector6::zeros())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn gradient_matches_closed_form() {
        let c = QuadraticLogistic::new("q", 0.0, 1).unwrap();
        let g = EulerGrasp::new(Vector3::new(1.0, 5.0, 5.0), Vector3::zeros());
        let (lp, grad) = c.log_prob_gradient(&g, &Scene::empty());
        assert!((lp - sigmoid(-1.0).ln()).abs() < 1e-15);
        assert!((grad[0] + 2.0 * (1.0 - sigmoid(-1.0))).abs() < 1e-15);
        assert_eq!(grad.rows(1, 5).norm(), 0.0);
    }

    #[test]
    fn constant_rejects_out_of_range() {
        assert!(ConstantClassifier::new("c", 1.0).is_err());
        assert!(ConstantClassifier::new("c", 0.5).is_ok());
    }
}
