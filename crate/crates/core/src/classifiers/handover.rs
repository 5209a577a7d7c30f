use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::ad::{log_sigmoid, sigmoid};
use crate::classifiers::{clamp_prob, ContextClassifier};
use crate::error::{Error, Result};
use crate::geometry::{EulerGrasp, Scene};

/// How the squared distance is compared with the threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverUnits {
    /// `σ((C / p_th²)(d² − p_th²))`: squared distance against the squared
    /// threshold, with the gain rescaled so the transition is about 1 cm
    /// wide around `p_th`.
    #[default]
    Squared,
    /// `σ(C (d² − p_th))`, mixing m² and m exactly as written.
    Verbatim,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandoverParams {
    /// Minimum distance to the target centroid (m).
    pub threshold: f64,
    pub gain: f64,
    #[serde(default)]
    pub units: HandoverUnits,
}

impl Default for HandoverParams {
    fn default() -> Self {
        Self {
            threshold: 0.04,
            gain: 10.0,
            units: HandoverUnits::Squared,
        }
    }
}

impl HandoverParams {
    fn argument(&self, d2: f64) -> (f64, f64) {
        match self.units {
            HandoverUnits::Squared => {
                let c = self.gain / (self.threshold * self.threshold);
                (c * (d2 - self.threshold * self.threshold), c)
            }
            HandoverUnits::Verbatim => (self.gain * (d2 - self.threshold), self.gain),
        }
    }
}

/// Prefers grasps at least `threshold` away from a target centroid, leaving
/// that part free for the receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct HandoverClassifier {
    target: Vector3<f64>,
    params: HandoverParams,
}

impl HandoverClassifier {
    pub fn new(target: Vector3<f64>, params: HandoverParams) -> Result<Self> {
        if !target.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("handover", "target must be finite"));
        }
        if !(params.threshold > 0.0 && params.gain > 0.0) {
            return Err(Error::invalid("handover", "threshold and gain must be positive"));
        }
        Ok(Self { target, params })
    }

    /// Uses the scene's handover target.
    pub fn for_scene(scene: &Scene, params: HandoverParams) -> Result<Self> {
        let target = scene
            .handover_target()
            .ok_or_else(|| Error::invalid("scene", "no handover_target given"))?;
        Self::new(target, params)
    }

    pub fn target(&self) -> Vector3<f64> {
        self.target
    }
}

impl ContextClassifier for HandoverClassifier {
    fn name(&self) -> &str {
        "handover"
    }

    fn log_prob(&self, g: &EulerGrasp, _scene: &Scene) -> f64 {
        let d2 = (g.translation - self.target).norm_squared();
        log_sigmoid(self.params.argument(d2).0)
    }

    fn log_prob_gradient(&self, g: &EulerGrasp, _scene: &Scene) -> (f64, Vector6<f64>) {
        let diff = g.translation - self.target;
        let (u, gain) = self.params.argument(diff.norm_squared());
        let dt = diff * (2.0 * gain * sigmoid(-u));
        (
            log_sigmoid(u),
            Vector6::new(dt.x, dt.y, dt.z, 0.0, 0.0, 0.0),
        )
    }
}

/// Clamped handover probability in squared units.
pub fn handover_score(
    g: &EulerGrasp,
    target_centroid: &Vector3<f64>,
    threshold: f64,
    gain: f64,
) -> Result<f64> {
    let c = HandoverClassifier::new(
        *target_centroid,
        HandoverParams {
            threshold,
            gain,
            units: HandoverUnits::Squared,
        },
    )?;
    Ok(clamp_prob(c.log_prob(g, &Scene::empty()).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(d: f64) -> EulerGrasp {
        EulerGrasp::new(Vector3::new(0.0, d, 0.0), Vector3::zeros())
    }

    #[test]
    fn spot_values() {
        let o = Vector3::zeros();
        assert!((handover_score(&at(0.04), &o, 0.04, 10.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(handover_score(&at(0.4), &o, 0.04, 10.0).unwrap() > 0.99);
        assert!(handover_score(&at(0.0), &o, 0.04, 10.0).unwrap() < 0.5);
        // The transition spans about a centimeter.
        assert!(handover_score(&at(0.05), &o, 0.04, 10.0).unwrap() > 0.99);
        assert!(handover_score(&at(0.03), &o, 0.04, 10.0).unwrap() < 0.02);
    }

    #[test]
    fn verbatim_units_switch() {
        let c = HandoverClassifier::new(
            Vector3::zeros(),
            HandoverParams {
                units: HandoverUnits::Verbatim,
                ..HandoverParams::default()
            },
        )
        .unwrap();
        let p = c.evaluate(&at(0.2), &Scene::empty());
        assert!((p - sigmoid(10.0 * (0.04 - 0.04))).abs() < 1e-12);
    }

    #[test]
    fn monotone_along_rays() {
        let target = Vector3::new(0.1, -0.2, 0.3);
        let c = HandoverClassifier::new(target, HandoverParams::default()).unwrap();
        for dir in [Vector3::x(), Vector3::new(1.0, 1.0, -1.0).normalize(), -Vector3::z()] {
            let mut prev = 0.0;
            for k in 0..200 {
                let g = EulerGrasp::new(target + dir * (k as f64 * 0.001), Vector3::zeros());
                let p = c.evaluate(&g, &Scene::empty());
                assert!(p >= prev);
                prev = p;
            }
        }
    }
}
