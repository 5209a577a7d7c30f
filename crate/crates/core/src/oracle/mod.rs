//! Brute-force references: grid quadrature, sampling, distances, finite
//! differences and the grasp-network loss.

pub mod grid;
pub mod toy;

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use serde::Serialize;

use crate::classifiers::ContextClassifier;
use crate::error::{Error, Result};
use crate::geometry::{EulerGrasp, Scene};

pub use grid::{grid_target, grid_tv, rejection_sample, tv_distance, GridDensity};
pub use toy::{oracle_check, ToyCheck, ToyCheckConfig, ToyProblem, TOY_NAMES};

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("fd_gradient", format!("step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    Ok((0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect())
}

/// `min(‖r − r̂‖, ‖r + r̂‖)` over quaternion coordinates.
pub fn chordal_distance(r: &UnitQuaternion<f64>, r_hat: &UnitQuaternion<f64>) -> f64 {
    (r.coords - r_hat.coords)
        .norm()
        .min((r.coords + r_hat.coords).norm())
}

/// `2 d² (4 − d²)` with `d` the chordal distance.
pub fn chordal_rotation_loss(r: &UnitQuaternion<f64>, r_hat: &UnitQuaternion<f64>) -> f64 {
    let d2 = chordal_distance(r, r_hat).powi(2);
    2.0 * d2 * (4.0 - d2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub success: f64,
    pub translation: f64,
    pub rotation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            success: 0.85,
            translation: 0.149,
            rotation: 0.001,
        }
    }
}

/// One labelled grasp and the network's prediction for it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSample {
    pub success: f64,
    pub predicted_success: f64,
    pub translation: Vector3<f64>,
    pub predicted_translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub predicted_rotation: UnitQuaternion<f64>,
}

/// Batch mean of `α1 BCE + α2 ‖t − t̂‖² + α3 · chordal term`. Predicted
/// success is clamped away from 0 and 1.
pub fn composite_loss(batch: &[LossSample], w: &LossWeights) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("composite_loss", "empty batch"));
    }
    let total: f64 = batch
        .iter()
        .map(|s| {
            let p = crate::classifiers::clamp_prob(s.predicted_success);
            let bce = -(s.success * p.ln() + (1.0 - s.success) * (1.0 - p).ln());
            let trans = (s.translation - s.predicted_translation).norm_squared();
            w.success * bce
                + w.translation * trans
                + w.rotation * chordal_rotation_loss(&s.rotation, &s.predicted_rotation)
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Floor on the gradient magnitude used to turn absolute discrepancies into
/// relative ones where the gradient vanishes.
pub const GRADIENT_FLOOR: f64 = 1e-2;

/// Outcome of comparing a classifier's gradient with central differences.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradientCheck {
    pub classifier: String,
    pub checked: usize,
    /// Poses within a kink's margin, where differences straddle branches.
    pub skipped: usize,
    pub failures: usize,
    pub max_relative_error: f64,
    pub worst_pose: Option<[f64; 6]>,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

/// Per-coordinate `|∇ − fd| / max(|∇|, GRADIENT_FLOOR)`, maximized.
pub fn gradient_relative_error(analytic: &Vector6<f64>, reference: &[f64]) -> f64 {
    (0..6)
        .map(|i| (analytic[i] - reference[i]).abs() / analytic[i].abs().max(GRADIENT_FLOOR))
        .fold(0.0, f64::max)
}

/// Check `log_prob_gradient` against central differences of `log_prob` at
/// each regular pose.
pub fn gradient_check(
    classifier: &dyn ContextClassifier,
    scene: &Scene,
    poses: &[EulerGrasp],
    h: f64,
    tolerance: f64,
) -> Result<GradientCheck> {
    let mut report = GradientCheck {
        classifier: classifier.name().to_owned(),
        ..GradientCheck::default()
    };
    for g in poses {
        if !classifier.is_regular(g, scene) {
            report.skipped += 1;
            continue;
        }
        let (_, analytic) = classifier.log_prob_gradient(g, scene);
        let v = g.to_vector();
        let fd = fd_gradient(
            |x| classifier.log_prob(&EulerGrasp::from_vector(&Vector6::from_column_slice(x)), scene),
            v.as_slice(),
            h,
        )?;
        let err = gradient_relative_error(&analytic, &fd);
        report.checked += 1;
        if !(err < tolerance) {
            report.failures += 1;
        }
        if !(err <= report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_pose = Some(v.into());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::sigmoid;
    use crate::classifiers::QuadraticLogistic;

    #[test]
    fn fd_examples() {
        let g = fd_gradient(|x| x[0] * x[0] + x[1] * x[1], &[1.0, 2.0], 1e-6).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        assert_eq!(fd_gradient(|_| 3.0, &[1.0, 2.0, 3.0], 1e-3).unwrap(), vec![0.0; 3]);
        for x in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let d = fd_gradient(|v| sigmoid(v[0]), &[x], 1e-5).unwrap()[0];
            let s = sigmoid(x);
            assert!((d - s * (1.0 - s)).abs() < 1e-8);
        }
        assert!(fd_gradient(|_| 0.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn chordal_examples() {
        let r = UnitQuaternion::from_euler_angles(0.3, -1.0, 2.0);
        assert_eq!(chordal_rotation_loss(&r, &r), 0.0);
        let neg = UnitQuaternion::new_unchecked(-r.into_inner());
        assert_eq!(chordal_rotation_loss(&r, &neg), 0.0);
        let id = UnitQuaternion::identity();
        let half_turn = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        assert!((chordal_rotation_loss(&id, &half_turn) - 8.0).abs() < 1e-12);
    }

    fn perfect() -> LossSample {
        let r = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        LossSample {
            success: 1.0,
            predicted_success: 1.0,
            translation: Vector3::new(0.1, 0.2, 0.3),
            predicted_translation: Vector3::new(0.1, 0.2, 0.3),
            rotation: r,
            predicted_rotation: r,
        }
    }

    #[test]
    fn composite_examples() {
        let w = LossWeights::default();
        assert!(composite_loss(&[perfect()], &w).unwrap() < 1e-6);
        let half = LossSample { predicted_success: 0.5, ..perfect() };
        let l = composite_loss(&[half], &w).unwrap();
        assert!((l - 0.85 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.5891).abs() < 1e-4);
        assert!(composite_loss(&[], &w).is_err());
        let worst = LossSample {
            success: 0.0,
            predicted_success: 1.0,
            predicted_translation: Vector3::zeros(),
            predicted_rotation: UnitQuaternion::identity(),
            ..perfect()
        };
        assert!(composite_loss(&[worst, half], &w).unwrap().is_finite());
    }

    #[test]
    fn gradient_check_on_toy() {
        let c = QuadraticLogistic::new("q", 1.0, 3).unwrap();
        let poses: Vec<EulerGrasp> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1 - 2.5;
                EulerGrasp::new(Vector3::new(t, 0.5 * t, -t), Vector3::zeros())
            })
            .collect();
        let r = gradient_check(&c, &Scene::empty(), &poses, 1e-6, 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!((r.checked, r.skipped), (50, 0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn composite_loss_is_nonnegative(
                s in 0.0..=1.0f64, p in 0.0..=1.0f64,
                t in proptest::array::uniform3(-1.0..1.0f64),
                e in proptest::array::uniform3(-3.0..3.0f64),
            ) {
                let sample = LossSample {
                    success: s,
                    predicted_success: p,
                    predicted_translation: Vector3::from(t),
                    predicted_rotation: UnitQuaternion::from_euler_angles(e[0], e[1], e[2]),
                    ..perfect()
                };
                prop_assert!(composite_loss(&[sample], &LossWeights::default()).unwrap() >= 0.0);
            }

            #[test]
            fn chordal_loss_bounds(a in proptest::array::uniform3(-3.0..3.0f64), b in proptest::array::uniform3(-3.0..3.0f64)) {
                let ra = UnitQuaternion::from_euler_angles(a[0], a[1], a[2]);
                let rb = UnitQuaternion::from_euler_angles(b[0], b[1], b[2]);
                let l = chordal_rotation_loss(&ra, &rb);
                prop_assert!((-1e-12..=8.0 + 1e-12).contains(&l));
            }
        }
    }
}
