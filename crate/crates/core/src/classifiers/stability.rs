use std::path::Path;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::ad::{euler_xyz_matrix, sigmoid, Real, M3, V3};
use crate::classifiers::{clamp_prob, dual_gradient, lift_grasp, ContextClassifier, PROB_EPS};
use crate::error::{parse_toml, read_to_string, Error, Result};
use crate::geometry::{EulerGrasp, Scene};

/// Parallel-jaw gripper geometry in the gripper frame: origin at the
/// wrist, approach along +z, fingers closing along ±y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperModel {
    pub name: String,
    /// Distance between the open fingers (m).
    pub finger_separation: f64,
    /// Finger extent along the approach axis (m).
    pub finger_length: f64,
    /// Center of the closing region between the fingers.
    pub closing_center: [f64; 3],
    /// Palm and wrist points that must stay outside objects.
    pub body_points: Vec<[f64; 3]>,
}

impl Default for GripperModel {
    /// Dimensions close to a Franka hand.
    fn default() -> Self {
        Self::from_toml_str(include_str!("../../data/grippers/parallel_jaw.toml"), "builtin")
            .expect("bundled gripper file is valid")
    }
}

impl GripperModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.finger_separation > 0.0 && self.finger_length > 0.0) {
            return Err(Error::invalid("gripper", "finger sizes must be positive"));
        }
        let finite = self
            .body_points
            .iter()
            .chain(std::iter::once(&self.closing_center))
            .flatten()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("gripper", "points must be finite"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let g: GripperModel = parse_toml(text, origin)?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?, &path.display().to_string())
    }

    /// Body points followed by three points along each finger (base, middle,
    /// tip).
    pub fn collision_points(&self) -> Vec<Vector3<f64>> {
        let c = Vector3::from(self.closing_center);
        let half = 0.5 * self.finger_separation;
        let mut pts: Vec<Vector3<f64>> =
            self.body_points.iter().map(|p| Vector3::from(*p)).collect();
        for side in [-1.0, 1.0] {
            for dz in [-0.5, 0.0, 0.5] {
                pts.push(c + Vector3::new(0.0, side * half, dz * self.finger_length));
            }
        }
        pts
    }

    /// Points on the inner finger surfaces where contact alignment is
    /// measured.
    pub fn finger_proxies(&self) -> [Vector3<f64>; 2] {
        let c = Vector3::from(self.closing_center);
        let off = Vector3::new(0.0, 0.5 * self.finger_separation, 0.0);
        [c + off, c - off]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityParams {
    /// Logistic gain on the smallest body-point distance.
    pub collision_gain: f64,
    /// Logistic gain on the closing-center depth.
    pub closure_gain: f64,
    pub alignment_gain: f64,
    /// Cosine between closing axis and surface normal at the midpoint of
    /// the alignment logistic.
    pub alignment_cos: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            collision_gain: 200.0,
            closure_gain: 200.0,
            alignment_gain: 10.0,
            alignment_cos: 0.85,
        }
    }
}

/// The three factors of the stability surrogate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityFactors {
    pub collision: f64,
    pub closure: f64,
    pub antipodal: f64,
}

impl StabilityFactors {
    pub fn product(&self) -> f64 {
        self.collision * self.closure * self.antipodal
    }
}

/// Analytic grasp-stability surrogate: no collision, object material
/// between the fingers, and contact normals aligned with the closing axis.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityClassifier {
    gripper: GripperModel,
    params: StabilityParams,
    collision_points: Vec<Vector3<f64>>,
}

/// Closer than this to a branch switch (nearest body point, SDF medial
/// surfaces, contact normal perpendicular to the closing axis) a grasp is
/// treated as sitting on a kink.
const KINK_MARGIN: f64 = 1e-5;

impl StabilityClassifier {
    pub fn new(gripper: GripperModel, params: StabilityParams) -> Result<Self> {
        gripper.validate()?;
        let collision_points = gripper.collision_points();
        Ok(Self {
            gripper,
            params,
            collision_points,
        })
    }

    pub fn gripper(&self) -> &GripperModel {
        &self.gripper
    }

    pub fn params(&self) -> &StabilityParams {
        &self.params
    }

    /// Index of the collision point nearest to the scene and the gap to the
    /// runner-up.
    fn nearest_point(&self, scene: &Scene, t: &V3<f64>, rot: &M3<f64>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (i, p) in self.collision_points.iter().enumerate() {
            let w = rot.mul_v(&V3::from_f64((*p).into())) + *t;
            let d = scene.distance_generic(&w).map_or(f64::INFINITY, |(d, _)| d);
            if d < best.1 {
                second = best.1;
                best = (i, d);
            } else if d < second {
                second = d;
            }
        }
        (best.0, second - best.1)
    }

    /// Log-factors `(collision, closure, antipodal)` with the collision term
    /// taken at body point `nearest`.
    fn log_factors<T: Real>(
        &self,
        scene: &Scene,
        t: &V3<T>,
        rot: &M3<T>,
        nearest: usize,
    ) -> Option<[T; 3]> {
        let world = |p: &Vector3<f64>| rot.mul_v(&V3::from_f64((*p).into())) + *t;
        let k = &self.params;
        let (d_body, _) = scene.distance_generic(&world(&self.collision_points[nearest]))?;
        let collision = (d_body * k.collision_gain).log_sigmoid();

        let center = world(&Vector3::from(self.gripper.closing_center));
        let (d_center, _) = scene.distance_generic(&center)?;
        let closure = (d_center * -k.closure_gain).log_sigmoid();

        let axis = rot.column(1);
        let mut align = T::zero();
        for proxy in self.gripper.finger_proxies() {
            let normal = scene.gradient_generic(&world(&proxy))?;
            align += ((axis.dot(&normal).abs() - k.alignment_cos) * k.alignment_gain).sigmoid();
        }
        let antipodal = (align * 0.5).ln();
        Some([collision, closure, antipodal])
    }

    pub fn factors(&self, g: &EulerGrasp, scene: &Scene) -> Option<StabilityFactors> {
        let t = V3::from_f64(g.translation.into());
        let rot = euler_xyz_matrix(&V3::from_f64(g.euler.into()));
        let (nearest, _) = self.nearest_point(scene, &t, &rot);
        let [a, b, c] = self.log_factors(scene, &t, &rot, nearest)?;
        Some(StabilityFactors {
            collision: a.exp(),
            closure: b.exp(),
            antipodal: c.exp(),
        })
    }
}

impl ContextClassifier for StabilityClassifier {
    fn name(&self) -> &str {
        "stability"
    }

    fn log_prob(&self, g: &EulerGrasp, scene: &Scene) -> f64 {
        let t = V3::from_f64(g.translation.into());
        let rot = euler_xyz_matrix(&V3::from_f64(g.euler.into()));
        let (nearest, _) = self.nearest_point(scene, &t, &rot);
        self.log_factors(scene, &t, &rot, nearest)
            .map_or(PROB_EPS.ln(), |f| f.iter().sum())
    }

    fn log_prob_gradient(&self, g: &EulerGrasp, scene: &Scene) -> (f64, Vector6<f64>) {
        let t = V3::from_f64(g.translation.into());
        let rot = euler_xyz_matrix(&V3::from_f64(g.euler.into()));
        let (nearest, _) = self.nearest_point(scene, &t, &rot);
        let c = lift_grasp(g);
        let (dt, de) = EulerGrasp::lift(c);
        match self.log_factors(scene, &dt, &euler_xyz_matrix(&de), nearest) {
            Some([a, b, c]) => {
                let total = a + b + c;
                (total.re, dual_gradient(&total))
            }
            None => (PROB_EPS.ln(), Vector6::zeros()),
        }
    }

    fn is_regular(&self, g: &EulerGrasp, scene: &Scene) -> bool {
        if scene.is_empty() {
            return false;
        }
        let t = V3::from_f64(g.translation.into());
        let rot = euler_xyz_matrix(&V3::from_f64(g.euler.into()));
        if self.nearest_point(scene, &t, &rot).1 <= KINK_MARGIN {
            return false;
        }
        let pose = g.to_pose();
        let axis = pose.rotation * Vector3::y();
        let center = pose.transform_point(&Vector3::from(self.gripper.closing_center));
        if scene.branch_margin(&center) <= KINK_MARGIN {
            return false;
        }
        self.gripper.finger_proxies().iter().all(|p| {
            let w = pose.transform_point(p);
            scene.branch_margin(&w) > KINK_MARGIN
                && scene
                    .sdf_gradient(&w)
                    .is_some_and(|n| axis.dot(&n).abs() > KINK_MARGIN)
        })
    }
}

/// Clamped stability-surrogate probability with default gains.
pub fn stability_surrogate(g: &EulerGrasp, scene: &Scene, gripper: &GripperModel) -> Result<f64> {
    let f = stability_factors(g, scene, gripper)?;
    Ok(clamp_prob(f.product()))
}

pub fn stability_factors(
    g: &EulerGrasp,
    scene: &Scene,
    gripper: &GripperModel,
) -> Result<StabilityFactors> {
    if scene.is_empty() {
        return Err(Error::invalid("scene", "stability needs at least one object"));
    }
    let c = StabilityClassifier::new(gripper.clone(), StabilityParams::default())?;
    c.factors(g, scene)
        .ok_or_else(|| Error::invalid("scene", "stability needs at least one object"))
}

impl StabilityParams {
    /// The alignment factor at perfect alignment; the surrogate cannot
    /// exceed it.
    pub fn alignment_ceiling(&self) -> f64 {
        sigmoid(self.alignment_gain * (1.0 - self.alignment_cos))
    }
}
