//! Initial grasp proposals drawn inside an object's bounding box.

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::substream;
use crate::geometry::{GraspPose, Scene};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationMode {
    /// Haar-uniform rotations.
    #[default]
    Uniform,
    /// Approach axis (gripper `z`) aimed at the object centroid, uniform roll.
    TowardCentroid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Inflation of the bounding box on every side, meters.
    pub bbox_margin: f64,
    pub n_samples: usize,
    pub orientation_mode: OrientationMode,
    pub seed: u64,
    /// Object whose box is sampled; all objects when absent.
    pub object: Option<String>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            bbox_margin: 0.02,
            n_samples: 64,
            orientation_mode: OrientationMode::Uniform,
            seed: 0,
            object: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bbox_margin.is_finite() && self.bbox_margin >= 0.0) {
            return Err(Error::invalid(
                "sampler config",
                format!("bbox_margin must be non-negative, got {}", self.bbox_margin),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("sampler config", "n_samples must be at least 1"));
        }
        Ok(())
    }
}

/// Bounding box `(min, max)` of the sampled object(s), inflated by `margin`,
/// together with the centroid the approach axis aims at.
pub fn sampling_box(scene: &Scene, cfg: &SamplerConfig) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let objects: Vec<_> = match &cfg.object {
        Some(name) => vec![scene
            .object(name)
            .ok_or_else(|| Error::invalid("sampler config", format!("no object named `{name}`")))?],
        None => scene.objects().iter().collect(),
    };
    if objects.is_empty() {
        return Err(Error::invalid("sample_bbox", "the scene has no objects"));
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut centroid = Vector3::zeros();
    for o in &objects {
        let (a, b) = o.primitive.aabb();
        lo = lo.inf(&a);
        hi = hi.sup(&b);
        centroid += o.primitive.center();
    }
    centroid /= objects.len() as f64;
    let m = Vector3::repeat(cfg.bbox_margin);
    Ok((lo - m, hi + m, centroid))
}

/// Haar-uniform rotation from a normalized 4D Gaussian.
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

fn aimed_rotation<R: Rng + ?Sized>(rng: &mut R, from: &Vector3<f64>, at: &Vector3<f64>) -> UnitQuaternion<f64> {
    let dir = at - from;
    if dir.norm() < 1e-9 {
        return uniform_rotation(rng);
    }
    let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(0.0..std::f64::consts::TAU));
    let align = UnitQuaternion::rotation_between(&Vector3::z(), &dir).unwrap_or_else(|| {
        // Antiparallel: any half turn about an axis orthogonal to z.
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::x()), std::f64::consts::PI)
    });
    align * roll
}

/// `n_samples` poses with translations uniform in the inflated box.
pub fn sample_bbox(scene: &Scene, cfg: &SamplerConfig) -> Result<Vec<GraspPose>> {
    cfg.validate()?;
    let (lo, hi, centroid) = sampling_box(scene, cfg)?;
    let mut rng = substream(cfg.seed, 0);
    Ok((0..cfg.n_samples)
        .map(|_| {
            let t = Vector3::from_fn(|i, _| {
                if hi[i] > lo[i] {
                    rng.random_range(lo[i]..hi[i])
                } else {
                    lo[i]
                }
            });
            let rotation = match cfg.orientation_mode {
                OrientationMode::Uniform => uniform_rotation(&mut rng),
                OrientationMode::TowardCentroid => aimed_rotation(&mut rng, &t, &centroid),
            };
            GraspPose {
                translation: t,
                rotation,
            }
        })
        .collect())
}
