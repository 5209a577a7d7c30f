use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::ad::{Real, V3};
use crate::error::{parse_toml, read_to_string, Error, Result};
use crate::geometry::pose::GraspPose;
use crate::geometry::sdf::{Primitive, Shape};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub name: String,
    pub primitive: Primitive,
}

/// Observation context: named primitives plus the gravity direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    objects: Vec<SceneObject>,
    gravity_up: Vector3<f64>,
    handover_target: Option<Vector3<f64>>,
}

impl Default for Scene {
    fn default() -> Self {
        Self::empty()
    }
}

impl Scene {
    /// A scene with no objects (toy classifiers ignore the scene).
    pub fn empty() -> Self {
        Self {
            objects: Vec::new(),
            gravity_up: Vector3::z(),
            handover_target: None,
        }
    }

    pub fn new(objects: Vec<SceneObject>, gravity_up: Vector3<f64>) -> Result<Self> {
        let n = gravity_up.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid("scene", "gravity_up must be a non-zero vector"));
        }
        for (i, o) in objects.iter().enumerate() {
            if objects[..i].iter().any(|p| p.name == o.name) {
                return Err(Error::invalid("scene", format!("duplicate object name `{}`", o.name)));
            }
        }
        Ok(Self {
            objects,
            gravity_up: gravity_up / n,
            handover_target: None,
        })
    }

    pub fn with_handover_target(mut self, target: Option<Vector3<f64>>) -> Self {
        self.handover_target = target;
        self
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn gravity_up(&self) -> Vector3<f64> {
        self.gravity_up
    }

    /// Centroid of the part a handover grasp should stay away from.
    pub fn handover_target(&self) -> Option<Vector3<f64>> {
        self.handover_target
    }

    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Distance to the union of all objects (`+inf` for an empty scene).
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        self.distance_generic(&V3::<f64>::from_f64((*p).into()))
            .map_or(f64::INFINITY, |(d, _)| d)
    }

    pub fn sdf_gradient(&self, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let v = V3::<f64>::from_f64((*p).into());
        self.gradient_generic(&v).map(|g| Vector3::from(g.values()))
    }

    /// Union distance and the index of the nearest object; ties keep the
    /// first object.
    pub(crate) fn distance_generic<T: Real>(&self, p: &V3<T>) -> Option<(T, usize)> {
        let mut best: Option<(T, usize)> = None;
        for (i, o) in self.objects.iter().enumerate() {
            let d = o.primitive.distance_generic(p);
            match best {
                Some((b, _)) if d.value() >= b.value() => {}
                _ => best = Some((d, i)),
            }
        }
        best
    }

    pub(crate) fn gradient_generic<T: Real>(&self, p: &V3<T>) -> Option<V3<T>> {
        let (_, i) = self.distance_generic(p)?;
        Some(self.objects[i].primitive.gradient_generic(p))
    }

    /// Distance from `p` to the nearest switch in the union field: either a
    /// branch of the nearest primitive or a change of nearest object.
    pub fn branch_margin(&self, p: &Vector3<f64>) -> f64 {
        let mut best = (f64::INFINITY, None);
        let mut second = f64::INFINITY;
        for o in &self.objects {
            let d = o.primitive.distance_generic(&V3::<f64>::from_f64((*p).into()));
            if d < best.0 {
                second = best.0;
                best = (d, Some(o));
            } else if d < second {
                second = d;
            }
        }
        match best.1 {
            Some(o) => o.primitive.branch_margin(p).min(second - best.0),
            None => f64::INFINITY,
        }
    }

    /// Rotate every object about `gravity_up` through its own center by the
    /// given angle. Used to randomize object placement between trials.
    pub fn yawed(&self, angle: f64) -> Scene {
        let axis = nalgebra::Unit::new_normalize(self.gravity_up);
        let rot = UnitQuaternion::from_axis_angle(&axis, angle);
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let pose = o.primitive.pose();
                let moved = GraspPose {
                    translation: pose.translation,
                    rotation: rot * pose.rotation,
                };
                SceneObject {
                    name: o.name.clone(),
                    primitive: o.primitive.with_pose(moved),
                }
            })
            .collect();
        Scene {
            objects,
            gravity_up: self.gravity_up,
            handover_target: self.handover_target,
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let file: SceneFile = parse_toml(text, origin)?;
        file.into_scene()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = SceneFile {
            gravity_up: self.gravity_up.into(),
            handover_target: self.handover_target.map(Into::into),
            objects: self.objects.iter().map(ObjectRecord::from).collect(),
        };
        toml::to_string(&file).map_err(|e| Error::Serialize(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default = "default_up")]
    gravity_up: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    handover_target: Option<[f64; 3]>,
    #[serde(default)]
    objects: Vec<ObjectRecord>,
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    half_extents: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    half_height: Option<f64>,
    translation: [f64; 3],
    #[serde(default = "identity_wxyz")]
    quaternion: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl From<&SceneObject> for ObjectRecord {
    fn from(o: &SceneObject) -> Self {
        let pose = o.primitive.pose();
        let mut rec = ObjectRecord {
            name: o.name.clone(),
            kind: String::new(),
            radius: None,
            half_extents: None,
            half_height: None,
            translation: pose.translation.into(),
            quaternion: pose.wxyz(),
        };
        match *o.primitive.shape() {
            Shape::Sphere { radius } => {
                rec.kind = "sphere".into();
                rec.radius = Some(radius);
            }
            Shape::Box { half_extents } => {
                rec.kind = "box".into();
                rec.half_extents = Some(half_extents);
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                rec.kind = "cylinder".into();
                rec.radius = Some(radius);
                rec.half_height = Some(half_height);
            }
        }
        rec
    }
}

impl SceneFile {
    fn into_scene(self) -> Result<Scene> {
        let mut objects = Vec::with_capacity(self.objects.len());
        for rec in self.objects {
            let name = rec.name.clone();
            let bad = |why: &str| Error::invalid("scene", format!("object `{name}`: {why}"));
            let shape = match rec.kind.as_str() {
                "sphere" => match (rec.radius, rec.half_extents, rec.half_height) {
                    (Some(radius), None, None) => Shape::Sphere { radius },
                    _ => return Err(bad("a sphere takes exactly `radius`")),
                },
                "box" => match (rec.radius, rec.half_extents, rec.half_height) {
                    (None, Some(half_extents), None) => Shape::Box { half_extents },
                    _ => return Err(bad("a box takes exactly `half_extents`")),
                },
                "cylinder" => match (rec.radius, rec.half_extents, rec.half_height) {
                    (Some(radius), None, Some(half_height)) => Shape::Cylinder {
                        radius,
                        half_height,
                    },
                    _ => return Err(bad("a cylinder takes exactly `radius` and `half_height`")),
                },
                other => return Err(bad(&format!("unknown kind `{other}`"))),
            };
            let pose = GraspPose::from_parts(rec.translation, rec.quaternion)?;
            objects.push(SceneObject {
                name: rec.name,
                primitive: Primitive::new(shape, pose)?,
            });
        }
        Ok(Scene::new(objects, Vector3::from(self.gravity_up))?
            .with_handover_target(self.handover_target.map(Vector3::from)))
    }
}
