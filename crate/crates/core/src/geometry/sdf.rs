//! Exact signed distance fields for sphere, box and cylinder primitives.
//!
//! Non-differentiable loci (primitive centers, box edges, the cylinder axis
//! and rim) resolve ties by coordinate priority: x before y before z, and the
//! radial direction of a cylinder before its axial direction.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ad::{Frame, Real, V3};
use crate::error::{Error, Result};
use crate::geometry::pose::GraspPose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Axis along the local z axis.
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Sphere { radius } => radius > 0.0 && radius.is_finite(),
            Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0 && h.is_finite()),
            Shape::Cylinder {
                radius,
                half_height,
            } => radius > 0.0 && half_height > 0.0 && radius.is_finite() && half_height.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("primitive", format!("non-positive size in {self:?}")))
        }
    }
}

/// A shape placed in the world by a pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    shape: Shape,
    pose: GraspPose,
    frame: Frame<f64>,
}

impl Primitive {
    pub fn new(shape: Shape, pose: GraspPose) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            pose,
            frame: pose.frame(),
        })
    }

    pub fn sphere(radius: f64, center: Vector3<f64>) -> Result<Self> {
        Self::new(
            Shape::Sphere { radius },
            GraspPose::new(center, Default::default())?,
        )
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn pose(&self) -> &GraspPose {
        &self.pose
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }

    /// Axis-aligned bounding box `(min, max)` in world coordinates.
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let r = self.pose.rotation_matrix();
        let half = match self.shape {
            Shape::Sphere { radius } => Vector3::repeat(radius),
            Shape::Box { half_extents } => r.abs() * Vector3::from(half_extents),
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let axis = r.column(2);
                Vector3::from_fn(|i, _| {
                    axis[i].abs() * half_height + radius * (1.0 - axis[i] * axis[i]).max(0.0).sqrt()
                })
            }
        };
        let c = self.pose.translation;
        (c - half, c + half)
    }

    /// Moved copy of this primitive.
    pub fn with_pose(&self, pose: GraspPose) -> Self {
        Self {
            shape: self.shape,
            pose,
            frame: pose.frame(),
        }
    }

    fn to_local<T: Real>(&self, p: &V3<T>) -> V3<T> {
        let t = V3::<T>::from_f64(self.frame.translation.0);
        let diff = *p - t;
        let r = crate::ad::M3::<T>::from_f64(self.frame.rotation.0);
        r.tr_mul_v(&diff)
    }

    fn to_world_dir<T: Real>(&self, v: &V3<T>) -> V3<T> {
        crate::ad::M3::<T>::from_f64(self.frame.rotation.0).mul_v(v)
    }

    pub(crate) fn distance_generic<T: Real>(&self, p: &V3<T>) -> T {
        local_distance(&self.shape, &self.to_local(p))
    }

    pub(crate) fn gradient_generic<T: Real>(&self, p: &V3<T>) -> V3<T> {
        let g = local_gradient(&self.shape, &self.to_local(p));
        self.to_world_dir(&g)
    }

    /// Distance from `p` to the nearest point where the distance or its
    /// gradient switches formula (sphere center, box and cylinder medial
    /// surfaces and face planes). Derivatives of the field up to second
    /// order are smooth within this radius.
    pub fn branch_margin(&self, p: &Vector3<f64>) -> f64 {
        let [x, y, z] = self.to_local(&V3::<f64>::from_f64((*p).into())).0;
        match self.shape {
            Shape::Sphere { .. } => (x * x + y * y + z * z).sqrt(),
            Shape::Box { half_extents } => {
                let c = [x, y, z];
                let q: [f64; 3] = std::array::from_fn(|i| c[i].abs() - half_extents[i]);
                let mut margin = q.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
                if q.iter().all(|v| *v <= 0.0) {
                    let mut k = 0;
                    for i in 1..3 {
                        if q[i] > q[k] {
                            k = i;
                        }
                    }
                    for i in (0..3).filter(|&i| i != k) {
                        margin = margin.min(q[k] - q[i]);
                    }
                    margin = margin.min(c[k].abs());
                }
                margin
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let rho = x.hypot(y);
                let dr = rho - radius;
                let dz = z.abs() - half_height;
                let mut margin = dr.abs().min(dz.abs());
                if dr <= 0.0 && dz <= 0.0 {
                    margin = margin.min((dr - dz).abs());
                    margin = margin.min(if dr >= dz { rho } else { z.abs() });
                }
                margin
            }
        }
    }
}

/// Signed distance from `point` to the primitive surface: negative inside.
pub fn sdf(prim: &Primitive, point: &Vector3<f64>) -> f64 {
    prim.distance_generic(&V3::<f64>::from_f64((*point).into()))
}

/// Gradient of [`sdf`]; unit length wherever the field is differentiable.
pub fn sdf_gradient(prim: &Primitive, point: &Vector3<f64>) -> Vector3<f64> {
    let g = prim.gradient_generic(&V3::<f64>::from_f64((*point).into()));
    Vector3::from(g.values())
}

fn sign_of<T: Real>(x: T) -> f64 {
    if x.value() >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn pos_part<T: Real>(x: T) -> T {
    if x.value() > 0.0 {
        x
    } else {
        T::zero()
    }
}

/// Norm and unit direction of a 2-vector; the zero vector points along +x.
fn radial2<T: Real>(x: T, y: T) -> (T, [T; 2]) {
    let rho = (x * x + y * y).sqrt();
    if rho.value() == 0.0 {
        (x.abs(), [T::one(), T::zero()])
    } else {
        (rho, [x / rho, y / rho])
    }
}

fn local_distance<T: Real>(shape: &Shape, p: &V3<T>) -> T {
    let [x, y, z] = p.0;
    match *shape {
        Shape::Sphere { radius } => {
            let r = (x * x + y * y + z * z).sqrt();
            r - radius
        }
        Shape::Box { half_extents } => {
            let q = [x.abs() - half_extents[0], y.abs() - half_extents[1], z.abs() - half_extents[2]];
            if q.iter().any(|v| v.value() > 0.0) {
                let v = q.map(pos_part);
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            } else {
                q[0].max_v(q[1]).max_v(q[2])
            }
        }
        Shape::Cylinder {
            radius,
            half_height,
        } => {
            let (rho, _) = radial2(x, y);
            let dr = rho - radius;
            let dz = z.abs() - half_height;
            if dr.value() > 0.0 || dz.value() > 0.0 {
                let (vr, vz) = (pos_part(dr), pos_part(dz));
                (vr * vr + vz * vz).sqrt()
            } else {
                dr.max_v(dz)
            }
        }
    }
}

fn local_gradient<T: Real>(shape: &Shape, p: &V3<T>) -> V3<T> {
    let [x, y, z] = p.0;
    let (o, zero) = (T::one(), T::zero());
    match *shape {
        Shape::Sphere { .. } => {
            let r2 = x * x + y * y + z * z;
            if r2.value() == 0.0 {
                V3([o, zero, zero])
            } else {
                let r = r2.sqrt();
                V3([x / r, y / r, z / r])
            }
        }
        Shape::Box { half_extents } => {
            let s = [sign_of(x), sign_of(y), sign_of(z)];
            let q = [x.abs() - half_extents[0], y.abs() - half_extents[1], z.abs() - half_extents[2]];
            if q.iter().any(|v| v.value() > 0.0) {
                let v = q.map(pos_part);
                let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                V3([v[0] * s[0] / d, v[1] * s[1] / d, v[2] * s[2] / d])
            } else {
                let mut k = 0;
                for i in 1..3 {
                    if q[i].value() > q[k].value() {
                        k = i;
                    }
                }
                let mut g = [zero; 3];
                g[k] = T::cst(s[k]);
                V3(g)
            }
        }
        Shape::Cylinder {
            radius,
            half_height,
        } => {
            let (rho, u) = radial2(x, y);
            let sz = sign_of(z);
            let dr = rho - radius;
            let dz = z.abs() - half_height;
            if dr.value() > 0.0 || dz.value() > 0.0 {
                let (vr, vz) = (pos_part(dr), pos_part(dz));
                let d = (vr * vr + vz * vz).sqrt();
                V3([vr * u[0] / d, vr * u[1] / d, vz * sz / d])
            } else if dr.value() >= dz.value() {
                V3([u[0], u[1], zero])
            } else {
                V3([zero, zero, T::cst(sz)])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn unit_box() -> Primitive {
        Primitive::new(
            Shape::Box {
                half_extents: [0.5, 0.5, 0.5],
            },
            GraspPose::identity(),
        )
        .unwrap()
    }

    #[test]
    fn sphere_values_and_gradient() {
        let s = Primitive::sphere(0.1, Vector3::zeros()).unwrap();
        assert!((sdf(&s, &Vector3::new(0.2, 0.0, 0.0)) - 0.1).abs() < 1e-15);
        assert!((sdf(&s, &Vector3::zeros()) + 0.1).abs() < 1e-15);
        assert_eq!(sdf_gradient(&s, &Vector3::new(0.2, 0.0, 0.0)), Vector3::x());
        assert_eq!(sdf_gradient(&s, &Vector3::zeros()), Vector3::x());
    }

    #[test]
    fn box_values() {
        let b = unit_box();
        assert!((sdf(&b, &Vector3::new(1.0, 0.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((sdf(&b, &Vector3::new(0.1, -0.3, 0.05)) + 0.2).abs() < 1e-15);
        assert_eq!(sdf_gradient(&b, &Vector3::new(0.1, -0.3, 0.05)), -Vector3::y());
        // centre: all faces tie, x wins
        assert_eq!(sdf_gradient(&b, &Vector3::zeros()), Vector3::x());
    }

    #[test]
    fn box_interior_gradient_matches_differences() {
        let b = unit_box();
        let p = Vector3::new(0.05, 0.1, -0.42);
        let g = sdf_gradient(&b, &p);
        let h = 1e-6;
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = h;
            let fd = (sdf(&b, &(p + e)) - sdf(&b, &(p - e))) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
        assert_eq!(g, -Vector3::z());
    }

    #[test]
    fn rotated_cylinder() {
        let pose = GraspPose::new(
            Vector3::new(1.0, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2),
        )
        .unwrap();
        let c = Primitive::new(
            Shape::Cylinder {
                radius: 0.1,
                half_height: 0.3,
            },
            pose,
        )
        .unwrap();
        // the local z axis now points along -y in the world
        assert!((sdf(&c, &Vector3::new(1.0, 0.5, 0.0)) - 0.2).abs() < 1e-12);
        assert!((sdf(&c, &Vector3::new(1.0, 0.0, 0.25)) - 0.15).abs() < 1e-12);
        let (lo, hi) = c.aabb();
        assert!((lo - Vector3::new(0.9, -0.3, -0.1)).norm() < 1e-12);
        assert!((hi - Vector3::new(1.1, 0.3, 0.1)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_sizes() {
        assert!(Primitive::sphere(0.0, Vector3::zeros()).is_err());
        assert!(Primitive::new(
            Shape::Box {
                half_extents: [1.0, -1.0, 1.0]
            },
            GraspPose::identity()
        )
        .is_err());
    }

    fn arb_primitive() -> impl Strategy<Value = Primitive> {
        let shape = prop_oneof![
            (0.05..0.5f64).prop_map(|radius| Shape::Sphere { radius }),
            (0.05..0.5f64, 0.05..0.5f64, 0.05..0.5f64).prop_map(|(a, b, c)| Shape::Box {
                half_extents: [a, b, c]
            }),
            (0.05..0.5f64, 0.05..0.5f64).prop_map(|(radius, half_height)| Shape::Cylinder {
                radius,
                half_height
            }),
        ];
        (
            shape,
            prop::array::uniform3(-1.0..1.0f64),
            prop::array::uniform4(-1.0..1.0f64),
        )
            .prop_filter_map("degenerate quaternion", |(s, t, q)| {
                let pose = GraspPose::from_parts(t, q).ok()?;
                Primitive::new(s, pose).ok()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn gradient_matches_central_differences(
            prim in arb_primitive(),
            p in prop::array::uniform3(-1.5..1.5f64),
        ) {
            let p = Vector3::from(p);
            let g = sdf_gradient(&prim, &p);
            prop_assert!((g.norm() - 1.0).abs() < 1e-9);
            let h = 1e-6;
            let fd = Vector3::from_fn(|i, _| {
                let mut e = Vector3::zeros();
                e[i] = h;
                (sdf(&prim, &(p + e)) - sdf(&prim, &(p - e))) / (2.0 * h)
            });
            // points within a few h of a kink are not differentiable there
            let near_kink = (fd.norm() - 1.0).abs() > 1e-6;
            prop_assume!(!near_kink);
            prop_assert!((fd - g).norm() <= 1e-4 * g.norm(), "fd {fd:?} vs {g:?}");
        }

        #[test]
        fn one_lipschitz(
            prim in arb_primitive(),
            a in prop::array::uniform3(-1.5..1.5f64),
            b in prop::array::uniform3(-1.5..1.5f64),
        ) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            prop_assert!((sdf(&prim, &a) - sdf(&prim, &b)).abs() <= (a - b).norm() + 1e-12);
        }

        #[test]
        fn stepping_along_gradient_outside(
            prim in arb_primitive(),
            p in prop::array::uniform3(-1.5..1.5f64),
        ) {
            let p = Vector3::from(p);
            let d = sdf(&prim, &p);
            prop_assume!(d > 1e-3);
            let t = 1e-4;
            let moved = sdf(&prim, &(p + sdf_gradient(&prim, &p) * t));
            prop_assert!((moved - (d + t)).abs() < 1e-5);
        }
    }
}
