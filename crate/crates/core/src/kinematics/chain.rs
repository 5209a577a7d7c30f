use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{parse_toml, read_to_string, Error, Result};
use crate::geometry::{GraspPose, PoseRecord};

/// One revolute joint in standard Denavit–Hartenberg form:
/// `Rz(theta + theta_offset) * Tz(d) * Tx(a) * Rx(alpha)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhJoint {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
}

impl JointLimits {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, q: f64) -> bool {
        (self.lower..=self.upper).contains(&q)
    }
}

/// Which Jacobian rows the chain is meant to control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpace {
    /// Full 6-D pose; manipulability uses the whole 6×n Jacobian.
    Spatial,
    /// Planar arm moving in its base x–y plane; manipulability and IK use
    /// only the 2×n position block.
    Planar,
}

impl TaskSpace {
    pub fn rows(self) -> usize {
        match self {
            TaskSpace::Spatial => 6,
            TaskSpace::Planar => 2,
        }
    }
}

/// Joint angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(Vec<f64>);

impl JointConfig {
    pub fn new(angles: Vec<f64>) -> Self {
        Self(angles)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn angles(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Serial chain of revolute joints.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    name: String,
    joints: Vec<DhJoint>,
    limits: Vec<JointLimits>,
    base: GraspPose,
    task: TaskSpace,
    home: JointConfig,
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<DhJoint>,
        limits: Vec<JointLimits>,
        task: TaskSpace,
    ) -> Result<Self> {
        if joints.len() < 2 {
            return Err(Error::invalid("chain", "at least two joints are required"));
        }
        if limits.len() != joints.len() {
            return Err(Error::invalid(
                "chain",
                format!("{} joints but {} limit pairs", joints.len(), limits.len()),
            ));
        }
        for (i, l) in limits.iter().enumerate() {
            if !(l.lower.is_finite() && l.upper.is_finite() && l.lower < l.upper) {
                return Err(Error::invalid(
                    "chain",
                    format!("joint {i}: limits must satisfy lower < upper"),
                ));
            }
        }
        for (i, j) in joints.iter().enumerate() {
            if ![j.a, j.alpha, j.d, j.theta_offset].iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("chain", format!("joint {i}: non-finite DH value")));
            }
        }
        let home = JointConfig(limits.iter().map(|l| l.clamp(0.0)).collect());
        Ok(Self {
            name: name.into(),
            joints,
            limits,
            base: GraspPose::identity(),
            task,
            home,
        })
    }

    /// Two-link planar arm with the given link lengths.
    pub fn planar_2r(l1: f64, l2: f64) -> Result<Self> {
        let link = |a| DhJoint {
            a,
            alpha: 0.0,
            d: 0.0,
            theta_offset: 0.0,
        };
        let lim = JointLimits {
            lower: -std::f64::consts::PI,
            upper: std::f64::consts::PI,
        };
        Self::new("planar_2r", vec![link(l1), link(l2)], vec![lim; 2], TaskSpace::Planar)
    }

    pub fn with_base(mut self, base: GraspPose) -> Self {
        self.base = base;
        self
    }

    /// Replace the default IK seed; it is clamped into the joint limits.
    pub fn with_home(mut self, home: JointConfig) -> Result<Self> {
        self.check(&home)?;
        self.home = JointConfig(
            home.0
                .iter()
                .zip(&self.limits)
                .map(|(q, l)| l.clamp(*q))
                .collect(),
        );
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[DhJoint] {
        &self.joints
    }

    pub fn limits(&self) -> &[JointLimits] {
        &self.limits
    }

    pub fn base(&self) -> &GraspPose {
        &self.base
    }

    pub fn task(&self) -> TaskSpace {
        self.task
    }

    /// Default IK seed.
    pub fn home(&self) -> &JointConfig {
        &self.home
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub(crate) fn check(&self, q: &JointConfig) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::invalid(
                "joint config",
                format!("expected {} angles, got {}", self.dof(), q.len()),
            ));
        }
        if !q.0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("joint config", "angles must be finite"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let file: ChainFile = parse_toml(text, origin)?;
        let (joints, limits) = file
            .joints
            .iter()
            .map(|r| {
                (
                    DhJoint {
                        a: r.a,
                        alpha: r.alpha,
                        d: r.d,
                        theta_offset: r.theta_offset,
                    },
                    JointLimits {
                        lower: r.limits[0],
                        upper: r.limits[1],
                    },
                )
            })
            .unzip();
        let mut chain = Self::new(file.name, joints, limits, file.task)?;
        if let Some(base) = file.base {
            chain = chain.with_base(base.try_into()?);
        }
        if let Some(home) = file.home {
            chain = chain.with_home(JointConfig(home))?;
        }
        Ok(chain)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = ChainFile {
            name: self.name.clone(),
            task: self.task,
            base: Some(PoseRecord::from(&self.base)),
            home: Some(self.home.0.clone()),
            joints: self
                .joints
                .iter()
                .zip(&self.limits)
                .map(|(j, l)| JointRecord {
                    a: j.a,
                    alpha: j.alpha,
                    d: j.d,
                    theta_offset: j.theta_offset,
                    limits: [l.lower, l.upper],
                })
                .collect(),
        };
        toml::to_string(&file).map_err(|e| Error::Serialize(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    name: String,
    task: TaskSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    home: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<PoseRecord>,
    joints: Vec<JointRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointRecord {
    a: f64,
    alpha: f64,
    d: f64,
    #[serde(default)]
    theta_offset: f64,
    limits: [f64; 2],
}
