use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{MhConfig, MhVariant};
use crate::builtin;
use crate::classifiers::{
    ClassifierSet, ContextClassifier, ExecutionClassifier, ExecutionParams, GripperModel,
    HandoverClassifier, HandoverParams, StabilityClassifier, StabilityParams,
};
use crate::error::{parse_toml, read_to_string, Error, Result};
use crate::flow::FlowConfig;
use crate::geometry::Scene;
use crate::kinematics::KinematicChain;
use crate::samplers::SamplerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Flow,
    Mh,
    MhV1,
    MhV2,
    None,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Flow => "flow",
            Method::Mh => "mh",
            Method::MhV1 => "mh_v1",
            Method::MhV2 => "mh_v2",
            Method::None => "none",
        }
    }

    pub fn mh_variant(self) -> Option<MhVariant> {
        match self {
            Method::Mh => Some(MhVariant::Mh),
            Method::MhV1 => Some(MhVariant::MhV1),
            Method::MhV2 => Some(MhVariant::MhV2),
            Method::Flow | Method::None => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Quality classifiers selectable by an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "S", alias = "stability")]
    Stability,
    #[serde(rename = "E", alias = "execution")]
    Execution,
    #[serde(rename = "H", alias = "handover")]
    Handover,
}

impl ClassifierKind {
    pub fn letter(self) -> &'static str {
        match self {
            ClassifierKind::Stability => "S",
            ClassifierKind::Execution => "E",
            ClassifierKind::Handover => "H",
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "stability" => Ok(ClassifierKind::Stability),
            "E" | "execution" => Ok(ClassifierKind::Execution),
            "H" | "handover" => Ok(ClassifierKind::Handover),
            other => Err(Error::invalid("classifier", format!("unknown classifier `{other}`"))),
        }
    }
}

fn default_builtin_gripper() -> String {
    format!("{}parallel_jaw", builtin::PREFIX)
}

fn default_builtin_chain() -> String {
    format!("{}panda", builtin::PREFIX)
}

fn default_classifiers() -> Vec<ClassifierKind> {
    vec![ClassifierKind::Stability]
}

fn default_repetitions() -> usize {
    1
}

fn default_threshold() -> f64 {
    0.5
}

/// One sampler → refiner → ranking pipeline. File references are either
/// `builtin:<name>` or paths relative to the experiment file. The seeds inside
/// `[sampler]`, `[flow]` and `[mh]` are replaced by seeds derived from `seed`
/// and the repetition index.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    pub scene: String,
    #[serde(default = "default_builtin_chain")]
    pub chain: String,
    #[serde(default = "default_builtin_gripper")]
    pub gripper: String,
    pub method: Method,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierKind>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Success threshold `τ` on the joint score.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Keep only the `k` best-scoring samples before refining.
    #[serde(default)]
    pub top_k: Option<usize>,
    /// Rotate the scene objects about the vertical by a seeded random angle
    /// for each repetition.
    #[serde(default)]
    pub randomize_object_yaw: bool,
    /// When set, MH-variant methods refine their reference batch size divided
    /// by this instead of `sampler.n_samples`.
    #[serde(default)]
    pub mh_batch_divisor: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub mh: MhConfig,
    #[serde(default)]
    pub stability: StabilityParams,
    #[serde(default)]
    pub execution: ExecutionParams,
    #[serde(default)]
    pub handover: HandoverParams,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentSpec {
    /// A spec on a bundled scene with every other field at its default.
    pub fn builtin(scene: &str, method: Method) -> Self {
        Self {
            name: format!("{scene}_{method}"),
            scene: format!("{}{scene}", builtin::PREFIX),
            chain: default_builtin_chain(),
            gripper: default_builtin_gripper(),
            method,
            classifiers: default_classifiers(),
            repetitions: 1,
            seed: 0,
            threshold: default_threshold(),
            top_k: None,
            randomize_object_yaw: false,
            mh_batch_divisor: None,
            output_dir: None,
            sampler: SamplerConfig::default(),
            flow: FlowConfig::default(),
            mh: MhConfig::default(),
            stability: StabilityParams::default(),
            execution: ExecutionParams::default(),
            handover: HandoverParams::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml_str(text: &str, origin: &str, base_dir: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec = parse_toml(text, origin)?;
        spec.base_dir = base_dir.to_path_buf();
        if spec.name.is_empty() {
            spec.name = Path::new(origin)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.method.label().to_owned());
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_toml_str(&read_to_string(path)?, &path.display().to_string(), &base)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.classifiers.is_empty() {
            return Err(Error::invalid("experiment", "select at least one classifier"));
        }
        let mut seen = self.classifiers.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.classifiers.len() {
            return Err(Error::invalid("experiment", "a classifier is selected twice"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("experiment", "repetitions must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("experiment", "threshold must lie in (0, 1)"));
        }
        if self.top_k == Some(0) {
            return Err(Error::invalid("experiment", "top_k must be at least 1 when set"));
        }
        if self.mh_batch_divisor == Some(0) {
            return Err(Error::invalid("experiment", "mh_batch_divisor must be at least 1"));
        }
        self.sampler.validate()?;
        match self.method {
            Method::Flow => self.flow.validate()?,
            Method::Mh | Method::MhV1 | Method::MhV2 => self.mh.validate()?,
            Method::None => {}
        }
        Ok(())
    }

    fn resolve_path(&self, reference: &str) -> PathBuf {
        self.base_dir.join(reference)
    }

    pub fn load_scene(&self) -> Result<Scene> {
        match self.scene.strip_prefix(builtin::PREFIX) {
            Some(name) => builtin::scene(name),
            None => Scene::load(&self.resolve_path(&self.scene)),
        }
    }

    pub fn load_chain(&self) -> Result<KinematicChain> {
        match self.chain.strip_prefix(builtin::PREFIX) {
            Some(name) => builtin::chain(name),
            None => KinematicChain::load(&self.resolve_path(&self.chain)),
        }
    }

    pub fn load_gripper(&self) -> Result<GripperModel> {
        match self.gripper.strip_prefix(builtin::PREFIX) {
            Some(name) => builtin::gripper(name),
            None => GripperModel::load(&self.resolve_path(&self.gripper)),
        }
    }

    /// Number of samples drawn per repetition. The `mh_v1` variant refines a
    /// batch four times larger and reports its best quarter.
    pub fn batch_size(&self) -> usize {
        match (self.method.mh_variant(), self.mh_batch_divisor) {
            (Some(v), Some(divisor)) if self.method != Method::Mh => v.batch_size(divisor),
            (Some(MhVariant::MhV1), _) => 4 * self.sampler.n_samples,
            _ => self.sampler.n_samples,
        }
    }

    /// MH settings for this method: plain `mh` keeps the configured step
    /// count, the variants use their fixed iteration counts.
    pub fn mh_config(&self, seed: u64) -> MhConfig {
        let n_steps = match self.method {
            Method::MhV1 | Method::MhV2 => self.method.mh_variant().expect("mh variant").iterations(),
            _ => self.mh.n_steps,
        };
        MhConfig {
            n_steps,
            seed,
            ..self.mh
        }
    }

    /// Label used in tables: the name, or the method when unnamed.
    pub fn label(&self) -> String {
        if self.name.is_empty() {
            self.method.label().to_owned()
        } else {
            self.name.clone()
        }
    }

    pub fn classifier_letters(&self) -> String {
        self.classifiers.iter().map(|c| c.letter()).collect::<Vec<_>>().join("+")
    }
}

/// Classifier instances for one scene, built once and shared by repetitions
/// on that scene.
pub(crate) fn build_classifiers(
    spec: &ExperimentSpec,
    scene: &Scene,
    gripper: &GripperModel,
    chain: Option<&KinematicChain>,
) -> Result<ClassifierSet> {
    let mut list: Vec<Arc<dyn ContextClassifier>> = Vec::new();
    for kind in &spec.classifiers {
        list.push(match kind {
            ClassifierKind::Stability => Arc::new(StabilityClassifier::new(gripper.clone(), spec.stability)?),
            ClassifierKind::Execution => {
                let chain = chain.ok_or_else(|| Error::invalid("experiment", "the execution classifier needs a chain"))?;
                Arc::new(ExecutionClassifier::new(chain.clone(), spec.execution)?)
            }
            ClassifierKind::Handover => Arc::new(HandoverClassifier::for_scene(scene, spec.handover)?),
        });
    }
    ClassifierSet::new(list)
}

/// Derive an independent 64-bit seed for `purpose` from a base seed.
pub fn derive_seed(base: u64, purpose: u64) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = base
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
