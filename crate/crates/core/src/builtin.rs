//! Data files compiled into the library, addressable as `builtin:<name>`.

use crate::classifiers::GripperModel;
use crate::error::{Error, Result};
use crate::geometry::Scene;
use crate::kinematics::KinematicChain;

pub const PREFIX: &str = "builtin:";

const SCENES: &[(&str, &str)] = &[
    ("sphere", include_str!("../data/scenes/sphere.toml")),
    ("box", include_str!("../data/scenes/box.toml")),
    ("cylinder", include_str!("../data/scenes/cylinder.toml")),
];

const CHAINS: &[(&str, &str)] = &[
    ("panda", include_str!("../data/chains/panda.toml")),
    ("planar_2r", include_str!("../data/chains/planar_2r.toml")),
];

const GRIPPERS: &[(&str, &str)] = &[(
    "parallel_jaw",
    include_str!("../data/grippers/parallel_jaw.toml"),
)];

fn lookup<'a>(table: &'a [(&str, &'a str)], kind: &'static str, name: &str) -> Result<&'a str> {
    table
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            let known: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
            Error::invalid(kind, format!("no builtin `{name}` (known: {})", known.join(", ")))
        })
}

pub fn scene_names() -> impl Iterator<Item = &'static str> {
    SCENES.iter().map(|(n, _)| *n)
}

pub fn scene(name: &str) -> Result<Scene> {
    Scene::from_toml_str(lookup(SCENES, "scene", name)?, &format!("{PREFIX}{name}"))
}

pub fn chain(name: &str) -> Result<KinematicChain> {
    KinematicChain::from_toml_str(lookup(CHAINS, "chain", name)?, &format!("{PREFIX}{name}"))
}

pub fn gripper(name: &str) -> Result<GripperModel> {
    GripperModel::from_toml_str(lookup(GRIPPERS, "gripper", name)?, &format!("{PREFIX}{name}"))
}
