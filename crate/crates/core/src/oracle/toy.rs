//! Low-dimensional refinement problems whose target density is computable by
//! grid quadrature.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ad::log_sigmoid;
use crate::classifiers::{ClassifierSet, QuadraticLogistic};
use crate::error::{Error, Result};
use crate::flow::{refine_streaming, substream, DriftMode, FDivergence, FlowConfig};
use crate::geometry::{EulerGrasp, Scene};
use crate::oracle::grid::{grid_target, rejection_sample, tv_distance, GridDensity};

pub const TOY_NAMES: &[&str] = &["logistic1d", "logistic2d"];

/// `D(x) = σ(offset − ‖x‖²)` with a uniform base on `[−half_width, half_width]^dims`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyProblem {
    pub name: String,
    pub dims: usize,
    pub offset: f64,
    pub half_width: f64,
}

impl ToyProblem {
    pub fn named(name: &str) -> Result<Self> {
        let dims = match name {
            "logistic1d" => 1,
            "logistic2d" => 2,
            _ => {
                return Err(Error::invalid(
                    "toy",
                    format!("unknown toy `{name}` (known: {})", TOY_NAMES.join(", ")),
                ))
            }
        };
        Ok(Self {
            name: name.to_owned(),
            dims,
            offset: 4.0,
            half_width: 4.0,
        })
    }

    pub fn classifier(&self) -> QuadraticLogistic {
        QuadraticLogistic::new(self.name.clone(), self.offset, self.dims).expect("toy parameters are valid")
    }

    fn argument(&self, x: &[f64]) -> f64 {
        self.offset - x.iter().map(|v| v * v).sum::<f64>()
    }

    fn domain(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.half_width; self.dims], vec![self.half_width; self.dims])
    }

    /// `p ∝ D · q_base` on a grid with `resolution` cells per axis.
    pub fn target(&self, resolution: usize) -> Result<GridDensity> {
        let (lo, hi) = self.domain();
        grid_target(
            |x| log_sigmoid(self.argument(x)).exp(),
            |_| 1.0,
            &lo,
            &hi,
            &vec![resolution; self.dims],
        )
    }

    /// Invariant density of the flow's continuous-time limit, where one is
    /// known in closed form: `D^{1/γ}` for log-score drift, `(D / (1 − D))^{1/γ}`
    /// for the full KL drift. `None` otherwise.
    pub fn stationary(&self, cfg: &FlowConfig, resolution: usize) -> Result<Option<GridDensity>> {
        if cfg.corrector.is_some() {
            return Ok(None);
        }
        let log_density: fn(f64) -> f64 = match (cfg.drift_mode, cfg.divergence) {
            (DriftMode::LogScore, _) => log_sigmoid,
            (DriftMode::FullFprime, FDivergence::Kl) => |u| u,
            (DriftMode::FullFprime, FDivergence::Logd) => return Ok(None),
        };
        let (lo, hi) = self.domain();
        // Shift by the maximum (at the origin) before exponentiating.
        let peak = log_density(self.offset);
        grid_target(
            |x| ((log_density(self.argument(x)) - peak) / cfg.gamma).exp(),
            |_| 1.0,
            &lo,
            &hi,
            &vec![resolution; self.dims],
        )
        .map(Some)
    }

    /// `n` draws from the uniform base, embedded as grasps with the remaining
    /// coordinates at zero.
    pub fn base_samples(&self, n: usize, seed: u64) -> Vec<EulerGrasp> {
        let mut rng = substream(seed, 0);
        (0..n)
            .map(|_| {
                let mut t = Vector3::zeros();
                for i in 0..self.dims {
                    t[i] = rng.random_range(-self.half_width..self.half_width);
                }
                EulerGrasp::new(t, Vector3::zeros())
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ToyCheckConfig {
    pub flow: FlowConfig,
    pub n_samples: usize,
    pub checkpoints: usize,
    /// Cells per axis for quadrature.
    pub fine_resolution: usize,
    /// Cells per axis for the distance; must divide `fine_resolution`.
    pub tv_resolution: usize,
}

impl ToyCheckConfig {
    /// The 2D convergence check settings: KL flow, `γ = 1e-2`, `η = 1e-3`,
    /// 2000 steps, 10⁴ samples, four checkpoints, 20 cells per axis.
    pub fn standard() -> Self {
        Self {
            flow: FlowConfig {
                n_steps: 2000,
                eta_trans: 1e-3,
                eta_euler: 1e-3,
                gamma: 1e-2,
                divergence: FDivergence::Kl,
                ..FlowConfig::default()
            },
            n_samples: 10_000,
            checkpoints: 4,
            fine_resolution: 400,
            tv_resolution: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyCheck {
    pub toy: ToyProblem,
    pub n_samples: usize,
    pub gamma: f64,
    /// TV of the base samples to the target.
    pub initial_tv: f64,
    /// Step counts at which the particles were compared.
    pub checkpoints: Vec<usize>,
    /// TV to `D · q_base` at each checkpoint.
    pub target_tv: Vec<f64>,
    /// TV to the flow's closed-form invariant density, when known.
    pub stationary_tv: Option<Vec<f64>>,
    /// TV between the target and the stationary density themselves.
    pub stationary_gap: Option<f64>,
    /// TV of exact target samples of the same size: the sampling-noise floor.
    pub sampling_floor: f64,
}

impl ToyCheck {
    pub fn final_tv(&self) -> f64 {
        *self.target_tv.last().expect("at least one checkpoint")
    }

    pub fn monotone(&self) -> bool {
        self.target_tv.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Run the flow from base samples and measure the distance to the quadrature
/// target at evenly spaced checkpoints.
pub fn oracle_check(toy: &ToyProblem, cfg: &ToyCheckConfig) -> Result<ToyCheck> {
    cfg.flow.validate()?;
    if cfg.n_samples == 0 || cfg.checkpoints == 0 || cfg.checkpoints > cfg.flow.n_steps {
        return Err(Error::invalid(
            "oracle check",
            "need samples and between 1 and n_steps checkpoints",
        ));
    }
    let fine = toy.target(cfg.fine_resolution)?;
    let coarse = vec![cfg.tv_resolution; toy.dims];
    let target = fine.coarsen(&coarse)?;
    let stationary = match toy.stationary(&cfg.flow, cfg.fine_resolution)? {
        Some(s) => Some(s.coarsen(&coarse)?),
        None => None,
    };
    let marks: Vec<usize> = (1..=cfg.checkpoints)
        .map(|k| k * cfg.flow.n_steps / cfg.checkpoints)
        .collect();

    let set = ClassifierSet::single(toy.classifier());
    let scene = Scene::empty();
    let starts = toy.base_samples(cfg.n_samples, crate::harness::derive_seed(cfg.flow.seed, 1));
    // snapshots[i][k]: position of particle i at checkpoint k.
    let snapshots: Vec<Vec<Vec<f64>>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, g0)| {
            let mut seen = Vec::with_capacity(marks.len());
            refine_streaming(g0, &set, &scene, &cfg.flow, i, |rec| {
                if marks.contains(&rec.step) {
                    seen.push(rec.translation[..toy.dims].to_vec());
                }
            })?;
            Ok(seen)
        })
        .collect::<Result<_>>()?;

    let at = |k: usize| -> Vec<&[f64]> { snapshots.iter().map(|s| s[k].as_slice()).collect() };
    let initial: Vec<&[f64]> = starts.iter().map(|g| &g.translation.as_slice()[..toy.dims]).collect();
    let target_tv = (0..marks.len())
        .map(|k| tv_distance(&at(k), &target))
        .collect::<Result<Vec<_>>>()?;
    let stationary_tv = match &stationary {
        Some(s) => Some(
            (0..marks.len())
                .map(|k| tv_distance(&at(k), s))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let exact = rejection_sample(&fine, cfg.n_samples, cfg.flow.seed)?;
    Ok(ToyCheck {
        toy: toy.clone(),
        n_samples: cfg.n_samples,
        gamma: cfg.flow.gamma,
        initial_tv: tv_distance(&initial, &target)?,
        checkpoints: marks,
        target_tv,
        stationary_gap: match &stationary {
            Some(s) => Some(crate::oracle::grid_tv(s, &target)?),
            None => None,
        },
        stationary_tv,
        sampling_floor: tv_distance(&exact, &target)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(gamma: f64, eta: f64, n_steps: usize) -> ToyCheckConfig {
        ToyCheckConfig {
            flow: FlowConfig {
                n_steps,
                eta_trans: eta,
                eta_euler: eta,
                gamma,
                seed: 5,
                ..FlowConfig::default()
            },
            n_samples: 2000,
            checkpoints: 4,
            fine_resolution: 200,
            tv_resolution: 20,
        }
    }

    #[test]
    fn names_resolve() {
        assert_eq!(ToyProblem::named("logistic2d").unwrap().dims, 2);
        assert!(ToyProblem::named("banana").is_err());
        let toy = ToyProblem::named("logistic1d").unwrap();
        let base = toy.base_samples(500, 1);
        assert!(base.iter().all(|g| g.translation[0].abs() <= 4.0 && g.translation[1] == 0.0));
    }

    #[test]
    fn unit_temperature_flow_reaches_the_target() {
        // With γ = 1 the log-score flow is Langevin dynamics for D itself.
        let toy = ToyProblem::named("logistic1d").unwrap();
        let check = oracle_check(&toy, &small(1.0, 1e-2, 1000)).unwrap();
        assert!(check.final_tv() < check.initial_tv);
        assert!(check.final_tv() < check.sampling_floor + 0.05, "{check:?}");
        assert!(check.stationary_gap.unwrap() < 1e-12);
    }

    #[test]
    fn low_temperature_flow_tracks_its_invariant_density() {
        let toy = ToyProblem::named("logistic1d").unwrap();
        // Drift vanishes with 1 − D near the mode, so mixing needs a long horizon.
        let check = oracle_check(&toy, &small(1e-2, 1e-2, 2000)).unwrap();
        let stationary = check.stationary_tv.clone().unwrap();
        assert!(stationary.windows(2).all(|w| w[1] < w[0]), "{check:?}");
        assert!(*stationary.last().unwrap() < 0.12, "{check:?}");
        assert!(check.stationary_gap.unwrap() > 0.3);
    }

    #[test]
    fn rejects_bad_settings() {
        let toy = ToyProblem::named("logistic1d").unwrap();
        let mut cfg = small(1.0, 1e-2, 10);
        cfg.checkpoints = 11;
        assert!(oracle_check(&toy, &cfg).is_err());
        cfg.checkpoints = 2;
        cfg.tv_resolution = 30;
        assert!(oracle_check(&toy, &cfg).is_err());
    }
}
