//! Metropolis–Hastings refinement driven by the joint score alone.

use nalgebra::Vector6;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierSet;
use crate::error::{Error, Result};
use crate::flow::{substream, RefinementTrace, TraceStep};
use crate::geometry::{EulerGrasp, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhConfig {
    pub n_steps: usize,
    /// Proposal half-width on translation coordinates, meters.
    pub c_trans: f64,
    /// Proposal half-width on Euler coordinates, radians.
    pub c_euler: f64,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            n_steps: MhVariant::Mh.iterations(),
            c_trans: 0.005,
            c_euler: 0.02,
            seed: 0,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("mh config", "n_steps must be at least 1"));
        }
        for (name, c) in [("c_trans", self.c_trans), ("c_euler", self.c_euler)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid("mh config", format!("{name} must be positive, got {c}")));
            }
        }
        Ok(())
    }

    fn scales(&self) -> Vector6<f64> {
        Vector6::new(
            self.c_trans,
            self.c_trans,
            self.c_trans,
            self.c_euler,
            self.c_euler,
            self.c_euler,
        )
    }
}

/// `D(candidate) / D(current)`, both already clamped.
pub fn acceptance_ratio(candidate: f64, current: f64) -> f64 {
    candidate / current
}

/// Random-walk MH from `g0` as batch element `index`. Each record carries the
/// state, its scores, the proposed move (in `noise`) and whether it was
/// accepted; the last record is the final state. Costs `n_steps + 1` value
/// calls and no gradients.
pub fn mh_refine_indexed(
    g0: &EulerGrasp,
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &MhConfig,
    index: usize,
) -> Result<RefinementTrace> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, index);
    let scales = cfg.scales();
    let mut g = *g0;
    let mut eval = set.evaluate(&g, scene);
    let mut steps = Vec::with_capacity(cfg.n_steps + 1);
    for n in 0..cfg.n_steps {
        let delta = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)).component_mul(&scales);
        let candidate = EulerGrasp::from_vector(&(g.to_vector() + delta));
        let cand_eval = set.evaluate(&candidate, scene);
        let alpha = acceptance_ratio(cand_eval.joint, eval.joint);
        let u: f64 = rng.random();
        let accept = u <= alpha;
        let mut record = TraceStep::new(n, &g, eval.joint, std::mem::take(&mut eval.scores));
        record.noise = delta.into();
        record.accepted = Some(accept);
        steps.push(record);
        if accept {
            g = candidate;
            eval = cand_eval;
        }
    }
    steps.push(TraceStep::new(cfg.n_steps, &g, eval.joint, eval.scores));
    Ok(RefinementTrace { steps })
}

pub fn mh_refine(
    g0: &EulerGrasp,
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &MhConfig,
) -> Result<RefinementTrace> {
    mh_refine_indexed(g0, set, scene, cfg, 0)
}

/// Parallel [`mh_refine`] with substream `offset + i` for element `i`.
pub fn mh_refine_batch_from(
    grasps: &[EulerGrasp],
    offset: usize,
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &MhConfig,
) -> Result<Vec<RefinementTrace>> {
    if grasps.is_empty() {
        return Err(Error::invalid("mh batch", "the batch is empty"));
    }
    grasps
        .par_iter()
        .enumerate()
        .map(|(i, g)| mh_refine_indexed(g, set, scene, cfg, offset + i))
        .collect()
}

pub fn mh_refine_batch(
    grasps: &[EulerGrasp],
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &MhConfig,
) -> Result<Vec<RefinementTrace>> {
    mh_refine_batch_from(grasps, 0, set, scene, cfg)
}

/// The MH configurations compared against the flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MhVariant {
    Mh,
    MhV1,
    MhV2,
}

/// Divisor applied to the reference batch sizes for desk-scale runs.
pub const DEFAULT_BATCH_DIVISOR: usize = 50;

impl MhVariant {
    pub fn iterations(self) -> usize {
        match self {
            MhVariant::Mh | MhVariant::MhV1 => 135,
            MhVariant::MhV2 => 500,
        }
    }

    /// Reference batch size divided by `divisor` (at least 1).
    pub fn batch_size(self, divisor: usize) -> usize {
        let full = match self {
            MhVariant::Mh | MhVariant::MhV2 => 5000,
            MhVariant::MhV1 => 20_000,
        };
        (full / divisor.max(1)).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantRun {
    pub variant: MhVariant,
    pub traces: Vec<RefinementTrace>,
    /// Indices into `traces` that are reported: the top quartile by final
    /// `D` for `mh_v1`, every trace otherwise.
    pub reported: Vec<usize>,
}

impl VariantRun {
    pub fn reported_traces(&self) -> impl Iterator<Item = &RefinementTrace> {
        self.reported.iter().map(|&i| &self.traces[i])
    }

    pub fn mean_final(&self, which: impl Iterator<Item = usize>) -> f64 {
        let v: Vec<f64> = which.map(|i| self.traces[i].last().joint).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Run `variant` on `batch` with the variant's iteration count; proposal
/// scales and seed come from `base`.
pub fn mh_variant(
    variant: MhVariant,
    batch: &[EulerGrasp],
    set: &ClassifierSet,
    scene: &Scene,
    base: &MhConfig,
) -> Result<VariantRun> {
    let cfg = MhConfig {
        n_steps: variant.iterations(),
        ..*base
    };
    let traces = mh_refine_batch(batch, set, scene, &cfg)?;
    let mut reported: Vec<usize> = (0..traces.len()).collect();
    if variant == MhVariant::MhV1 {
        reported.sort_by(|&a, &b| traces[b].last().joint.total_cmp(&traces[a].last().joint));
        reported.truncate(traces.len().div_ceil(4));
    }
    Ok(VariantRun {
        variant,
        traces,
        reported,
    })
}
