//! Discriminator-driven gradient flow over Euler-parameterized grasps.

pub mod divergence;
pub mod trace;

use std::fmt;
use std::sync::Arc;

use nalgebra::Vector6;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{clamp_prob, ClassifierSet, ContextClassifier};
use crate::error::{Error, Result};
use crate::geometry::{EulerGrasp, Scene};

pub use divergence::{kl_f_prime, logd_f_prime, FDivergence};
pub use trace::{read_jsonl, write_jsonl, RefinementTrace, TraceStep};

/// Which gradient drives the drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// `−η ⊙ ∇ f′(r)` with `r` the density ratio of the joint score.
    FullFprime,
    /// `η ⊙ ∇ Σ ln p_i`.
    #[default]
    LogScore,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub n_steps: usize,
    pub eta_trans: f64,
    pub eta_euler: f64,
    pub gamma: f64,
    pub divergence: FDivergence,
    pub drift_mode: DriftMode,
    pub seed: u64,
    /// Base-distribution discriminator whose odds multiply the density ratio.
    #[serde(skip)]
    pub corrector: Option<Arc<dyn ContextClassifier>>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_steps: 50,
            eta_trans: 1e-5,
            eta_euler: 1e-4,
            gamma: 1e-4,
            divergence: FDivergence::Kl,
            drift_mode: DriftMode::LogScore,
            seed: 0,
            corrector: None,
        }
    }
}

impl fmt::Debug for FlowConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowConfig")
            .field("n_steps", &self.n_steps)
            .field("eta_trans", &self.eta_trans)
            .field("eta_euler", &self.eta_euler)
            .field("gamma", &self.gamma)
            .field("divergence", &self.divergence)
            .field("drift_mode", &self.drift_mode)
            .field("seed", &self.seed)
            .field("corrector", &self.corrector.as_ref().map(|c| c.name().to_owned()))
            .finish()
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("flow config", "n_steps must be at least 1"));
        }
        self.check_dynamics()
    }

    fn check_dynamics(&self) -> Result<()> {
        for (name, eta) in [("eta_trans", self.eta_trans), ("eta_euler", self.eta_euler)] {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::invalid("flow config", format!("{name} must be positive, got {eta}")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(
                "flow config",
                format!("gamma must be non-negative, got {}", self.gamma),
            ));
        }
        Ok(())
    }

    pub fn with_corrector(mut self, corrector: Arc<dyn ContextClassifier>) -> Self {
        self.corrector = Some(corrector);
        self
    }

    /// Per-coordinate step sizes: translation first, then Euler angles.
    pub fn step_sizes(&self) -> Vector6<f64> {
        Vector6::new(
            self.eta_trans,
            self.eta_trans,
            self.eta_trans,
            self.eta_euler,
            self.eta_euler,
            self.eta_euler,
        )
    }

    /// Per-coordinate noise scale `sqrt(2 γ η)`.
    pub fn noise_scales(&self) -> Vector6<f64> {
        self.step_sizes().map(|eta| (2.0 * self.gamma * eta).sqrt())
    }
}

/// Random stream of batch element `index`; the same `(seed, index)` always
/// yields the same draws regardless of how elements are scheduled.
pub fn substream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Result of one Euler–Maruyama step from `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: EulerGrasp,
    /// Scores at `g` together with the drift and noise applied.
    pub record: TraceStep,
}

/// Unscaled drift direction at `g` (before multiplying by the step sizes).
fn drift_direction(
    log_gradient: &Vector6<f64>,
    joint: f64,
    g: &EulerGrasp,
    scene: &Scene,
    cfg: &FlowConfig,
) -> Vector6<f64> {
    // ∇ logit p̂ of the corrector, when configured.
    let corrector = cfg.corrector.as_ref().map(|c| {
        let (lp, grad) = c.log_prob_gradient(g, scene);
        let p = clamp_prob(lp.exp());
        (p, grad / (1.0 - p))
    });
    match cfg.drift_mode {
        DriftMode::LogScore => match corrector {
            Some((_, logit_grad)) => log_gradient - logit_grad,
            None => *log_gradient,
        },
        DriftMode::FullFprime => {
            let d = clamp_prob(joint);
            let mut ratio = (1.0 - d) / d;
            let mut grad_log_ratio = -log_gradient / (1.0 - d);
            if let Some((p, logit_grad)) = corrector {
                ratio *= p / (1.0 - p);
                grad_log_ratio += logit_grad;
            }
            -grad_log_ratio * cfg.divergence.r_f_second(ratio)
        }
    }
}

/// One step `g' = g + drift + sqrt(2γη) ⊙ ξ`. Noise is always drawn so that
/// the random stream stays aligned; a non-finite drift holds `g` in place and
/// flags the record.
pub fn euler_maruyama_step(
    g: &EulerGrasp,
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &FlowConfig,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> StepOutcome {
    let ge = set.evaluate_with_gradient(g, scene);
    let eval = ge.evaluation;
    let drift = drift_direction(&ge.log_gradient, eval.joint, g, scene, cfg)
        .component_mul(&cfg.step_sizes());
    let xi = Vector6::from_fn(|_, _| StandardNormal.sample(&mut *rng));
    let noise: Vector6<f64> = cfg.noise_scales().component_mul(&xi);

    let mut record = TraceStep::new(step, g, eval.joint, eval.scores);
    record.noise = noise.into();
    let moved = g.to_vector() + drift + noise;
    let next = if drift.iter().all(|v| v.is_finite()) && moved.iter().all(|v| v.is_finite()) {
        record.drift = drift.into();
        EulerGrasp::from_vector(&moved)
    } else {
        log::warn!("non-finite drift at step {step}; state held");
        record.drift = drift.into();
        record.flagged = true;
        *g
    };
    StepOutcome { next, record }
}

/// Refine `g0` as batch element `index`, handing each record to `observe`
/// as soon as it is produced. Returns the final grasp.
pub fn refine_streaming(
    g0: &EulerGrasp,
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &FlowConfig,
    index: usize,
    mut observe: impl FnMut(TraceStep),
) -> Result<EulerGrasp> {
    cfg.check_dynamics()?;
    let mut rng = substream(cfg.seed, index);
    let mut g = *g0;
    for n in 0..cfg.n_steps {
        let out = euler_maruyama_step(&g, set, scene, cfg, &mut rng, n);
        observe(out.record);
        g = out.next;
    }
    let last = set.evaluate(&g, scene);
    observe(TraceStep::new(cfg.n_steps, &g, last.joint, last.scores));
    Ok(g)
}

/// Full trace of `n_steps + 1` records starting at `g0`. `n_steps = 0`
/// yields the scored initial grasp alone.
pub fn refine(
    g0: &EulerGrasp,
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &FlowConfig,
) -> Result<RefinementTrace> {
    refine_indexed(g0, set, scene, cfg, 0)
}

pub fn refine_indexed(
    g0: &EulerGrasp,
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &FlowConfig,
    index: usize,
) -> Result<RefinementTrace> {
    let mut steps = Vec::with_capacity(cfg.n_steps + 1);
    refine_streaming(g0, set, scene, cfg, index, |s| steps.push(s))?;
    Ok(RefinementTrace { steps })
}

/// Element-wise [`refine`] in parallel; element `i` uses substream `i`, so
/// the output does not depend on the worker count.
pub fn refine_batch(
    grasps: &[EulerGrasp],
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &FlowConfig,
) -> Result<Vec<RefinementTrace>> {
    refine_batch_from(grasps, 0, set, scene, cfg)
}

/// [`refine_batch`] for a chunk whose first element has batch index `offset`.
pub fn refine_batch_from(
    grasps: &[EulerGrasp],
    offset: usize,
    set: &ClassifierSet,
    scene: &Scene,
    cfg: &FlowConfig,
) -> Result<Vec<RefinementTrace>> {
    if grasps.is_empty() {
        return Err(Error::invalid("refine_batch", "the batch is empty"));
    }
    grasps
        .par_iter()
        .enumerate()
        .map(|(i, g)| refine_indexed(g, set, scene, cfg, offset + i))
        .collect()
}
