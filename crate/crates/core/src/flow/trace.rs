use std::io::Write;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EulerGrasp, GraspPose};

/// One step of a refinement: the state, its scores and the move applied to
/// reach the next state (zero on the final record).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub translation: [f64; 3],
    pub euler: [f64; 3],
    /// `(w, x, y, z)` of the state's rotation.
    pub quaternion: [f64; 4],
    /// Joint score `D` at this state.
    pub joint: f64,
    pub scores: Vec<f64>,
    pub drift: [f64; 6],
    pub noise: [f64; 6],
    /// The drift was not finite and the state was held.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
    /// Metropolis–Hastings decision for the proposal made from this state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
}

impl TraceStep {
    pub(crate) fn new(step: usize, g: &EulerGrasp, joint: f64, scores: Vec<f64>) -> Self {
        Self {
            step,
            translation: g.translation.into(),
            euler: g.euler.into(),
            quaternion: g.to_pose().wxyz(),
            joint,
            scores,
            drift: [0.0; 6],
            noise: [0.0; 6],
            flagged: false,
            accepted: None,
        }
    }

    pub fn grasp(&self) -> EulerGrasp {
        EulerGrasp::new(Vector3::from(self.translation), Vector3::from(self.euler))
    }

    pub fn drift(&self) -> Vector6<f64> {
        Vector6::from(self.drift)
    }

    pub fn noise(&self) -> Vector6<f64> {
        Vector6::from(self.noise)
    }
}

/// Every state visited by one refinement, `n_steps + 1` records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub steps: Vec<TraceStep>,
}

impl RefinementTrace {
    pub fn initial(&self) -> &TraceStep {
        &self.steps[0]
    }

    pub fn last(&self) -> &TraceStep {
        &self.steps[self.steps.len() - 1]
    }

    /// Final grasp as a unit-quaternion pose.
    pub fn final_pose(&self) -> GraspPose {
        self.last().grasp().to_pose()
    }

    pub fn flagged_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.flagged).count()
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        let decided: Vec<bool> = self.steps.iter().filter_map(|s| s.accepted).collect();
        if decided.is_empty() {
            None
        } else {
            Some(decided.iter().filter(|a| **a).count() as f64 / decided.len() as f64)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TraceLine<'a> {
    grasp: usize,
    #[serde(flatten, borrow)]
    step: std::borrow::Cow<'a, TraceStep>,
}

/// Append one JSON object per step, tagged with the grasp index.
pub fn write_jsonl<W: Write + ?Sized>(out: &mut W, grasp: usize, trace: &RefinementTrace) -> Result<()> {
    for step in &trace.steps {
        let line = TraceLine {
            grasp,
            step: std::borrow::Cow::Borrowed(step),
        };
        serde_json::to_writer(&mut *out, &line).map_err(|e| Error::Serialize(e.to_string()))?;
        out.write_all(b"\n")
            .map_err(|e| Error::Serialize(e.to_string()))?;
    }
    Ok(())
}

/// Parse records written by [`write_jsonl`] back into `(grasp, step)` pairs.
pub fn read_jsonl(text: &str) -> Result<Vec<(usize, TraceStep)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: TraceLine<'_> = serde_json::from_str(l).map_err(|e| Error::Parse {
                origin: "trace".into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok((rec.grasp, rec.step.into_owned()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let g = EulerGrasp::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.4, 0.5, 0.6));
        let mut a = TraceStep::new(0, &g, 0.25, vec![0.5, 0.5]);
        a.drift = [1e-5, 0.0, 0.0, 0.0, 0.0, -2e-4];
        a.accepted = Some(true);
        let mut b = TraceStep::new(1, &g, 0.3, vec![0.6, 0.5]);
        b.flagged = true;
        let trace = RefinementTrace { steps: vec![a, b] };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, 7, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = read_jsonl(&text).unwrap();
        assert!(back.iter().all(|(i, _)| *i == 7));
        let steps: Vec<TraceStep> = back.into_iter().map(|(_, s)| s).collect();
        assert_eq!(steps, trace.steps);
    }

    #[test]
    fn acceptance_rate_counts_decisions() {
        let g = EulerGrasp::new(Vector3::zeros(), Vector3::zeros());
        let mut steps: Vec<TraceStep> = (0..4).map(|i| TraceStep::new(i, &g, 0.5, vec![])).collect();
        steps[0].accepted = Some(true);
        steps[1].accepted = Some(false);
        steps[2].accepted = Some(true);
        let t = RefinementTrace { steps };
        assert!((t.acceptance_rate().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }
}
